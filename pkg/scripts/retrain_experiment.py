#!/usr/bin/env python3
"""Degrade-then-recover curve for the rule backend.

Grows the registry by the three extension APIs, merges the extension corpus
in, and prints accuracy/recall per evaluation round together with the
retraining decision - the performance dip and the post-reload recovery are
visible in the table.

Usage: python scripts/retrain_experiment.py
"""

import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from peros.config import data_path
from peros.evaluation import (
    Corpus,
    EvalManager,
    RetrainPolicy,
    apply_retrain,
    evaluate,
)
from peros.model import ApiRegistry, ApiSpec
from peros.pipeline import LanguageStack, RulePipeline


def main() -> None:
    registry = ApiRegistry.load(data_path("registry.json"))
    stack = LanguageStack(data_path("grammar", "v1"))
    manager = EvalManager(policy=RetrainPolicy())
    manager.mark_retrained(registry)

    basic = Corpus.load(data_path("corpus", "basic.ndjson"))
    extension = Corpus.load(data_path("corpus", "extension.ndjson"))
    merged = Corpus(corpus_id="merged", registry_version=registry.version,
                    examples=basic.examples + extension.examples)

    print(f"{'round':<28} {'acc':>6} {'recall':>7}  decision")

    def round_(name, corpus, reg):
        report = evaluate(corpus, RulePipeline(stack, reg))
        manager.record(report)
        decision = manager.decide(reg)
        print(f"{name:<28} {report.accuracy:>6.3f} {report.recall:>7.3f}  "
              f"retrain={decision.retrain} ({decision.reason})")
        return decision

    round_("baseline (shipped corpus)", basic, registry)

    grown = registry
    for doc in json.loads(data_path("registry_ext.json").read_text())["apis"]:
        grown = grown.with_api(ApiSpec.from_json(doc))
    print(f"-- registered 3 new APIs (registry v{registry.version} -> "
          f"v{grown.version}), merged 15 new gold examples --")

    decision = round_("degraded (no retrain yet)", merged, grown)
    if decision.retrain:
        apply_retrain("rule", stack=stack,
                      version_dir=data_path("grammar", "v2"))
        manager.mark_retrained(grown)
        print(f"-- applied retrain: grammar {stack.version} --")
    round_("recovered (after reload)", merged, grown)


if __name__ == "__main__":
    main()
