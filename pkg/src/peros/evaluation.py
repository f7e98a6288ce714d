"""Pipeline quality evaluation and retraining-policy decisions.

Accuracy is the fraction of generated steps that match gold steps, recall the
fraction of gold steps recovered; matching is a longest common subsequence
over (api, normalized args) identities so step order counts but insertions
are not penalized twice. A small smoothed n-gram overlap stands in for
heavier linguistic metrics - it is a regression proxy, not a benchmark.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Protocol, Sequence

from .errors import EmptyCorpus, EmptyText, GrammarLoadError
from .model import ApiRegistry

# ---------------------------------------------------------------------------
# Corpus
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GoldExample:
    request: str
    gold_steps: tuple[tuple[str, Mapping[str, Any]], ...]
    context: tuple[str, ...] = ()
    gold_reply: str | None = None

    def to_json(self) -> dict:
        return {
            "request": self.request,
            "context": list(self.context),
            "gold_steps": [{"api": a, "args": dict(args)} for a, args in self.gold_steps],
            "gold_reply": self.gold_reply,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "GoldExample":
        return cls(
            request=doc["request"],
            context=tuple(doc.get("context", ())),
            gold_steps=tuple(
                (s["api"], dict(s.get("args", {}))) for s in doc.get("gold_steps", ())
            ),
            gold_reply=doc.get("gold_reply"),
        )


@dataclass(frozen=True)
class Corpus:
    corpus_id: str
    registry_version: int
    examples: tuple[GoldExample, ...]

    @classmethod
    def load(cls, path: str | Path) -> "Corpus":
        lines = [l for l in Path(path).read_text().splitlines() if l.strip()]
        if not lines:
            raise EmptyCorpus(f"no examples in {path}")
        header = json.loads(lines[0])
        examples = tuple(GoldExample.from_json(json.loads(l)) for l in lines[1:])
        return cls(
            corpus_id=header.get("corpus_id", Path(path).stem),
            registry_version=int(header.get("registry_version", 0)),
            examples=examples,
        )

    def save(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({
                "corpus_id": self.corpus_id,
                "registry_version": self.registry_version,
            }) + "\n")
            for ex in self.examples:
                fh.write(json.dumps(ex.to_json()) + "\n")


class Pipeline(Protocol):
    """interpret -> compile pipeline under evaluation."""

    def plan_steps(self, request: str, context: Sequence[str]) -> list[tuple[str, dict]]:
        ...

    def render_reply(self, steps: Sequence[tuple[str, Mapping[str, Any]]]) -> str:
        ...


# ---------------------------------------------------------------------------
# Step matching
# ---------------------------------------------------------------------------

def _identity(step: tuple[str, Mapping[str, Any]]) -> tuple:
    api, args = step
    return (api, tuple(sorted((k, repr(v)) for k, v in args.items())))


def lcs_matches(generated: Sequence, gold: Sequence) -> list[tuple[int, int]]:
    """Index pairs of a longest common subsequence over step identities."""
    a = [_identity(s) for s in generated]
    b = [_identity(s) for s in gold]
    n, m = len(a), len(b)
    dp = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        for j in range(m - 1, -1, -1):
            if a[i] == b[j]:
                dp[i][j] = dp[i + 1][j + 1] + 1
            else:
                dp[i][j] = max(dp[i + 1][j], dp[i][j + 1])
    pairs = []
    i = j = 0
    while i < n and j < m:
        if a[i] == b[j]:
            pairs.append((i, j))
            i += 1
            j += 1
        elif dp[i + 1][j] >= dp[i][j + 1]:
            i += 1
        else:
            j += 1
    return pairs


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalReport:
    corpus_id: str
    registry_version: int
    accuracy: float
    recall: float
    exact_match_rate: float
    linguistic: float
    matched_steps: int
    generated_steps: int
    gold_steps: int
    per_api: Mapping[str, Mapping[str, int]] = field(default_factory=dict)
    created_ms: int = 0

    def check(self) -> None:
        for name in ("accuracy", "recall", "exact_match_rate", "linguistic"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name}={v} outside [0,1]")

    def to_json(self) -> dict:
        return {
            "corpus_id": self.corpus_id,
            "registry_version": self.registry_version,
            "accuracy": self.accuracy,
            "recall": self.recall,
            "exact_match_rate": self.exact_match_rate,
            "linguistic": self.linguistic,
            "matched_steps": self.matched_steps,
            "generated_steps": self.generated_steps,
            "gold_steps": self.gold_steps,
            "per_api": {k: dict(v) for k, v in self.per_api.items()},
            "created_ms": self.created_ms,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "EvalReport":
        return cls(
            corpus_id=doc["corpus_id"],
            registry_version=int(doc["registry_version"]),
            accuracy=float(doc["accuracy"]),
            recall=float(doc["recall"]),
            exact_match_rate=float(doc["exact_match_rate"]),
            linguistic=float(doc["linguistic"]),
            matched_steps=int(doc["matched_steps"]),
            generated_steps=int(doc["generated_steps"]),
            gold_steps=int(doc["gold_steps"]),
            per_api={k: dict(v) for k, v in doc.get("per_api", {}).items()},
            created_ms=int(doc.get("created_ms", 0)),
        )


def evaluate(corpus: Corpus, pipeline: Pipeline) -> EvalReport:
    """Score a pipeline on a gold corpus. Deterministic; failures to produce
    any steps for an example count as zero generated steps."""
    if not corpus.examples:
        raise EmptyCorpus(corpus.corpus_id)
    matched = generated = gold_total = exact = 0
    per_api: dict[str, dict[str, int]] = {}
    ling_scores: list[float] = []
    for ex in corpus.examples:
        try:
            gen = pipeline.plan_steps(ex.request, ex.context)
        except Exception:
            gen = []
        pairs = lcs_matches(gen, ex.gold_steps)
        matched += len(pairs)
        generated += len(gen)
        gold_total += len(ex.gold_steps)
        if [_identity(s) for s in gen] == [_identity(s) for s in ex.gold_steps]:
            exact += 1
        gold_matched = {j for _, j in pairs}
        for j, (api, _) in enumerate(ex.gold_steps):
            bucket = per_api.setdefault(api, {"gold": 0, "generated": 0, "matched": 0})
            bucket["gold"] += 1
            if j in gold_matched:
                bucket["matched"] += 1
        for api, _ in gen:
            per_api.setdefault(api, {"gold": 0, "generated": 0, "matched": 0})["generated"] += 1
        if ex.gold_reply:
            try:
                reply = pipeline.render_reply(gen)
                ling_scores.append(linguistic_score(reply, ex.gold_reply))
            except EmptyText:
                ling_scores.append(0.0)
    report = EvalReport(
        corpus_id=corpus.corpus_id,
        registry_version=corpus.registry_version,
        accuracy=matched / generated if generated else 0.0,
        recall=matched / gold_total if gold_total else 0.0,
        exact_match_rate=exact / len(corpus.examples),
        linguistic=sum(ling_scores) / len(ling_scores) if ling_scores else 1.0,
        matched_steps=matched,
        generated_steps=generated,
        gold_steps=gold_total,
        per_api=per_api,
        created_ms=int(time.time() * 1000),
    )
    report.check()
    return report


# ---------------------------------------------------------------------------
# Linguistic overlap proxy
# ---------------------------------------------------------------------------

def _ngrams(tokens: list[str], n: int) -> dict[tuple, int]:
    out: dict[tuple, int] = {}
    for i in range(len(tokens) - n + 1):
        key = tuple(tokens[i:i + n])
        out[key] = out.get(key, 0) + 1
    return out


def linguistic_score(candidate: str, reference: str) -> float:
    """Smoothed geometric mean of 1-4-gram precision with a brevity penalty.

    Unigram precision is unsmoothed so fully disjoint texts score exactly 0;
    higher orders get add-one smoothing. Deterministic by construction.
    """
    cand = candidate.split()
    ref = reference.split()
    if not cand or not ref:
        raise EmptyText("both texts must be non-empty")
    precisions = []
    for n in range(1, 5):
        cg = _ngrams(cand, n)
        rg = _ngrams(ref, n)
        total = sum(cg.values())
        overlap = sum(min(count, rg.get(g, 0)) for g, count in cg.items())
        if n == 1:
            if overlap == 0:
                return 0.0
            precisions.append(overlap / total)
        else:
            precisions.append((overlap + 1) / (total + 1))
    bp = 1.0 if len(cand) >= len(ref) else math.exp(1 - len(ref) / len(cand))
    return bp * math.prod(precisions) ** 0.25


# ---------------------------------------------------------------------------
# Retraining policy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RetrainPolicy:
    window: int = 5
    min_accuracy: float = 0.9
    new_api_trigger: int = 3
    cooldown: int = 2

    def check(self) -> None:
        if not (0.0 < self.min_accuracy <= 1.0):
            raise ValueError("min_accuracy must be in (0, 1]")
        if self.cooldown < 0:
            raise ValueError("cooldown must be >= 0")
        if self.window < 1 or self.new_api_trigger < 1:
            raise ValueError("window and new_api_trigger must be >= 1")


@dataclass
class RetrainState:
    registry_version_at_retrain: int = 0
    eval_count_at_retrain: int = 0

    def to_json(self) -> dict:
        return {
            "registry_version_at_retrain": self.registry_version_at_retrain,
            "eval_count_at_retrain": self.eval_count_at_retrain,
        }


@dataclass(frozen=True)
class Decision:
    retrain: bool
    reason: str  # "accuracy" | "new-apis" | "cooldown" | "healthy"


def should_retrain(
    history: Sequence[EvalReport],
    policy: RetrainPolicy,
    registry: ApiRegistry,
    state: RetrainState,
) -> Decision:
    """Retrain when rolling accuracy sinks below threshold or enough new APIs
    landed since the last retrain - but only once the cooldown elapsed."""
    policy.check()
    if len(history) - state.eval_count_at_retrain < policy.cooldown and \
            state.eval_count_at_retrain > 0:
        return Decision(False, "cooldown")
    new_apis = registry.version - state.registry_version_at_retrain
    if new_apis >= policy.new_api_trigger:
        return Decision(True, "new-apis")
    if history:
        window = history[-policy.window:]
        mean = sum(r.accuracy for r in window) / len(window)
        if mean < policy.min_accuracy:
            return Decision(True, "accuracy")
    return Decision(False, "healthy")


class LanguageStack(Protocol):
    """Reloadable grammar + verb table bundle (the rule 'model')."""

    def reload(self, version_dir: str | Path) -> None:
        ...


def apply_retrain(
    kind: str,
    stack: LanguageStack | None = None,
    version_dir: str | Path | None = None,
    ledger_path: str | Path | None = None,
    request_id: str = "",
    corpus_ref: str = "",
) -> dict:
    """Apply a retrain decision.

    rule backend: atomically reload grammar + mapping tables at the given
    version (a corrupt file leaves the previous tables in place).
    llm backend: append a fine-tune job record to the ledger; no training
    happens here.
    """
    if kind == "rule":
        if stack is None or version_dir is None:
            raise ValueError("rule retrain needs a stack and version_dir")
        stack.reload(version_dir)  # GrammarLoadError propagates, stack unchanged
        return {"kind": "rule", "reloaded": str(version_dir)}
    if kind == "llm":
        if ledger_path is None:
            raise ValueError("llm retrain needs a ledger path")
        record = {
            "request_id": request_id,
            "corpus_ref": corpus_ref,
            "created_ms": int(time.time() * 1000),
        }
        Path(ledger_path).parent.mkdir(parents=True, exist_ok=True)
        with open(ledger_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record) + "\n")
        return {"kind": "llm", "record": record}
    raise ValueError(f"unknown retrain kind {kind!r}")


class EvalManager:
    """Append-only evaluation history plus retrain bookkeeping."""

    def __init__(self, policy: RetrainPolicy = RetrainPolicy(),
                 reports_dir: str | Path | None = None):
        self.policy = policy
        self.history: list[EvalReport] = []
        self.state = RetrainState()
        self.reports_dir = Path(reports_dir) if reports_dir else None

    def record(self, report: EvalReport) -> None:
        self.history.append(report)
        if self.reports_dir:
            self.reports_dir.mkdir(parents=True, exist_ok=True)
            name = f"eval-{len(self.history):04d}-{report.corpus_id}.json"
            (self.reports_dir / name).write_text(
                json.dumps(report.to_json(), indent=2) + "\n")

    def latest(self) -> EvalReport | None:
        return self.history[-1] if self.history else None

    def decide(self, registry: ApiRegistry) -> Decision:
        return should_retrain(self.history, self.policy, registry, self.state)

    def mark_retrained(self, registry: ApiRegistry) -> None:
        self.state = RetrainState(
            registry_version_at_retrain=registry.version,
            eval_count_at_retrain=len(self.history),
        )
