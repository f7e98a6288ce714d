#!/usr/bin/env python3
"""Author the frozen gold corpora.

Every example is built from a clause template together with its expected
(api, args) steps written out independently of the parser; before freezing,
each example is checked against the live rule pipeline so the shipped corpus
is known-good at authoring time. Requests mix single clauses with two-clause
coordinations.

Usage: python scripts/gen_corpus.py [--out src/peros/data/corpus]
"""

from __future__ import annotations

import argparse
import random
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from peros.config import data_path
from peros.evaluation import Corpus, GoldExample
from peros.model import ApiRegistry, ApiSpec
from peros.pipeline import LanguageStack, RulePipeline, render_reply

FILE_TYPES = ["CSV", "log", "json", "parquet", "txt", "bin"]
SIZES = [("10 MB", 10_000_000), ("5 KB", 5_000), ("2 GB", 2_000_000_000),
         ("1 MiB", 1_048_576), ("750 KB", 750_000)]
PATHS = ["reports", "data/raw", "notes.txt", "build.log", "src/main.py",
         "archive", "inbox/mail.txt", "todo.md"]
GLOBS = ["*.log", "*.tmp", "src/*.py", "data/*.csv", "*.bak"]
REMOTES = {"github": ["main", "dev"], "bitbucket": ["master"]}
MESSAGES = ["fix parser", "update docs", "wip", "tidy imports", "add tests"]
WORDS = ["hello world", "draft text", "todo: revisit", "ok"]
FREQS = ["daily", "weekly", "monthly"]


def single_clause_pool(rng: random.Random) -> list[tuple[str, list]]:
    pool: list[tuple[str, list]] = []

    pool.append(("undo the last commit", [("git.undo_last_commit", {})]))
    pool.append(("undo the most recent commit",
                 [("git.undo_last_commit", {})]))
    pool.append(("amend the last commit without a new message",
                 [("git.commit_amend", {"no_edit": True})]))
    pool.append(("augment the previous commit without a new message",
                 [("git.commit_amend", {"no_edit": True})]))
    pool.append(("git status", [("git.status", {})]))
    pool.append(("show the git status", [("git.status", {})]))
    pool.append(("list files", [("fs.list", {"path": "."})]))

    for ft in FILE_TYPES:
        for text, size in rng.sample(SIZES, 2):
            pool.append((
                f"remove all the {ft} files larger than {text} from the git cache",
                [("git.rm_cached", {"pattern": f"*.{ft.lower()}", "min_size": size})],
            ))
    for ft in FILE_TYPES[:3]:
        pool.append((
            f"remove all {ft} files from the git cache",
            [("git.rm_cached", {"pattern": f"*.{ft.lower()}"})],
        ))

    for g in GLOBS:
        dst = rng.choice(["archive", "backup", "old"])
        pool.append((f"move {g} to {dst}", [("fs.move", {"src": g, "dst": dst})]))
        pool.append((f"copy {g} to {dst}", [("fs.copy", {"src": g, "dst": dst})]))

    for p in PATHS[:5]:
        pool.append((f"ignore {p} in git", [("git.ignore", {"path": p})]))
        pool.append((f"list files in {p}", [("fs.list", {"path": p})]))
        pool.append((f"read {p}", [("fs.read", {"path": p})]))
        pool.append((f"create a directory called {p}", [("fs.mkdir", {"path": p})]))

    for g in GLOBS[:4]:
        suffix = rng.choice(["_old", "_bak", "_v2"])
        pool.append((f"add a suffix {suffix} to files matching {g}",
                     [("fs.rename_suffix", {"pattern": g, "suffix": suffix})]))
        pool.append((f"stage {g}", [("git.add", {"pattern": g})]))

    for w in WORDS:
        p = rng.choice(PATHS)
        pool.append((f'write "{w}" to {p}',
                     [("fs.write", {"path": p, "content": w})]))
        pool.append((f'append "{w}" to {p}',
                     [("fs.append", {"path": p, "content": w})]))

    for m in MESSAGES:
        pool.append((f'commit with message "{m}"',
                     [("git.commit", {"message": m})]))

    for ft in FILE_TYPES[:4]:
        pool.append((f"delete all the {ft} files",
                     [("fs.remove", {"pattern": f"*.{ft.lower()}"})]))
        text, size = rng.choice(SIZES)
        pool.append((
            f"delete all {ft} files larger than {text}",
            [("fs.remove", {"pattern": f"*.{ft.lower()}", "min_size": size})],
        ))

    for remote, branches in REMOTES.items():
        for br in branches:
            pool.append((f"push to {remote} branch {br}",
                         [("git.push", {"remote": remote, "branch": br})]))
            pool.append((f"force push to {remote} branch {br}",
                         [("git.push", {"remote": remote, "branch": br,
                                        "force": True})]))

    for p in ["docs", "photos", "projects/thesis"]:
        for freq in FREQS:
            pool.append((
                f"enroll {p} in {freq} backups",
                [("backup.add", {"path": p, "label": "important"}),
                 ("backup.schedule", {"path": p, "frequency": freq})],
            ))
        pool.append((
            f"enroll {p} in weekly backups on local storage",
            [("backup.add", {"path": p, "label": "important"}),
             ("backup.schedule", {"path": p, "frequency": "weekly"}),
             ("storage.pin_local", {"path": p})],
        ))
    return pool


def extension_pool() -> list[tuple[str, list]]:
    pool = []
    for p in PATHS:
        pool.append((f"show disk usage of {p}", [("sys.disk_usage", {"path": p})]))
        pool.append((f"checksum {p}", [("fs.checksum", {"path": p})]))
    for i, g in enumerate(GLOBS):
        pool.append((f"zip {g} into bundle{i}.zip",
                     [("archive.zip", {"pattern": g, "dst": f"bundle{i}.zip"})]))
    return pool


def build_examples(rng, pool, n_single, n_double):
    rng.shuffle(pool)
    singles = pool[:n_single]
    examples = []
    for text, steps in singles:
        examples.append(GoldExample(
            request=text,
            gold_steps=tuple((a, dict(args)) for a, args in steps),
            gold_reply=render_reply(steps),
        ))
    rest = pool[n_single:]
    for i in range(n_double):
        (t1, s1), (t2, s2) = rng.sample(rest, 2)
        joiner = rng.choice([", ", " and "])
        text = t1 + joiner + t2
        steps = list(s1) + list(s2)
        examples.append(GoldExample(
            request=text,
            gold_steps=tuple((a, dict(args)) for a, args in steps),
            gold_reply=render_reply(steps),
        ))
    rng.shuffle(examples)
    return examples


def verify(examples, stack_dir, registry) -> None:
    pipeline = RulePipeline(LanguageStack(stack_dir), registry)
    for ex in examples:
        got = pipeline.plan_steps(ex.request)
        want = [(a, dict(args)) for a, args in ex.gold_steps]
        if got != want:
            raise SystemExit(
                f"authoring check failed for {ex.request!r}:\n"
                f"  pipeline: {got}\n  gold:     {want}")


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="src/peros/data/corpus")
    args = ap.parse_args()
    out = Path(args.out)

    registry = ApiRegistry.load(data_path("registry.json"))
    rng = random.Random(20240810)

    basic = build_examples(rng, single_clause_pool(rng), n_single=80, n_double=20)
    verify(basic, data_path("grammar", "v1"), registry)
    corpus = Corpus(corpus_id="basic-100", registry_version=registry.version,
                    examples=tuple(basic))
    corpus.save(out / "basic.ndjson")

    ext_registry = registry
    import json
    for doc in json.loads(data_path("registry_ext.json").read_text())["apis"]:
        ext_registry = ext_registry.with_api(ApiSpec.from_json(doc))

    ext_pool = extension_pool()
    rng.shuffle(ext_pool)
    ext_items = []
    for i in range(6):  # two-clause examples weigh the new APIs enough to
        (t1, s1), (t2, s2) = ext_pool[2 * i], ext_pool[2 * i + 1]  # dent recall
        ext_items.append((t1 + " and " + t2, list(s1) + list(s2)))
    ext_items.extend(ext_pool[12:21])
    extension = [
        GoldExample(request=t,
                    gold_steps=tuple((a, dict(ar)) for a, ar in s),
                    gold_reply=render_reply(s))
        for t, s in ext_items
    ]
    verify(extension, data_path("grammar", "v2"), ext_registry)
    ext_corpus = Corpus(corpus_id="extension-15",
                        registry_version=ext_registry.version,
                        examples=tuple(extension))
    ext_corpus.save(out / "extension.ndjson")

    total_gold = sum(len(e.gold_steps) for e in basic)
    rm_gold = sum(1 for e in basic for a, _ in e.gold_steps if a == "git.rm_cached")
    ext_gold = sum(len(e.gold_steps) for e in extension)
    print(f"basic: {len(basic)} examples, {total_gold} gold steps "
          f"({rm_gold} rm_cached)")
    print(f"extension: {len(extension)} examples, {ext_gold} gold steps")
    print(f"recall after extension without retrain: "
          f"{total_gold / (total_gold + ext_gold):.4f}")
    print(f"recall after rm-cached rule removal: "
          f"{1 - rm_gold / total_gold:.4f}")


if __name__ == "__main__":
    main()
