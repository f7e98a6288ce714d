"""Access traces: the input to every storage simulation.

CSV on disk (header ``timestamp_ms,file_id,block,op``), tuples in memory.
Blocks are 4096 bytes; file names are pre-resolved to integer ids before
traces are recorded, keeping name handling out of the learning loop.
"""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from ..errors import TraceParseError

BLOCK_SIZE = 4096
OPS = ("read", "write", "create")
CSV_HEADER = ["timestamp_ms", "file_id", "block", "op"]


@dataclass(frozen=True)
class AccessRecord:
    timestamp_ms: int
    file_id: int
    block: int
    op: str


@dataclass(frozen=True)
class AccessTrace:
    records: tuple[AccessRecord, ...]

    def check(self) -> None:
        last = None
        for r in self.records:
            if r.block < 0:
                raise TraceParseError(f"negative block: {r}")
            if r.op not in OPS:
                raise TraceParseError(f"bad op: {r.op!r}")
            if last is not None and r.timestamp_ms < last:
                raise TraceParseError("timestamps must be non-decreasing")
            last = r.timestamp_ms

    def __len__(self) -> int:
        return len(self.records)

    def file_ids(self) -> list[int]:
        return sorted({r.file_id for r in self.records})

    def reads(self) -> list[AccessRecord]:
        return [r for r in self.records if r.op == "read"]


def make_trace(rows: Iterable[tuple[int, int, int, str]]) -> AccessTrace:
    trace = AccessTrace(tuple(AccessRecord(*row) for row in rows))
    trace.check()
    return trace


def load_trace(path: str | Path) -> AccessTrace:
    try:
        with open(path, "r", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != CSV_HEADER:
                raise TraceParseError(f"expected header {CSV_HEADER}, got {header}")
            rows = []
            for line in reader:
                if len(line) != 4:
                    raise TraceParseError(f"bad row: {line}")
                rows.append((int(line[0]), int(line[1]), int(line[2]), line[3]))
    except (OSError, ValueError) as exc:
        raise TraceParseError(str(exc))
    return make_trace(rows)


def save_trace(trace: AccessTrace, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in trace.records:
            writer.writerow([r.timestamp_ms, r.file_id, r.block, r.op])


# ---------------------------------------------------------------------------
# Workload generators (deterministic given seed)
# ---------------------------------------------------------------------------

def gen_sequential(runs: int = 200, run_len: int = 64, files: int = 4,
                   seed: int = 0) -> AccessTrace:
    """Sequential-read workload: back-to-back runs of consecutive blocks."""
    rng = random.Random(seed)
    rows = []
    ts = 0
    for _ in range(runs):
        fid = rng.randrange(files)
        start = rng.randrange(0, 1 << 20)
        for i in range(run_len):
            rows.append((ts, fid, start + i, "read"))
            ts += 1
    return make_trace(rows)


def gen_random(n: int = 4000, files: int = 4, max_block: int = 1 << 20,
               seed: int = 0, run_fraction: float = 0.0,
               run_len: int = 4) -> AccessTrace:
    """Random-dominated reads. ``run_fraction`` > 0 sprinkles in short
    sequential runs, the incidental locality real random workloads show."""
    rng = random.Random(seed)
    rows: list[tuple[int, int, int, str]] = []
    ts = 0
    while len(rows) < n:
        if run_fraction and rng.random() < run_fraction:
            fid = rng.randrange(files)
            start = rng.randrange(max_block)
            for i in range(run_len):
                rows.append((ts, fid, start + i, "read"))
                ts += 1
        else:
            rows.append((ts, rng.randrange(files), rng.randrange(max_block), "read"))
            ts += 1
    return make_trace(rows[:n])


def gen_mixed(n: int = 4000, files: int = 6, seed: int = 0,
              sequential_fraction: float = 0.7) -> AccessTrace:
    """Read/write mix: sequential bursts interleaved with random accesses."""
    rng = random.Random(seed)
    rows = []
    ts = 0
    while len(rows) < n:
        if rng.random() < sequential_fraction:
            fid = rng.randrange(files)
            start = rng.randrange(0, 1 << 18)
            for i in range(rng.randrange(8, 48)):
                op = "read" if rng.random() < 0.8 else "write"
                rows.append((ts, fid, start + i, op))
                ts += 1
        else:
            rows.append((ts, rng.randrange(files), rng.randrange(1 << 18), "read"))
            ts += 1
    return make_trace(rows[:n])
