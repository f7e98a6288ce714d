#!/usr/bin/env python3
"""Adaptive-storage benchmark table: tuner vs every fixed window, plus the
tiering policy against its offline optimum and learned-index stats.

Usage: python scripts/storage_experiment.py [--seed N]
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from peros.storage.readahead import DEFAULT_CANDIDATES, score_fixed_window
from peros.storage.simulate import SimConfig, simulate
from peros.storage.tiering import (
    TierConfig,
    offline_optimal_tiering,
    online_tiering_cost,
)
from peros.storage.trace import gen_mixed, gen_random, gen_sequential, make_trace


def prefetch_table(name, trace, seed):
    print(f"\n== {name} ({len(trace)} records) ==")
    print(f"{'policy':<14} {'score':>10} {'useful':>8} {'wasted':>8}")
    for w in DEFAULT_CANDIDATES:
        score, useful, wasted = score_fixed_window(trace, w)
        print(f"fixed-{w:<8} {score:>10.1f} {useful:>8} {wasted:>8}")
    report = simulate(trace, SimConfig(seed=seed))
    print(f"{'tuner':<14} {report.prefetch_score:>10.1f} "
          f"{'':>8} {report.wasted_blocks:>8}   "
          f"(converged window {report.chosen_window}, "
          f"hit ratio {report.prefetch_hit_ratio:.3f})")
    print(f"index: {report.index_segments} segments, "
          f"{report.index_probes_mean:.2f} probes/lookup, "
          f"{report.index_bytes}B vs flat {report.flat_table_bytes}B")


def tiering_table():
    cfg = TierConfig()
    print("\n== tiering: online policy vs offline optimum ==")
    print(f"{'instance':<12} {'online':>8} {'optimal':>8} {'ratio':>7}")
    shapes = [(120, 3), (150, 2), (100, 5), (140, 1), (110, 4)]
    for i, (hot_len, cold_files) in enumerate(shapes):
        rows, ts = [], 0
        for b in range(hot_len):
            rows.append((ts, 0, b, "read")); ts += 1
        for c in range(cold_files):
            rows.append((ts, c + 1, 0, "read")); ts += 1
            rows.append((ts, c + 1, 1, "read")); ts += 1
        trace = make_trace(rows)
        online = online_tiering_cost(trace, cfg)
        optimal = offline_optimal_tiering(trace, cfg)
        print(f"instance-{i:<3} {online:>8} {optimal:>8} {online / optimal:>7.3f}")


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    prefetch_table("sequential", gen_sequential(runs=200, run_len=64, files=4,
                                                seed=args.seed), args.seed)
    prefetch_table("random", gen_random(n=4000, files=4, seed=args.seed,
                                        run_fraction=0.05), args.seed)
    prefetch_table("mixed", gen_mixed(n=4000, files=6, seed=args.seed), args.seed)
    tiering_table()


if __name__ == "__main__":
    main()
