#!/usr/bin/env python3
"""Write the workload fixture traces as CSV files for the `peros sim` CLI.

Usage: python scripts/gen_traces.py [--out traces/]
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from peros.storage.trace import gen_mixed, gen_random, gen_sequential, save_trace


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="traces")
    args = ap.parse_args()
    out = Path(args.out)

    fixtures = {
        "sequential.csv": gen_sequential(runs=200, run_len=64, files=4, seed=0),
        "random.csv": gen_random(n=4000, files=4, seed=0, run_fraction=0.05),
        "mixed.csv": gen_mixed(n=4000, files=6, seed=0),
    }
    for name, trace in fixtures.items():
        save_trace(trace, out / name)
        print(f"{out / name}: {len(trace)} records")


if __name__ == "__main__":
    main()
