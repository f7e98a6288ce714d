#!/usr/bin/env python3
"""Build the demo git workspace (large CSV, one data commit, two local bare
remotes) so the seven-step dialogue can be driven interactively.

Usage:
    python scripts/make_demo_workspace.py --out peros_home/workspaces/happydog
    peros serve &
    # then create a session bound to that path and chat via the web client
"""

import argparse
import subprocess
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from tests.conftest import make_fixture_repo


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="peros_home/workspaces")
    ap.add_argument("--csv-mb", type=float, default=10.5)
    args = ap.parse_args()
    parent = Path(args.out)
    parent.mkdir(parents=True, exist_ok=True)
    if (parent / "happydog").exists():
        raise SystemExit(f"{parent / 'happydog'} already exists")
    repo = make_fixture_repo(parent, csv_mb=args.csv_mb)
    branches = subprocess.run(
        ["git", "-C", str(repo), "ls-remote", "--heads", "github"],
        capture_output=True, text=True).stdout
    print(f"workspace ready: {repo}")
    print(f"github branches:\n{branches}")


if __name__ == "__main__":
    main()
