#!/usr/bin/env python3
"""Run every scenario and print the observed detection matrix.

Usage: python scripts/run_matrix.py [scenario-dir] [--workers N]

One row per scenario (DET / SUS / - per column); rows whose observed cells
diverge from the scenario's expectations are marked MISMATCH, and the exit
code reflects whether the whole suite matched.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from ghostscan.scenario import format_matrix, parse_scenario, run_scenario  # noqa: E402


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("scenario_dir", nargs="?", default="scenarios")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    files = sorted(Path(args.scenario_dir).glob("*.yaml"))
    if not files:
        print(f"no scenario files under {args.scenario_dir}", file=sys.stderr)
        return 2

    t0 = time.time()
    results = []
    for path in files:
        sc = parse_scenario(path.read_text(encoding="utf-8"), name_hint=path.stem)
        results.append(run_scenario(sc, worker_count=args.workers))

    print(format_matrix(results), end="")
    mismatches = sum(1 for r in results if not r.ok)
    print(f"\n{len(results)} scenarios in {time.time() - t0:.1f}s; "
          f"{mismatches} mismatching")
    return 1 if mismatches else 0


if __name__ == "__main__":
    sys.exit(main())
