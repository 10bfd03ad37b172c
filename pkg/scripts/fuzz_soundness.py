#!/usr/bin/env python3
"""Fuzz the detector for soundness over random models and transform stacks.

Usage: python scripts/fuzz_soundness.py [--runs N] [--seed S] [--max-size N]

Each run draws a random system model and a random stack of concealment
transforms, scans it, and checks every reported anomaly against ground
truth (a confirmed finding must point at something the stack actually did).
Exit 1 if any run produced an unsound report.
"""
from __future__ import annotations

import argparse
import random
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from ghostscan.model import generate_model  # noqa: E402
from ghostscan.scan import ScanConfig, full_scan  # noqa: E402
from ghostscan.simview import SimulatedView  # noqa: E402
from ghostscan.testing import check_report_soundness, random_transform_stack  # noqa: E402


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--runs", type=int, default=100)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--max-size", type=int, default=400)
    args = ap.parse_args()

    rng = random.Random(args.seed)
    t0 = time.time()
    bad = 0
    for i in range(args.runs):
        model = generate_model(seed=rng.randrange(2**32), size=rng.randint(1, args.max_size))
        transforms = random_transform_stack(model, rng)
        view = SimulatedView(model, transforms)
        report = full_scan(view, ScanConfig(budget_override=True))
        violations = check_report_soundness(report, model, transforms)
        if violations:
            bad += 1
            names = ", ".join(type(t).__name__ for t in transforms) or "none"
            print(f"run {i}: UNSOUND under [{names}]")
            for v in violations:
                print(f"  {v}")
    print(f"{args.runs} runs in {time.time() - t0:.1f}s; {bad} unsound")
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
