#!/usr/bin/env python3
"""Rasterizer backward pass vs central finite differences, as a table.

Runs the gradient comparison over a batch of seeded random scenes and
prints the worst relative error per parameter class. Exits 1 if any
class misses the tolerance.
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from splatforge import gradcheck


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=20, help="number of scenes")
    ap.add_argument("--first-seed", type=int, default=0)
    ap.add_argument("--gaussians", type=int, default=8)
    ap.add_argument("--size", type=int, default=16, help="render width and height")
    args = ap.parse_args()

    t0 = time.monotonic()
    report = gradcheck.run_check(
        list(range(args.first_seed, args.first_seed + args.seeds)),
        n_gaussians=args.gaussians,
        size=args.size,
    )
    elapsed = time.monotonic() - t0

    print(f"{args.seeds} scenes, {args.gaussians} gaussians, "
          f"{args.size}x{args.size}, step {gradcheck.FD_STEP:g}, "
          f"tolerance {report['tolerance']:g}\n")
    print(f"{'class':<12} {'worst rel err':>14}")
    for cls in sorted(report["worst"]):
        flag = "" if report["worst"][cls] < report["tolerance"] else "  <-- FAIL"
        print(f"{cls:<12} {report['worst'][cls]:>14.3e}{flag}")
    print(f"\n{'PASS' if report['passed'] else 'FAIL'} in {elapsed:.1f}s")
    return 0 if report["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
