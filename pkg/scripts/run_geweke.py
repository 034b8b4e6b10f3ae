"""Joint-distribution check: prior draws of the global parameters against the successive-conditional chain.

    python scripts/run_geweke.py --iterations 20000
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

from criteria import geweke_z_scores  # noqa: E402


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--iterations", type=int, default=20_000)
    p.add_argument("--seed", type=int, default=6)
    args = p.parse_args()
    z, elapsed = geweke_z_scores(args.iterations, args.seed)
    for name, value in z.items():
        print(f"{name:>12s}  z = {value:+.2f}")
    print(f"max |z| {max(abs(v) for v in z.values()):.2f}; {elapsed:.0f} s")


if __name__ == "__main__":
    main()
