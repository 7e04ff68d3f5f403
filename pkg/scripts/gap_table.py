"""Print the sim-to-real gap table for the four reference rows (or your own).

    python scripts/gap_table.py
    python scripts/gap_table.py --row "my model segm" 0.71 0.20
"""

import argparse

from granbridge.evaluation import gap_report

REFERENCE_ROWS = [
    ("trunk bbox", 0.788, 0.225),
    ("trunk segm", 0.753, 0.147),
    ("whole tree bbox", 0.880, 0.066),
    ("whole tree segm", 0.688, 0.039),
]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--row", nargs=3, action="append", metavar=("NAME", "SIM", "REAL"),
                        help="extra row; may repeat")
    args = parser.parse_args()
    rows = REFERENCE_ROWS + [(n, float(s), float(r)) for n, s, r in (args.row or [])]
    width = max(len(r[0]) for r in rows)
    print(f"{'row':<{width}}  {'sim':>6}  {'real':>6}  {'abs gap':>7}  {'rel drop':>8}")
    for name, sim, real in rows:
        g = gap_report(sim, real)
        print(f"{name:<{width}}  {sim:6.3f}  {real:6.3f}  {g.absolute_gap:7.3f}  {g.relative_drop:7.1f}%")


if __name__ == "__main__":
    main()
