"""Train desk students under each channel policy on phantoms and compare them.

    python scripts/desk_policies.py --workdir runs/desk --seeds 0 1 2
    python scripts/desk_policies.py --set student.epochs=12

Writes ``<workdir>/desk_summary.json`` and prints mean test DICE / volume
accuracy per policy, the fraction of error voxels within 2 voxels of the
boundary, and per-seed volume accuracy.
"""
import argparse
import logging

from hasaseg.experiment import format_summary, run_desk


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workdir", default="runs/desk")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    summary = run_desk(args.workdir, args.seeds, args.overrides)
    print(format_summary(summary), end="")


if __name__ == "__main__":
    main()
