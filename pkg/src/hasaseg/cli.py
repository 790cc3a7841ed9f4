"""Command-line entry point: ``hasaseg {phantoms,prompts,guess,train,eval,power}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import commands
from .config import load_config
from .power import format_power_table, power_rows


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("-c", "--config", type=Path, help="YAML/JSON run configuration")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field, e.g. --set student.epochs=5")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("--run-dir", type=Path, help="explicit run directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hasaseg", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_ in [("phantoms", "write a synthetic phantom dataset and manifest"),
                        ("prompts", "write per-slice prompt files for external models"),
                        ("guess", "build raw and SDM guess volumes for every subject")]:
        _common(sub.add_parser(name, help=help_))

    p = sub.add_parser("train", help="train one student per channel policy")
    _common(p)
    p.add_argument("--resume", type=Path, help="train run directory to continue")

    p = sub.add_parser("eval", help="score students on the test split")
    _common(p)
    p.add_argument("--train-run", type=Path, help="train run directory holding <policy>/model.pt")
    p.add_argument("--checkpoint", action="append", default=[], metavar="POLICY=PATH")
    p.add_argument("--ground-truth", action="store_true",
                   help="score the reference labels against themselves")
    p.add_argument("--split", default="test")

    p = sub.add_parser("power", help="required measurement accuracy and simulated power")
    p.add_argument("--n-cases", type=int, required=True)
    p.add_argument("--n-controls", type=int, required=True)
    p.add_argument("--z", type=float, nargs="+", default=[1.96, 1.645])
    p.add_argument("--effect", type=float, default=0.10)
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", type=Path, help="also write the table as CSV")
    return parser


def _config(args):
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return load_config(args.config, overrides)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if args.command == "power":
        rows = power_rows(args.n_cases, args.n_controls, args.z, args.effect, args.trials, args.seed)
        sys.stdout.write(format_power_table(rows))
        if args.csv:
            import csv
            with open(args.csv, "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=list(rows[0]))
                w.writeheader()
                w.writerows(rows)
        return 0

    cfg = _config(args)
    run_dir = commands.make_run_dir(cfg, args.command, args.run_dir)
    if args.command == "phantoms":
        m = commands.cmd_phantoms(cfg)
        print(f"wrote {len(m['subjects'])} phantoms to {cfg.paths.data_root}")
    elif args.command == "prompts":
        commands.cmd_prompts(cfg)
    elif args.command == "guess":
        commands.cmd_guess(cfg)
    elif args.command == "train":
        hist = commands.cmd_train(cfg, run_dir, args.resume)
        for policy, h in hist.items():
            last = h.rows[-1]
            print(f"{policy}: epochs={len(h)} best_val_dice={max(h.column('val_dice')):.4f} "
                  f"last_train_loss={last['train_loss']:.4f}")
    elif args.command == "eval":
        ckpts = {}
        if args.train_run:
            ckpts.update(commands.find_checkpoints(args.train_run, cfg.policies))
        for item in args.checkpoint:
            policy, _, path = item.partition("=")
            ckpts[policy] = Path(path)
        report = commands.cmd_eval(cfg, run_dir, ckpts, args.ground_truth, args.split)
        sys.stdout.write((run_dir / "results.txt").read_text())
        for name, flagged in report["outliers"].items():
            print(f"outliers[{name}]: {', '.join(f['subject_id'] for f in flagged) or 'none'}")
    print(f"run directory: {run_dir}")
    return 0


def main(argv=None) -> None:
    try:
        code = run(argv)
    except (ValueError, FileNotFoundError, PermissionError, commands.ConfigMismatch) as exc:
        print(f"hasaseg: error: {exc}", file=sys.stderr)
        code = 1
    sys.exit(code)


if __name__ == "__main__":
    main()
