"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, readout, runner, tasks
from .errors import EsnError, UsageError
from .reservoir import run, sensitivities, spectral_norm
from .sampler import sample_esn

log = logging.getLogger("esn_feedback")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_experiment_flags(p):
    p.add_argument("--task", help="mg, ce or ced")
    p.add_argument("--nodes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--train", type=int)
    p.add_argument("--test", type=int)
    p.add_argument("--ced-file", dest="ced_file")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="esn-feedback", description="Echo state networks with trained state feedback.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run an ensemble experiment")
    p.add_argument("--config", help="flat key = value config file")
    _add_experiment_flags(p)
    p.add_argument("--members", type=int)
    p.add_argument("--feedback", action="store_const", const=True, default=None, help="also train the feedback gain")
    p.add_argument("--no-feedback", dest="feedback", action="store_const", const=False)
    p.add_argument("--eta", type=float)
    p.add_argument("--gd-steps", dest="gd_steps", type=int)
    p.add_argument("--out")
    p.add_argument("--threads", type=int)
    p.add_argument("--full-scale", dest="full_scale", action="store_const", const=True, default=None,
                   help=f"use {runner.FULL_SCALE_MEMBERS} members")

    p = sub.add_parser("gen-task", help="write a task dataset as CSV")
    _add_experiment_flags(p)
    p.add_argument("--out", help="output file (default: stdout)")

    p = sub.add_parser("diagnose", help="gradient certificate for one sampled reservoir")
    _add_experiment_flags(p)
    p.add_argument("--index", type=int, default=0, help="ensemble member index")

    p = sub.add_parser("lilliefors-table", help="regenerate Lilliefors critical values")
    p.add_argument("--sizes", default="10,20,30,50,100,200,280,500")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--replicates", type=int, default=analysis.LILLIEFORS_REPLICATES)
    p.add_argument("--seed", type=int, default=analysis.LILLIEFORS_SEED)
    p.add_argument("--out", help="output JSON file (default: stdout)")
    return parser


def _overrides(args, keys) -> dict:
    return {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}


_EXPERIMENT_KEYS = ("task", "nodes", "seed", "warmup", "train", "test", "ced_file")


def _cmd_run(args) -> int:
    file_values = runner.load_config_file(args.config) if args.config else {}
    keys = _EXPERIMENT_KEYS + ("members", "feedback", "eta", "gd_steps", "out", "threads", "full_scale")
    config = runner.resolve_config(file_values, _overrides(args, keys))
    result = runner.run_experiment(config)
    print(json.dumps(result.summary, sort_keys=True, indent=2))
    return 0


def _cmd_gen_task(args) -> int:
    config = runner.resolve_config({}, _overrides(args, _EXPERIMENT_KEYS))
    text = tasks.export_csv(runner.build_dataset(config, 0), args.out)
    if args.out is None:
        sys.stdout.write(text)
    return 0


def _cmd_diagnose(args) -> int:
    from .diagnostics import certificate

    config = runner.resolve_config({}, _overrides(args, _EXPERIMENT_KEYS))
    ds = runner.build_dataset(config, args.index)
    params = sample_esn(config.sampler, args.index)
    v0 = np.zeros(params.n)
    inputs = tasks.ced_drive(ds, 0.0) if config.task == "ced" else ds.inputs
    traj = sensitivities(params, v0, run(params, v0, inputs, ds.windows))
    sol = readout.fit(traj.train_states, ds.train_targets)
    out = certificate(traj, sol, ds.train_targets).to_dict()
    out.update(index=args.index, sigma_max_A=spectral_norm(params.A), train_nmse=sol.nmse_train)
    print(json.dumps(out, sort_keys=True, indent=2))
    return 0


def _cmd_lilliefors(args) -> int:
    try:
        sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--sizes must be comma-separated integers, got {args.sizes!r}") from None
    table = analysis.lilliefors_table(sizes, args.alpha, args.replicates, args.seed)
    payload = {"alpha": args.alpha, "replicates": args.replicates, "seed": args.seed,
               "critical": {str(n): round(c, 6) for n, c in table.items()}}
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


_COMMANDS = {"run": _cmd_run, "gen-task": _cmd_gen_task, "diagnose": _cmd_diagnose, "lilliefors-table": _cmd_lilliefors}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except EsnError as exc:
        print(f"esn-feedback: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FloatingPointError as exc:
        print(f"esn-feedback: numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
