"""Command-line interface.

Verbs: ``gen`` (synthetic data to CSV), ``design`` (single run), ``sweep``
(lambda grid), ``baselines`` (grouping only), ``dir`` (network experiments).
Exit code 0 on success, 2 on configuration errors, 1 otherwise.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from . import data as data_mod
from .experiment import ConfigError, ExperimentConfig, run_dir_experiment, \
    run_experiment
from .model import DegenerateDataError


def _load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.from_json(args.config)
    if args.out is not None:
        config = replace(config, output_dir=args.out)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.no_figures:
        config = replace(config, figures=False)
    return config


def _cmd_gen(args) -> int:
    if args.kind == "chain":
        ts = data_mod.gen_gaussian_chain(args.n, args.rho, args.count, args.seed)
    else:
        if args.positions is None:
            raise ConfigError("gen --kind field requires --positions FILE")
        positions = np.loadtxt(args.positions, ndmin=2)
        ts = data_mod.gen_gaussian_field(positions, args.rho, args.d0,
                                         args.count, args.seed)
    header = ",".join(f"x{i}" for i in range(ts.n_sources))
    np.savetxt(args.out, ts.samples, delimiter=",", header=header, comments="")
    print(f"wrote {ts.sample_count} x {ts.n_sources} samples to {args.out}")
    return 0


def _print_result(result) -> None:
    for line in result.summary.splitlines():
        print(line)
    for path in result.files:
        print(f"wrote {path}")


def _cmd_sweep(args) -> int:
    config = _load_config(args)
    result = run_experiment(config, workers=args.threads)
    _print_result(result)
    return 0


def _cmd_design(args) -> int:
    config = _load_config(args)
    if args.lam is not None:
        config = replace(config, lambdas=(args.lam,))
    elif len(config.lambdas) != 1:
        config = replace(config, lambdas=(config.lambdas[0],))
    if args.optimizer is not None:
        config = replace(config, optimizers=(args.optimizer,))
    result = run_experiment(config, workers=1)
    for p in result.points:
        print(f"{p.optimizer:>10s} [{p.split}] lam={p.lam:g} "
              f"D={p.distortion:.6g} ({p.distortion_db:.2f} dB) "
              f"{p.size_kind}={p.size:g}")
    _print_result(result)
    return 0


def _cmd_baselines(args) -> int:
    config = _load_config(args)
    if "grouping" not in config.baselines:
        config = replace(config, baselines=config.baselines + ("grouping",))
    config = replace(config, optimizers=())
    result = run_experiment(config, workers=1)
    _print_result(result)
    return 0


def _cmd_dir(args) -> int:
    config = _load_config(args)
    result = run_dir_experiment(config)
    _print_result(result)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dsckit",
        description="Design toolkit for storage-bounded distributed coders "
                    "and dispersive routing")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate synthetic correlated sources")
    gen.add_argument("--kind", choices=["chain", "field"], default="chain")
    gen.add_argument("--n", type=int, default=5, help="source count (chain)")
    gen.add_argument("--rho", type=float, default=0.95)
    gen.add_argument("--d0", type=float, default=100.0)
    gen.add_argument("--positions", help="whitespace x y rows (field)")
    gen.add_argument("--count", type=int, default=200000)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=_cmd_gen)

    for name, fn, extra in [("design", _cmd_design, True),
                            ("sweep", _cmd_sweep, False),
                            ("baselines", _cmd_baselines, False),
                            ("dir", _cmd_dir, False)]:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="JSON config path")
        cmd.add_argument("--out", help="override output directory")
        cmd.add_argument("--seed", type=int, help="override design seed")
        cmd.add_argument("--threads", type=int, default=1,
                         help="parallel sweep workers")
        cmd.add_argument("--no-figures", action="store_true")
        if extra:
            cmd.add_argument("--lam", type=float, help="single lambda to run")
            cmd.add_argument("--optimizer", choices=["greedy", "da"])
        cmd.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DegenerateDataError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
