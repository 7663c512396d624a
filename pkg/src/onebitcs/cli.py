"""Command-line entry point.

Subcommands: ``preset-list``, ``solve``, ``grid-search``, ``train``, ``eval``.
Every run is deterministic given its flags and seed; outputs are CSV files
and checkpoint JSON documents.  Exit code 0 on success, 1 with a message on
any contract violation.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .harness import (
    DEFAULT_ALPHA_GRID,
    DEFAULT_BIHT_ALPHA_GRID,
    DEFAULT_DELTA_GRID,
    BIHT_ALGOS,
    CLASSIC,
    build_preset,
    grid_search_baseline,
    load_config,
    preset_description,
    preset_names,
    preset_requirements,
    run_experiment,
)
from .numerics import ContractViolation, RngStream, gaussian_matrix, gaussian_vector
from .signals import SensingModel, SignalSpec, sample_signal
from .solvers import SOLVES, DegenerateIterate, SolverConfig
from .training import LossConfig, TrainConfig, train_incremental, write_training_log
from .unfolded import BIHT_FAMILY, VARIANTS, save_checkpoint


def _cmd_preset_list(args):
    for name in preset_names():
        desc = preset_description(name)
        print(f"{name}: n={desc['n']} m={desc['m']} L={desc['L']} "
              f"realizations={desc['realizations']} K={desc['sparsity']} "
              f"cases={desc['cases']} checkpoints={desc['checkpoints']}")
    return 0


def _cmd_solve(args):
    rng = RngStream(args.seed)
    signal = sample_signal(SignalSpec(args.n, args.k), rng.child("signal"))
    phi = gaussian_matrix(rng.child("phi"), args.m, args.n)
    if args.algorithm in ("grfpi", "gbiht"):
        thresholds = gaussian_vector(rng.child("thresholds"), args.m)
    else:
        thresholds = np.zeros(args.m)
    model = SensingModel(phi=phi, thresholds=thresholds)
    delta, alpha = args.delta, args.alpha
    if delta is None or alpha is None:
        dgrid = (0.0,) if args.algorithm in BIHT_ALGOS else DEFAULT_DELTA_GRID
        agrid = DEFAULT_BIHT_ALPHA_GRID if args.algorithm in BIHT_ALGOS else DEFAULT_ALPHA_GRID
        gd, ga = grid_search_baseline(args.algorithm, args.n, args.m, args.k,
                                      dgrid, agrid, iterations=args.iters, seed=args.seed)
        delta = gd if delta is None else delta
        alpha = ga if alpha is None else alpha
        print(f"grid search picked delta={delta} alpha={alpha}", file=sys.stderr)
    cfg = SolverConfig(delta, alpha, args.iters,
                       sparsity=args.k if args.algorithm in BIHT_ALGOS else None)
    traj = SOLVES[args.algorithm](signal, model, cfg)
    lines = ["iteration,mse_amplitude,mse_direction,violations"]
    for it, (amp, direction, viol) in enumerate(traj.metrics):
        lines.append(f"{it},{amp!r},{direction!r},{viol}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"wrote {len(traj.metrics)} rows to {args.out}", file=sys.stderr)
    else:
        print(text, end="")
    return 0


def _cmd_grid_search(args):
    dgrid = tuple(args.delta_grid) if args.delta_grid else (
        (0.0,) if args.algorithm in BIHT_ALGOS else DEFAULT_DELTA_GRID)
    agrid = tuple(args.alpha_grid) if args.alpha_grid else (
        DEFAULT_BIHT_ALPHA_GRID if args.algorithm in BIHT_ALGOS else DEFAULT_ALPHA_GRID)
    delta, alpha = grid_search_baseline(args.algorithm, args.n, args.m, args.k,
                                        dgrid, agrid, trials=args.trials,
                                        iterations=args.iters, seed=args.seed)
    print(json.dumps({"algorithm": args.algorithm, "delta": delta, "alpha": alpha}))
    return 0


def _cmd_train(args):
    pool = tuple(args.k_pool)
    delta, alpha = args.delta, args.alpha
    if delta is None or alpha is None:
        classic = {"l_rfpi": "rfpi", "lg_rfpi": "grfpi", "l_biht": "biht",
                   "lg_biht": "gbiht"}[args.variant]
        dgrid = (0.0,) if classic in BIHT_ALGOS else DEFAULT_DELTA_GRID
        agrid = DEFAULT_BIHT_ALPHA_GRID if classic in BIHT_ALGOS else DEFAULT_ALPHA_GRID
        gd, ga = grid_search_baseline(classic, args.n, args.m, pool, dgrid, agrid,
                                      iterations=args.layers, seed=args.seed)
        delta = gd if delta is None else delta
        alpha = ga if alpha is None else alpha
        print(f"grid search picked delta={delta} alpha={alpha}", file=sys.stderr)
    cfg = TrainConfig(sparsity_pool=pool, batch_size=args.batch_size,
                      epochs_per_round=args.epochs_per_round,
                      steps_per_epoch=args.steps_per_epoch,
                      learning_rate=args.learning_rate,
                      eval_realizations=args.eval_realizations, seed=args.seed)
    result = train_incremental(args.variant, args.n, args.m, args.layers, cfg,
                               LossConfig(lam=args.lam),
                               init_step=delta, init_penalty=alpha)
    save_checkpoint(args.out, result.encoder, result.decoder, rng_seed=args.seed)
    print(f"wrote checkpoint {args.out}", file=sys.stderr)
    if args.log:
        write_training_log(args.log, result.log)
        print(f"wrote training log {args.log}", file=sys.stderr)
    last = result.log[-1]
    print(json.dumps({"final_loss": last[3], "eval_mse_amplitude": last[4],
                      "eval_mse_direction": last[5]}))
    return 0


def _cmd_eval(args):
    if args.config:
        cfg = load_config(args.config)
    else:
        checkpoints = {}
        for item in args.checkpoint or []:
            alias, _, path = item.partition("=")
            if not path:
                # single unlabeled checkpoint: use it for every required alias
                for alias2 in preset_requirements(args.preset):
                    checkpoints[alias2] = alias
                continue
            checkpoints[alias] = path
        cfg = build_preset(args.preset, seed=args.seed, checkpoints=checkpoints,
                           output=args.out, realizations=args.realizations)
    if args.out:
        cfg.output = args.out
    result = run_experiment(cfg)
    if cfg.output:
        print(f"wrote {len(result.records)} rows to {cfg.output}", file=sys.stderr)
    print(json.dumps(result.summary["final"], indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="onebitcs",
                                     description="One-bit compressive sensing toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("preset-list", help="list experiment presets and their dimensions")

    p = sub.add_parser("solve", help="run one classic solve and dump the trajectory CSV")
    p.add_argument("--algorithm", required=True, choices=CLASSIC)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--iters", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("grid-search", help="tune classic solver constants")
    p.add_argument("--algorithm", required=True, choices=CLASSIC)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--k", type=int, nargs="+", required=True)
    p.add_argument("--iters", type=int, default=30)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--delta-grid", type=float, nargs="+", default=None)
    p.add_argument("--alpha-grid", type=float, nargs="+", default=None)

    p = sub.add_parser("train", help="incrementally train an unfolded pipeline")
    p.add_argument("--variant", required=True, choices=VARIANTS)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--layers", type=int, required=True)
    p.add_argument("--k-pool", type=int, nargs="+", required=True,
                   help="sparsity pool (single value for the BIHT family)")
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--epochs-per-round", type=int, default=200)
    p.add_argument("--steps-per-epoch", type=int, default=32)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--eval-realizations", type=int, default=128)
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--delta", type=float, default=None,
                   help="initial step size (grid-searched when omitted)")
    p.add_argument("--alpha", type=float, default=None,
                   help="initial penalty (grid-searched when omitted)")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", default=None, help="training log CSV path")

    p = sub.add_parser("eval", help="run an experiment preset or config and emit curves CSV")
    p.add_argument("--preset", default=None, choices=preset_names())
    p.add_argument("--config", default=None, help="experiment config JSON")
    p.add_argument("--checkpoint", action="append", default=None,
                   metavar="ALIAS=PATH", help="checkpoint for a preset alias")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--realizations", type=int, default=None)
    p.add_argument("--out", default=None)
    return parser


COMMANDS = {
    "preset-list": _cmd_preset_list,
    "solve": _cmd_solve,
    "grid-search": _cmd_grid_search,
    "train": _cmd_train,
    "eval": _cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "eval" and not (args.preset or args.config):
        parser.error("eval needs --preset or --config")
    try:
        return COMMANDS[args.command](args)
    except (ContractViolation, DegenerateIterate, OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
