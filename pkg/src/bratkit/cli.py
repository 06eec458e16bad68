"""Command-line interface.

Subcommands: solve-grid, gen-labels, train, rollout, compare, export, info.
Errors print a single machine-parseable line `error: <message>` on stderr
and exit nonzero (2 for usage problems, 3 for fingerprint refusals, 1
otherwise).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import controllers as ctl
from . import harness as hn
from . import mpc as mpc_mod
from . import training as tr
from .config import (config_fingerprint, load_config, make_problem,
                     make_training_config, save_config)
from .grid import Grid, GridValueFunction, solve_vi
from .io import read_container
from .problem import TOY_KINDS, make_toy_problem
from .siren import NeuralValueFunction


class CliError(Exception):
    def __init__(self, message, code=1):
        super().__init__(message)
        self.code = code


def _parse_counts(spec: str):
    for sep in ("x", ","):
        if sep in spec:
            return tuple(int(s) for s in spec.split(sep))
    return (int(spec),)


def _load_problem(kind: str, horizon=None, mode="reach_avoid"):
    if kind not in TOY_KINDS:
        raise CliError(f"unknown problem {kind!r}; known: {', '.join(TOY_KINDS)}", 2)
    p = make_toy_problem(kind, horizon=horizon)
    return p.avoid_only() if mode == "avoid_only" else p


def _load_vf(path, problem):
    """Value function from either checkpoint or grid file, with the
    problem-fingerprint refusal required for mismatched inputs."""
    meta, _ = read_container(path)
    fmt = meta.get("format")
    if fmt == "nvf_checkpoint":
        try:
            return NeuralValueFunction.load(path, problem)
        except ValueError as e:
            raise CliError(f"fingerprint mismatch: {e}", 3)
    if fmt == "grid_value_function":
        fp = meta.get("problem")
        if fp not in (None, problem.fingerprint()):
            raise CliError(
                f"fingerprint mismatch: grid file {path} was solved for "
                f"problem {fp}, not {problem.fingerprint()}", 3)
        return GridValueFunction.load(path)
    raise CliError(f"{path}: unrecognized value-function format {fmt!r}", 2)


# ---------------------------------------------------------------------------

def cmd_solve_grid(args):
    problem = _load_problem(args.problem, args.horizon, args.mode)
    counts = _parse_counts(args.grid)
    if len(counts) == 1:
        counts = counts * problem.dim
    if len(counts) != problem.dim:
        raise CliError(f"grid spec has {len(counts)} dims, problem has "
                       f"{problem.dim}", 2)
    grid = Grid(problem.bounds_lo, problem.bounds_hi, counts,
                periodic=tuple(i in problem.periodic_dims
                               for i in range(problem.dim)))
    vf = solve_vi(problem, grid, dt=args.dt, grid_horizon=args.grid_horizon)
    vf.save(args.out)
    print(f"wrote {args.out}: counts {counts}, {len(vf.times)} time slices")
    return 0


def cmd_gen_labels(args):
    problem = _load_problem(args.problem, args.horizon)
    policy = None
    if args.policy:
        policy = _load_vf(args.policy, problem)
        if not isinstance(policy, NeuralValueFunction):
            raise CliError("--policy must be a neural checkpoint", 2)
    cfg = mpc_mod.ShootingConfig(samples=args.samples, rounds=args.rounds)
    labels = mpc_mod.generate_labels(problem, args.count, policy=policy,
                                     seed=args.seed, config=cfg)
    labels.save(args.out)
    print(f"wrote {args.out}: {len(labels)} labels, strata "
          f"{labels.histogram()}")
    return 0


def cmd_train(args):
    cfg = load_config(args.config)
    problem = make_problem(cfg)
    tcfg = make_training_config(cfg)
    labels = mpc_mod.MpcLabelSet.load(args.labels) if args.labels else None
    if labels is not None and labels.meta.get("problem") != problem.fingerprint():
        raise CliError(
            f"fingerprint mismatch: labels {args.labels} were generated for "
            f"problem {labels.meta.get('problem')}", 3)
    nvf, log = tr.train(problem, tcfg, labels=labels,
                        progress=not args.quiet)
    nvf.save(args.out)
    log_path = args.log or (args.out + ".log.jsonl")
    with open(log_path, "w") as f:
        for rec in log:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    resolved = args.out + ".config.yaml"
    save_config(cfg, resolved)
    print(f"wrote {args.out} (config fingerprint {config_fingerprint(cfg)}, "
          f"log {log_path}, resolved config {resolved})")
    return 0


def _make_controller_factory(args, problem, cfg):
    kind = args.controller
    if kind != "mpc" and not args.vf:
        raise CliError(f"controller {kind!r} requires --vf", 2)
    if kind in ("brat", "grid"):
        vf = _load_vf(args.vf, problem)
        if kind == "grid" and not isinstance(vf, GridValueFunction):
            raise CliError("controller 'grid' expects a grid --vf", 2)
        base = lambda: ctl.BratController(problem, vf)
    elif kind == "tmpc":
        vf = _load_vf(args.vf, problem)
        tcfg = mpc_mod.TerminalMpcConfig(seed=args.seed)

        def base():
            rng = np.random.default_rng(args.seed)

            def call(x, t_elapsed=0.0):
                t_term = min(t_elapsed + tcfg.horizon_steps * tcfg.dt,
                             problem.horizon)
                return mpc_mod.terminal_mpc_control(problem, vf, x, t_term,
                                                    tcfg, rng)
            return call
    elif kind == "mpc":
        base = lambda: mpc_mod.RecedingHorizonController(
            problem, mpc_mod.RecedingHorizonConfig(seed=args.seed))
    else:
        raise CliError(f"unknown controller {kind!r}", 2)

    if args.avoid:
        avf = _load_vf(args.avoid, problem.avoid_only())
        return lambda: ctl.SafetyFilteredController(
            problem, base(), avf, ctl.SafetyFilterConfig(gamma=args.gamma))
    return base


def cmd_rollout(args):
    problem = _load_problem(args.problem, args.horizon)
    factory = _make_controller_factory(args, problem, None)
    rcfg = hn.RolloutConfig(dt=args.dt, seed=args.seed,
                            record_steps=args.trajectories)
    metrics, records = hn.monte_carlo(problem, factory, args.n, rcfg)
    paths = hn.export_results(
        args.out, metrics=metrics, records=records,
        config={"problem": args.problem, "controller": args.controller,
                "n": args.n, "seed": args.seed, "dt": args.dt,
                "gamma": args.gamma, "filtered": bool(args.avoid)},
        fingerprint=problem.fingerprint())
    print(f"n={args.n} dock={metrics.dock_rate:.1f}% "
          f"collide={metrics.collision_rate:.1f}% "
          f"timeout={metrics.timeout_rate:.1f}% -> {paths['summary']}")
    return 0


def cmd_compare(args):
    problem = _load_problem(args.problem, args.horizon)
    cand = _load_vf(args.candidate, problem)
    truth = _load_vf(args.truth, problem)
    rep = hn.volumetric_compare(cand, truth, problem.bounds_lo,
                                problem.bounds_hi, args.n, seed=args.seed)
    out = {"fingerprint": problem.fingerprint(), "n": rep.n,
           "tpr_percent": rep.tpr, "fpr_percent": rep.fpr,
           "tp": rep.tp, "fp": rep.fp, "tn": rep.tn, "fn": rep.fn}
    with open(args.out, "w") as f:
        json.dump(out, f, indent=1, sort_keys=True)
    print(f"TPR {rep.tpr:.2f}% FPR {rep.fpr:.2f}% -> {args.out}")
    return 0


def cmd_export(args):
    with open(args.summary) as f:
        summary = json.load(f)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "metrics.csv")
    rows = sorted((summary.get("metrics") or {}).items())
    rows += sorted((summary.get("volumetric") or {}).items())
    if not rows:
        raise CliError(f"{args.summary}: no metrics or volumetric section", 2)
    with open(path, "w") as f:
        f.write("key,value\n")
        for k, v in rows:
            f.write(f"{k},{v}\n")
    print(f"wrote {path}")
    return 0


def cmd_info(args):
    meta, arrays = read_container(args.path)
    fmt = meta.get("format", "unknown")
    print(f"format: {fmt}")
    if fmt == "nvf_checkpoint":
        print(f"widths: {meta['widths']}")
        print(f"omega0: {meta['omega0']}")
        print(f"horizon: {meta['horizon']}")
        print(f"problem: {meta.get('problem')} ({meta.get('fingerprint')})")
        print(f"mode: {meta.get('mode')}")
    else:
        for k in sorted(meta):
            if k != "format":
                print(f"{k}: {meta[k]}")
        for name in sorted(arrays):
            print(f"array {name}: shape {arrays[name].shape}")
    return 0


# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="bratkit",
                                description="backward reach-avoid tube toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def add_problem(sp):
        sp.add_argument("--problem", required=True)
        sp.add_argument("--horizon", type=float, default=None)

    sp = sub.add_parser("solve-grid", help="grid VI solve")
    add_problem(sp)
    sp.add_argument("--grid", required=True,
                    help="node counts, e.g. 101x101 or a single number")
    sp.add_argument("--out", required=True)
    sp.add_argument("--dt", type=float, default=None)
    sp.add_argument("--grid-horizon", type=float, default=None)
    sp.add_argument("--mode", choices=("reach_avoid", "avoid_only"),
                    default="reach_avoid")
    sp.set_defaults(func=cmd_solve_grid)

    sp = sub.add_parser("gen-labels", help="MPC value labels")
    add_problem(sp)
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--policy", default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--samples", type=int, default=64)
    sp.add_argument("--rounds", type=int, default=8)
    sp.set_defaults(func=cmd_gen_labels)

    sp = sub.add_parser("train", help="train a neural value function")
    sp.add_argument("--config", default=None)
    sp.add_argument("--labels", default=None)
    sp.add_argument("--out", required=True)
    sp.add_argument("--log", default=None)
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("rollout", help="closed-loop Monte Carlo")
    add_problem(sp)
    sp.add_argument("--controller", required=True,
                    choices=("brat", "tmpc", "mpc", "grid"))
    sp.add_argument("--vf", default=None)
    sp.add_argument("--avoid", default=None,
                    help="avoid-BRT file; enables the safety filter")
    sp.add_argument("--gamma", type=float, default=0.05)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--dt", type=float, default=0.1)
    sp.add_argument("--out", required=True)
    sp.add_argument("--trajectories", action="store_true")
    sp.set_defaults(func=cmd_rollout)

    sp = sub.add_parser("compare", help="volumetric TPR/FPR vs truth")
    add_problem(sp)
    sp.add_argument("--candidate", required=True)
    sp.add_argument("--truth", required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("export", help="summary.json to CSV")
    sp.add_argument("--summary", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_export)

    sp = sub.add_parser("info", help="inspect a container file")
    sp.add_argument("path")
    sp.set_defaults(func=cmd_info)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except FileNotFoundError as e:
        print(f"error: missing file: {e.filename}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
