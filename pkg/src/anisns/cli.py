"""Command line entry point: ``anisns <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from .dynamics import DynamicsError, SkeletonOperator
from .experiments.config import ConfigError, ExperimentConfig
from .experiments.harness import (
    Context,
    run_clt_limit,
    run_clt_rate,
    run_invariant_suite,
    run_mdp_tail,
    run_simulate,
    sample_seed,
)
from .experiments.report import ExperimentReport, sanitize
from .noise import NoiseSpecError
from .ratefn import RateOptions, control_cost, rate_function
from .spectral import load_fields, save_fields

OUT_ENV = "ANISNS_OUTPUT_DIR"
SUBCOMMANDS = ("simulate", "clt-rate", "clt-limit", "mdp-tail", "rate-min", "invariants")

log = logging.getLogger("anisns")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="anisns", description="Anisotropic stochastic Navier-Stokes experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (defaults are used when omitted)")
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--samples", type=int, help="override the Monte Carlo sample count")
    common.add_argument("--out", help=f"output directory (else ${OUT_ENV}, else the config's output.dir)")
    common.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on this)")
    common.add_argument("-v", "--verbose", action="store_true")

    s = sub.add_parser("simulate", parents=[common], help="one deterministic and one stochastic run")
    s.add_argument("--eps", type=float, help="noise intensity (default: first ladder value)")
    sub.add_parser("clt-rate", parents=[common], help="E sup|u^eps - u0|^2 over the eps ladder")
    sub.add_parser("clt-limit", parents=[common], help="E sup|V^eps - V0|^2 over the eps ladder")
    m = sub.add_parser("mdp-tail", parents=[common], help="exploratory tail probabilities")
    m.add_argument("--delta", type=float, nargs="+", help="delta ladder (default: from config)")
    m.add_argument("--rate-bound", action="store_true", help="also compute skeleton rate lower bounds")
    r = sub.add_parser("rate-min", parents=[common], help="minimize the control cost to reach a target")
    r.add_argument("--target", help="target field file (1 field = terminal, n_steps+1 fields = path)")
    r.add_argument("--objective", choices=["path", "terminal"], help="matching metric")
    i = sub.add_parser("invariants", parents=[common], help="identity and moment battery")
    i.add_argument("--instances", type=int, default=20, help="random instances per identity")
    return p


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    over = {}
    if args.seed is not None:
        over["mc"] = {"seed": args.seed}
    if args.samples is not None:
        over.setdefault("mc", {})["samples"] = args.samples
    return cfg.replace(**over) if over else cfg


def _out_dir(args, cfg: ExperimentConfig) -> str:
    if args.out:
        return args.out
    base = os.environ.get(OUT_ENV) or cfg.output_dir
    return os.path.join(base, args.command)


def _rate_min(args, cfg: ExperimentConfig, out: str) -> ExperimentReport:
    t0 = time.perf_counter()
    ctx = Context.build(cfg.replace(mc={"samples": max(2, cfg.samples)}))
    op = SkeletonOperator(ctx.u0_traj, ctx.noise, ctx.icfg)
    rc = cfg.data["rate"]
    objective = args.objective or rc["objective"]
    reference = None
    if args.target:
        if not os.path.exists(args.target):
            raise FileNotFoundError(f"target file not found: {args.target}")
        grid, fields = load_fields(args.target, ctx.grid.dealias_fraction)
        if (grid.n_h, grid.n_v) != (ctx.grid.n_h, ctx.grid.n_v):
            raise ValueError(f"target grid {grid.n_h}x{grid.n_v} does not match config grid")
        if fields.shape[0] == 1:
            if args.objective == "path":
                raise ValueError("a single target field needs --objective terminal")
            objective, target = "terminal", fields[0]
        elif fields.shape[0] == op.n_steps + 1:
            target = fields if objective == "path" else fields[-1]
        else:
            raise ValueError(f"target holds {fields.shape[0]} fields; expected 1 or {op.n_steps + 1}")
    else:
        rng = np.random.default_rng(sample_seed(cfg.seed, 0))
        phi = rng.standard_normal(op.shape)
        X = op.forward(phi)
        target = X if objective == "path" else X[-1]
        from .ratefn import ControlPath

        reference = control_cost(ControlPath(phi, op.dt))
        os.makedirs(out, exist_ok=True)
        save_fields(os.path.join(out, "target.bin"), ctx.grid, X if objective == "path" else X[-1:])
    opts = RateOptions(
        penalty0=rc["penalty0"], tolerance=rc["tolerance"], max_iters=rc["max_iters"]
    )
    res = rate_function(target, objective, opts, operator=op)
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "rate_result.json"), "w") as fh:
        json.dump(sanitize(res.to_dict()), fh, indent=2, sort_keys=True)
    rep = ctx.report("rate-min")
    rep.sample_seeds = []
    rep.levels.append(
        {
            "objective": objective,
            "value": res.value,
            "feasible": res.feasible,
            "residual": res.target_residual,
            "iterations": res.iterations,
            "reference_cost": reference if reference is not None else float("nan"),
        }
    )
    rep.extra["stages"] = res.stages
    rep.runtime = time.perf_counter() - t0
    return rep


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) if exc.code in (0, None) else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.config and not os.path.exists(args.config):
            raise FileNotFoundError(f"config file not found: {args.config}")
        cfg = _load_config(args)
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        out = _out_dir(args, cfg)
        log.info("writing to %s", out)
        cmd = args.command
        if cmd == "simulate":
            rep, runs = run_simulate(cfg, args.eps)
            os.makedirs(out, exist_ok=True)
            for name, tr in runs.items():
                tr.write_json(os.path.join(out, f"{name}.json"))
                tr.write_csv(os.path.join(out, f"{name}.csv"))
                if cfg.data["output"]["snapshots"]:
                    os.makedirs(os.path.join(out, "fields"), exist_ok=True)
                    tr.write_snapshots(os.path.join(out, "fields", f"{name}.bin"))
        elif cmd == "clt-rate":
            rep = run_clt_rate(cfg, args.threads)
        elif cmd == "clt-limit":
            rep = run_clt_limit(cfg, args.threads)
        elif cmd == "mdp-tail":
            rep = run_mdp_tail(cfg, args.delta, args.threads, rate_bound=args.rate_bound)
        elif cmd == "rate-min":
            rep = _rate_min(args, cfg, out)
        else:
            rep = run_invariant_suite(cfg, args.threads, instances=args.instances)
        paths = rep.write(out)
    except (ConfigError, NoiseSpecError, ValueError) as exc:
        print(f"anisns: error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, DynamicsError, OSError) as exc:
        print(f"anisns: error: {exc}", file=sys.stderr)
        return 1
    print(rep.table())
    for name, c in rep.checks.items():
        print(f"{'PASS' if c.get('pass') else 'FAIL'}  {name}")
    print(f"report: {paths['report']}")
    return 0


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
