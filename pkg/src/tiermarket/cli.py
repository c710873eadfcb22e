"""Command line entry point.

    tiermarket solve    --instance FILE [--exact [bruteforce|bnb]]
    tiermarket track    --instance FILE [--kappa K --g-steps G --eps E]
    tiermarket simulate --config FILE [--schemes a,b] [--experiment NAME]
    tiermarket cpt      --instance FILE [--k K --weights FAMILY --gamma G --delta D]
                        [--track] [--fosd FILE]

Exit status: 0 success, 2 bad input, 3 solver failure or size guard.
Every command writes manifest.json next to its results in --out.
"""
from __future__ import annotations

import argparse
import csv
import datetime
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .core import instance_from_dict, validate_instance
from .cpt import (
    CptInstance,
    cpt_exchange_violations,
    cpt_gap_bound,
    cpt_price_tracking,
    fosd_check,
    lottery_from_z,
    lottery_report,
    solve_sys_cpt_k_r,
    typical_structure_check,
    weights_from_spec,
)
from .market import default_params, price_tracking, write_trajectory_csv
from .scheduler import (
    SolverError,
    gap_bound,
    kkt_residuals,
    round_lp_solution,
    solve_sys_exact_bruteforce,
    solve_sys_ilp_bnb,
    solve_sys_lp,
)
from .sim import (
    MarketConfig,
    cpt_fraction_experiment,
    demand_scaling_experiment,
    run_market,
    write_market_csvs,
)

EXIT_INPUT = 2
EXIT_SOLVER = 3


class InputError(Exception):
    pass


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def _encode(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, float):
        if not math.isfinite(obj):
            return "null"
        return format(obj + 0.0, ".17g")
    if isinstance(obj, (int, str)):
        return json.dumps(obj)
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (list, dict)) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        inner = (",\n" + pad).join(_encode(v, indent, level + 1) for v in obj)
        return "[\n" + pad + inner + "\n" + end + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = (json.dumps(k) + ": " + _encode(v, indent, level + 1) for k, v in obj.items())
        return "{\n" + pad + (",\n" + pad).join(items) + "\n" + end + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    """JSON text with every float written to 17 significant digits."""
    return _encode(_plain(obj), indent, 0)


def write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(dumps(obj) + "\n")


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise InputError(f"file not found: {path}")
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}")


def load_instance(path):
    data = _read_json(path)
    try:
        inst = instance_from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed instance {path}: {exc}")
    report = validate_instance(inst)
    if not report:
        raise InputError(f"invalid instance {path}: " + "; ".join(report.violations))
    return inst, data


def write_manifest(args, started, extra=None):
    manifest = {
        "command": args.command,
        "config": getattr(args, "config", None),
        "instance": getattr(args, "instance", None),
        "seed": args.seed,
        "output_directory": os.path.abspath(args.out),
        "tool_version": __version__,
        "started_utc": datetime.datetime.fromtimestamp(started, datetime.timezone.utc)
        .isoformat(timespec="seconds"),
        "wall_clock_seconds": time.time() - started,
    }
    manifest.update(extra or {})
    write_json(os.path.join(args.out, "manifest.json"), manifest)


def cmd_solve(args):
    inst, _ = load_instance(args.instance)
    res = solve_sys_lp(inst)
    rounded = round_lp_solution(inst, res.allocation)
    out = {
        "x": res.allocation,
        "lambda": res.user_duals,
        "mu": res.tier_prices,
        "V_R": res.value,
        "V_hat": rounded.value,
        "gap_bound": gap_bound(inst, res.allocation),
        "kkt_residuals": kkt_residuals(inst, res),
    }
    if args.exact:
        exact = (solve_sys_exact_bruteforce if args.exact == "bruteforce"
                 else solve_sys_ilp_bnb)(inst)
        out["V_star"] = exact.value
        out["exact_method"] = args.exact
        out["exact_allocation"] = exact.allocation
    write_json(os.path.join(args.out, "solution.json"), out)
    return out


def _weights_from_args(args, data, n):
    if args.weights is not None:
        if args.weights == "tabulated":
            raise InputError("tabulated weights must be given in the instance file")
        kw = {"family": args.weights}
        if args.gamma is not None:
            kw["gamma"] = args.gamma
        if args.delta is not None:
            kw["delta"] = args.delta
        return weights_from_spec(kw, n)
    return weights_from_spec(data.get("weights"), n)


def cmd_track(args):
    inst, _ = load_instance(args.instance)
    params = default_params(inst, kappa=args.kappa, g_steps=args.g_steps, eps=args.eps,
                            max_rounds=args.max_rounds)
    res = price_tracking(inst, params)
    write_trajectory_csv(os.path.join(args.out, "trajectory.csv"), res.trajectory)
    state = {
        "prices": res.prices,
        "budgets": res.budgets,
        "allocation": res.allocation,
        "objective": res.objective,
        "rounds": res.rounds,
        "converged": res.converged,
        "reason": res.reason,
        "kappa": params.kappa,
        "g_steps": params.g_steps,
        "eps": params.eps,
    }
    write_json(os.path.join(args.out, "state.json"), state)
    return state


def _write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        keys = list(rows[0])
        w.writerow(keys)
        for r in rows:
            w.writerow([format(v, ".17g") if isinstance(v, float) else v for v in
                        (r[k] for k in keys)])


def cmd_simulate(args):
    data = _read_json(args.config)
    if not isinstance(data, dict):
        raise InputError("config must be a JSON object")
    if args.seed is not None:
        data["seed"] = args.seed
    if args.schemes:
        data["schemes"] = [s.strip() for s in args.schemes.split(",") if s.strip()]
    try:
        config = MarketConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise InputError(f"config schema violation: {exc}")
    args.seed = config.seed
    summary = {}
    if args.experiment in ("market", "all"):
        run = run_market(config)
        write_market_csvs(run, args.out)
        for s in config.schemes:
            summary[f"mean_welfare_{s}"] = float(run.welfare(s).mean())
    if args.experiment in ("demand-scaling", "all"):
        cfg = dict(config.cpt or {})
        scales = cfg.pop("scales", [1, 2, 3, 4, 5])
        seeds = cfg.pop("seeds", [config.seed + k for k in range(5)])
        cfg.pop("fractions", None)
        rows = demand_scaling_experiment(cfg, tuple(scales), tuple(seeds))
        _write_rows(os.path.join(args.out, "cpt_demand_scaling.csv"), rows)
    if args.experiment in ("cpt-fraction", "all"):
        cfg = dict(config.cpt or {})
        fractions = cfg.pop("fractions", [0.0, 0.25, 0.5, 0.75, 1.0])
        cfg.pop("scales", None)
        cfg.pop("seeds", None)
        rows = cpt_fraction_experiment(cfg, tuple(fractions), config.seed)
        _write_rows(os.path.join(args.out, "cpt_fraction.csv"), rows)
    return summary


def cmd_cpt(args):
    inst, data = load_instance(args.instance)
    try:
        weights = _weights_from_args(args, data, inst.n_users)
        ci = CptInstance(inst, weights, args.k)
    except (TypeError, ValueError) as exc:
        raise InputError(f"bad weighting: {exc}")
    sol = solve_sys_cpt_k_r(ci)
    ex = lottery_from_z(ci, sol.averaged)
    structure = typical_structure_check(ci, sol.allocation.z)
    out = {
        "K": ci.K,
        "weights": [w.to_dict() for w in ci.weights],
        "V_R": sol.value,
        "V_tilde": ex.V_tilde,
        "V_cpt_k": ex.V_cpt_k,
        "q_tilde": ex.q_tilde,
        "completion_tiers": ex.completion + 1,
        "gap": cpt_gap_bound(ci, sol.value, ex.V_tilde),
        "structure": {"k_star": structure.k_star, "p_star": structure.p_star,
                      "status": structure.status, "passed": structure.passed},
        "exchange_violations": len(cpt_exchange_violations(ci, sol.averaged)),
        "duals": {"lambda": sol.duals.job, "mu": sol.duals.capacity,
                  "alpha": sol.duals.monotone},
        "z": sol.averaged,
    }
    write_json(os.path.join(args.out, "cpt_solution.json"), out)
    write_json(os.path.join(args.out, "lotteries.json"), lottery_report(ci, ex))
    if args.track:
        params = default_params(inst, kappa=args.kappa, g_steps=args.g_steps, eps=args.eps,
                                max_rounds=args.max_rounds)
        tr = cpt_price_tracking(ci, params)
        write_trajectory_csv(os.path.join(args.out, "trajectory.csv"), tr.trajectory)
        implemented = lottery_from_z(ci, tr.allocation)
        write_json(os.path.join(args.out, "tracking_state.json"), {
            "prices": tr.prices, "objective": tr.objective, "rounds": tr.rounds,
            "converged": tr.converged, "reason": tr.reason,
            "q_implemented": implemented.q_tilde,
        })
        out["tracking_objective"] = tr.objective
    if args.fosd:
        promised = _read_json(args.fosd)
        try:
            q_prom = np.asarray(promised["q"] if isinstance(promised, dict) else promised,
                                dtype=float)
            rep = fosd_check(ex.q_tilde, q_prom)
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed promised lottery file: {exc}")
        write_json(os.path.join(args.out, "fosd.json"), {
            "passed": rep.passed,
            "witnesses": [{"user": i, "tier": t + 1} for i, t in rep.witnesses],
            "q_implemented": ex.q_tilde,
            "q_promised": q_prom,
        })
    return out


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser():
    p = argparse.ArgumentParser(prog="tiermarket", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", default="tiermarket-out", help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="master seed (default 0)")

    def tracking(sp):
        sp.add_argument("--kappa", type=float, default=None, help="gradient step size")
        sp.add_argument("--g-steps", type=_positive_int, default=40, dest="g_steps")
        sp.add_argument("--eps", type=float, default=1e-4, help="relative price tolerance")
        sp.add_argument("--max-rounds", type=_positive_int, default=200, dest="max_rounds")

    sp = sub.add_parser("solve", help="solve the system LP and report bounds")
    sp.add_argument("--instance", required=True)
    sp.add_argument("--exact", nargs="?", const="bruteforce", choices=["bruteforce", "bnb"],
                    default=None, help="also compute the exact optimum")
    common(sp)

    sp = sub.add_parser("track", help="run price tracking")
    sp.add_argument("--instance", required=True)
    tracking(sp)
    common(sp)

    sp = sub.add_parser("simulate", help="run the multi-day market or lottery experiments")
    sp.add_argument("--config", required=True)
    sp.add_argument("--schemes", default=None, help="comma separated subset of schemes")
    sp.add_argument("--experiment", default="market",
                    choices=["market", "demand-scaling", "cpt-fraction", "all"])
    common(sp)

    sp = sub.add_parser("cpt", help="solve the lottery LP and extract lotteries")
    sp.add_argument("--instance", required=True)
    sp.add_argument("--k", type=_positive_int, default=20, help="grid size K (at most 100)")
    sp.add_argument("--weights", default=None,
                    choices=["identity", "prelec", "tversky_kahneman", "two_param"])
    sp.add_argument("--gamma", type=float, default=None)
    sp.add_argument("--delta", type=float, default=None)
    sp.add_argument("--track", action="store_true", help="also run lottery price tracking")
    sp.add_argument("--fosd", default=None, help="promised lottery file for a dominance check")
    tracking(sp)
    common(sp)
    return p


COMMANDS = {"solve": cmd_solve, "track": cmd_track, "simulate": cmd_simulate, "cpt": cmd_cpt}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = time.time()
    if getattr(args, "k", 1) > 100:
        print("error: --k is capped at 100", file=sys.stderr)
        return EXIT_INPUT
    try:
        os.makedirs(args.out, exist_ok=True)
        result = COMMANDS[args.command](args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"error: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    if args.seed is None:
        args.seed = 0
    extra = {}
    if args.command == "track":
        extra["converged"] = result["converged"]
    write_manifest(args, started, extra)
    return 0


if __name__ == "__main__":
    sys.exit(main())
