"""Acceptance checks, one PASS/FAIL line per criterion.

    pytest tests/test_acceptance.py -s      or      python tests/test_acceptance.py
"""
import json
import os
import sys
import tempfile
import time
from itertools import combinations_with_replacement, product

import numpy as np
import pytest
from scipy.optimize import brentq

from tiermarket.cli import main as cli_main
from tiermarket.core import random_instance
from tiermarket.cpt import (
    IDENTITY,
    CptInstance,
    Lottery,
    WeightingFunction,
    cpt_gap_bound,
    cpt_han_projection,
    cpt_value,
    fosd_check,
    lottery_from_z,
    random_weights,
    solve_sys_cpt_k_r,
    solve_sys_eu,
    typical_structure_check,
)
from tiermarket.market import TrackingParams, equilibrium_check, han_projection, price_tracking
from tiermarket.scheduler import (
    gap_bound,
    kkt_residuals,
    round_lp_solution,
    solve_sys_exact_bruteforce,
    solve_sys_ilp_bnb,
    solve_sys_lp,
)
from tiermarket.sim import MarketConfig, demand_scaling_experiment, run_market

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def seeded_instances(seed, count, max_users=7, max_tiers=4):
    rng = np.random.default_rng(seed)
    return [random_instance(rng, int(rng.integers(1, max_users + 1)),
                            int(rng.integers(1, max_tiers + 1))) for _ in range(count)]


def projection_oracle(y, M, delta):
    """Per tier, z = max(y - theta * delta_k, 0) with theta >= 0 found by root bracketing."""
    out = np.maximum(y, 0.0)
    d = np.asarray(delta, float)[:, None]
    for t in range(y.shape[2]):
        col = y[:, :, t]

        def load(th):
            return float(np.sum(d * np.maximum(col - th * d, 0.0))) - M[t]

        if load(0.0) > 0:
            theta = brentq(load, 0.0, float(np.max(col / d)) + 1.0, xtol=1e-15)
            out[:, :, t] = np.maximum(col - theta * d, 0.0)
    return out


def grid_lottery_optimum(ci):
    """Best grid lottery profile, enumerated user by user and valued as lotteries.

    Feasible iff completion mass can be served in deadline order:
    sum_i J_i P[user i done by t] <= capacity of tiers 1..t.
    """
    inst, K = ci.base, ci.K
    N, T = inst.n_users, inst.n_tiers
    options = [np.array(c) / K for c in combinations_with_replacement(range(K + 1), T)]
    cumcap = np.cumsum(inst.capacities)
    values = []
    for i in range(N):
        row = []
        for q in options:
            p = np.diff(np.concatenate([[0.0], q, [1.0]]))
            lot = Lottery(tuple((float(v), t) for t, v in enumerate(p) if v > 0))
            row.append(cpt_value(lot, inst.utilities[i], ci.weights[i]))
        values.append(row)
    best = -np.inf
    for pick in product(range(len(options)), repeat=N):
        load = sum(inst.job_sizes[i] * options[j] for i, j in enumerate(pick))
        if np.all(load <= cumcap + 1e-9):
            best = max(best, sum(values[i][j] for i, j in enumerate(pick)))
    return best


def criterion_01():
    with tempfile.TemporaryDirectory() as out:
        t0 = time.perf_counter()
        code = cli_main(["solve", "--instance", os.path.join(ROOT, "configs", "toy.json"),
                         "--out", out])
        elapsed = time.perf_counter() - t0
        with open(os.path.join(out, "solution.json")) as fh:
            sol = json.load(fh)
    mu = sol["mu"]
    tol = 1e-9
    ineq = (0.15 - tol <= mu[0] <= 0.3 + tol and -tol <= mu[1] <= 0.25 + tol
            and -tol <= mu[2] <= 0.2 + tol and mu[0] - mu[1] >= 0.15 - tol and mu[1] >= mu[2] - tol)
    ok = (code == 0 and abs(sol["V_R"] - 7.5) <= 1e-7
          and np.allclose(sol["x"], 10 * np.eye(3), atol=1e-7) and ineq and elapsed < 0.1)
    return ok, f"V_R={sol['V_R']:.9g} mu={np.round(mu, 4).tolist()} time={elapsed:.3f}s"


_CRIT2 = {}


def criterion_02():
    t0 = time.perf_counter()
    violations = 0
    insts = seeded_instances(2024, 300)
    for inst in insts:
        res = solve_sys_lp(inst)
        v_hat = round_lp_solution(inst, res.allocation).value
        v_star = solve_sys_exact_bruteforce(inst).value
        _CRIT2[id(inst)] = v_star
        bound = gap_bound(inst, res.allocation)["standard"]
        if not (v_hat <= v_star + 1e-9 and v_star <= res.value + 1e-9):
            violations += 1
        if bound > 0 and v_hat < bound * res.value - 1e-9:
            violations += 1
    _CRIT2["instances"] = insts
    elapsed = time.perf_counter() - t0
    return violations == 0 and elapsed < 60, f"violations={violations} time={elapsed:.1f}s"


def criterion_03():
    insts = _CRIT2.get("instances") or seeded_instances(2024, 300)
    worst = 0.0
    for inst in insts:
        v_star = _CRIT2.get(id(inst))
        if v_star is None:
            v_star = solve_sys_exact_bruteforce(inst).value
        worst = max(worst, abs(solve_sys_ilp_bnb(inst).value - v_star))
    return worst <= 1e-9, f"max |bnb - bruteforce| = {worst:.2e} over {len(insts)} instances"


def criterion_04():
    worst, failed = 0.0, 0
    for inst in seeded_instances(404, 100):
        res = solve_sys_lp(inst)
        x, q = res.allocation, res.tier_prices
        rep = equilibrium_check(inst, x, x * q[None, :], q)
        worst = max(worst, max(rep.residuals.values()))
        failed += not rep.passed
    return failed == 0 and worst <= 1e-6, f"failed={failed} max residual={worst:.2e}"


def criterion_05():
    t0 = time.perf_counter()
    ratios = []
    for seed in range(10):
        rng = np.random.default_rng(500 + seed)
        inst = random_instance(rng, 100, 5, job_range=(10, 90), capacity_range=(5000, 5000),
                               marginal_range=(5.0, 10.0))
        v_r = solve_sys_lp(inst).value
        res = price_tracking(inst, TrackingParams(kappa=1e-6, g_steps=40, eps=1e-4),
                             max_rounds=20)
        ratios.append(res.objective / v_r)
    elapsed = time.perf_counter() - t0
    worst = min(ratios)
    return worst >= 0.98 and elapsed < 30, f"min ratio={worst:.4f} over 10 seeds time={elapsed:.1f}s"


def criterion_06():
    t0 = time.perf_counter()
    run = run_market(MarketConfig())
    elapsed = time.perf_counter() - t0
    ratio = run.welfare("tracking") / run.welfare("optimal")
    fc, tr = run.welfare("fcfs").mean(), run.welfare("tracking").mean()
    ok = ratio.min() >= 0.85 and fc < tr and elapsed < 300
    return ok, (f"min tracking/optimal={ratio.min():.4f} fcfs mean={fc:.1f} "
                f"tracking mean={tr:.1f} time={elapsed:.1f}s")


def criterion_07():
    worst = 0.0
    for inst in seeded_instances(707, 50):
        eu = solve_sys_eu(inst).value
        for K in (1, 2, 5, 10):
            v = solve_sys_cpt_k_r(CptInstance(inst, IDENTITY, K)).value
            worst = max(worst, abs(v - eu) / max(abs(eu), 1e-12))
    return worst <= 1e-7, f"max relative difference={worst:.2e}"


def criterion_08():
    rng = np.random.default_rng(808)
    violations = bound_checked = 0
    for _ in range(60):
        N, T, K = (int(rng.integers(1, 4)) for _ in range(3))
        inst = random_instance(rng, N, T)
        ci = CptInstance(inst, random_weights(rng, N), K)
        sol = solve_sys_cpt_k_r(ci)
        v_tilde = lottery_from_z(ci, sol.averaged).V_cpt_k
        v_star = grid_lottery_optimum(ci)
        if not (v_tilde <= v_star + 1e-9 and v_star <= sol.value + 1e-9):
            violations += 1
        rep = cpt_gap_bound(ci, sol.value, v_tilde, V_star=v_star)
        if rep["factor"] > 0:
            bound_checked += 1
            violations += not rep["bound_holds"]
    return violations == 0, f"violations={violations} (bound active on {bound_checked})"


def criterion_09():
    t0 = time.perf_counter()
    rows = demand_scaling_experiment(scales=(1, 2, 3, 4, 5), seeds=(0, 1, 2, 3, 4))
    means = [float(np.mean([r["advantage"] for r in rows if r["scale"] == s])) for s in range(1, 6)]
    ok = min(means) >= 0 and all(b > a for a, b in zip(means, means[1:]))
    return ok, f"mean advantage by scale={[round(m, 4) for m in means]} time={time.perf_counter() - t0:.1f}s"


def criterion_10():
    rng = np.random.default_rng(1010)
    envelopes = {}
    failed = checked = 0
    for _ in range(50):
        inst = random_instance(rng, 6, 3)
        ci = CptInstance(inst, random_weights(rng, 6), 10)
        rep = typical_structure_check(ci, solve_sys_cpt_k_r(ci).averaged, rtol=1e-6,
                                      envelopes=envelopes)
        failed += rep.status.count("fail")
        checked += rep.status.count("pass")
    return failed == 0, f"users failing={failed} users checked={checked}"


def criterion_11():
    rng = np.random.default_rng(1111)
    worst = 0.0
    for _ in range(100):
        y = rng.normal(1, 4, (3, 3))
        M = rng.uniform(0.5, 6, 3)
        worst = max(worst, float(np.max(np.abs(
            han_projection(y, M, eps=1e-12) - projection_oracle(y[None], M, [1.0])[0]))))
        y3 = rng.normal(1, 4, (3, 3, 3))
        d = np.full(3, 1 / 3)
        worst = max(worst, float(np.max(np.abs(
            cpt_han_projection(y3, M, d, eps=1e-12) - projection_oracle(y3, M, d)))))
    return worst <= 1e-5, f"max deviation={worst:.2e} over 200 inputs"


def criterion_12():
    rng = np.random.default_rng(1212)
    failures = []
    for _ in range(200):
        T = int(rng.integers(1, 5))
        U = np.sort(rng.uniform(0, 10, T))[::-1]
        p = rng.dirichlet(np.ones(T + 1))
        w = WeightingFunction("two_param", rng.uniform(0.3, 1.0), rng.uniform(0.5, 1.2))
        base = [(float(v), t) for t, v in enumerate(p)]
        split = [(v * c, t) for v, t in base for c in (0.3, 0.7)]
        rng.shuffle(split)
        if abs(cpt_value(Lottery(tuple(base)), U, w)
               - cpt_value(Lottery(tuple(split)), U, w)) > 1e-12:
            failures.append("representation")
        moved = p.copy()
        moved[0] += moved[-1]
        moved[-1] = 0.0
        better = Lottery(tuple((float(v), t) for t, v in enumerate(moved)))
        if not fosd_check(better.cumulative(T)[None], Lottery(tuple(base)).cumulative(T)[None]).passed:
            failures.append("fosd")
        if cpt_value(better, U, w) < cpt_value(Lottery(tuple(base)), U, w) - 1e-12:
            failures.append("fosd value")
    for inst in seeded_instances(1213, 100, max_users=10, max_tiers=5):
        res = solve_sys_lp(inst)
        if np.count_nonzero(res.allocation > 1e-9) > inst.n_users + inst.n_tiers:
            failures.append("sparsity")
        if max(kkt_residuals(inst, res).values()) > 1e-8:
            failures.append("kkt")
        if not np.array_equal(solve_sys_lp(inst).allocation, res.allocation):
            failures.append("determinism")
    cfg = MarketConfig(days=4, n_users=5, phases=[{"start": 1, "end": 4, "up_probability": 0.5}])
    a, b = run_market(cfg), run_market(cfg)
    if not all(np.array_equal(a.welfare(s), b.welfare(s)) for s in cfg.schemes):
        failures.append("seeded run")
    return not failures, f"failures={len(failures)} {sorted(set(failures))}"


CRITERIA = [
    (1, "toy pricing example", criterion_01),
    (2, "rounding sandwich and gap bound", criterion_02),
    (3, "branch-and-bound equals brute force", criterion_03),
    (4, "equilibrium round trip", criterion_04),
    (5, "price tracking at scale", criterion_05),
    (6, "60-day market simulation", criterion_06),
    (7, "lottery LP reduces to expected utility", criterion_07),
    (8, "lottery sandwich and gap bound", criterion_08),
    (9, "lottery advantage grows with demand", criterion_09),
    (10, "typical lottery structure", criterion_10),
    (11, "projection against QP oracle", criterion_11),
    (12, "property loops", criterion_12),
]


def run_criterion(number, label, fn):
    try:
        ok, detail = fn()
    except Exception as exc:  # a crash is a failure with its message
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d} {label}: {detail}"
    return ok, line


@pytest.mark.parametrize("number,label,fn", CRITERIA, ids=[f"criterion_{n:02d}" for n, _, _ in CRITERIA])
def test_criterion(number, label, fn, capsys):
    ok, line = run_criterion(number, label, fn)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


if __name__ == "__main__":
    results = [run_criterion(*c) for c in CRITERIA]
    for _, line in results:
        print(line)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
