"""Decentralized pricing: user budgets, the cloud's log-budget allocation, price tracking.

Each user posts budgets m[i][t] against prices q. The cloud, knowing only
the budgets, maximizes sum m log x under capacity, which yields
x = m M / sum(m) and q = sum(m) / M. Price tracking replaces the cloud's
closed form with a few dual gradient steps per budget round, so prices
move gradually toward market clearing.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import ProblemInstance, allocation_value, derive_values

PRICE_FLOOR = 1e-12


class ProjectionWarning(RuntimeWarning):
    pass


@dataclass
class TrackingParams:
    kappa: float
    g_steps: int = 40
    eps: float = 1e-4
    price_floor: float = PRICE_FLOOR
    max_rounds: int = 200

    def __post_init__(self):
        if self.kappa < 0 or self.g_steps < 1 or self.eps <= 0 or self.price_floor <= 0:
            raise ValueError("tracking parameters must be positive")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be at least 1")


KAPPA_RHO = 0.5


def default_kappa(inst: ProblemInstance, g_steps: int = 40) -> float:
    """Step size under which an idle tier's price falls by rho*mean(F) per round.

    kappa = rho * mean(F) / (G * mean(M)); about 1e-6 at N=100, M=5000.
    """
    mean_f = float(np.mean(derive_values(inst).per_function))
    scale = mean_f if mean_f > 0 else 1.0
    return KAPPA_RHO * scale / (g_steps * float(np.mean(inst.capacities)))


def default_params(inst: ProblemInstance, **overrides) -> TrackingParams:
    kw = {k: v for k, v in overrides.items() if v is not None}
    kw.setdefault("kappa", default_kappa(inst, kw.get("g_steps", 40)))
    return TrackingParams(**kw)


@dataclass
class PriceBudgetState:
    prices: np.ndarray
    budgets: np.ndarray
    iteration: int = 0


@dataclass
class TrackingResult:
    prices: np.ndarray
    budgets: np.ndarray
    allocation: np.ndarray
    rounds: int
    converged: bool
    reason: str
    objective: float
    trajectory: list = field(default_factory=list)
    price_deltas: list = field(default_factory=list)
    budget_deltas: list = field(default_factory=list)
    posted_prices: np.ndarray | None = None

    @property
    def state(self) -> PriceBudgetState:
        return PriceBudgetState(self.prices, self.budgets, self.rounds)


def _user_allocation(F_row, J, q):
    """Optimal x for max sum (F - q) x s.t. sum x <= J over tiers with q > 0.

    With one budget row the LP optimum is the vertex J * e_t at the largest
    positive surplus, lowest index on ties. Exact comparison matters: near the
    floor, prices differ by ~1e-12, below any simplex pricing tolerance.
    """
    x = np.zeros(q.size)
    surplus = np.where(q > 0, F_row - q, -np.inf)
    t = int(np.argmax(surplus))
    if surplus[t] > 0:
        x[t] = J
    return x


def solve_user_problem(inst: ProblemInstance, i: int, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if np.any(q < 0):
        raise ValueError("prices must be nonnegative")
    F = derive_values(inst).per_function
    return _user_allocation(F[i], inst.job_sizes[i], q) * q


def user_objective(F_row, J, q, m_row) -> float:
    live = q > 0
    x = np.where(live, m_row / np.where(live, q, 1.0), 0.0)
    return float(np.sum(x * (F_row - q)))


def solve_cloud_closed_form(m, M):
    m = np.asarray(m, dtype=float)
    M = np.asarray(M, dtype=float)
    S = m.sum(axis=0)
    pos = S > 0
    q = np.where(pos, S / M, 0.0)
    x = np.where(pos[None, :], m * (M / np.where(pos, S, 1.0))[None, :], 0.0)
    return x, q


def dual_gradient_step(q, m, M, kappa, floor: float = PRICE_FLOOR):
    """One step of q <- q + kappa*(sum_i m / q - M).

    For fixed budgets the step is gradient descent on the convex function
    sum(q M - S log q), minimized at q = S/M. A step is not allowed to cross
    that point, to more than halve q, or to go below the floor. Without these
    guards a step can push q through zero while budgets are still positive,
    or overshoot far above S/M when q is small, and the price then oscillates.
    """
    S = np.asarray(m, dtype=float)
    if S.ndim == 2:
        S = S.sum(axis=0)
    return kernels.gradient_steps(q, S, M, float(kappa), 1, floor)


def han_projection(z, M, eps: float = 1e-10, max_iter: int = 100000, return_info: bool = False):
    """Euclidean projection of z (N x T) onto {sum_i z[:, t] <= M_t} and {z >= 0}."""
    z = np.asarray(z, dtype=float)
    out, it, ok = kernels.han_project(z[None, :, :], M, np.ones(1), eps, max_iter)
    if not ok:
        warnings.warn(f"Han projection hit the iteration cap ({max_iter})", ProjectionWarning)
    out = out[0]
    if return_info:
        return out, {"iterations": it, "converged": ok}
    return out


def _relative_change(new, old):
    ref = float(np.linalg.norm(old))
    diff = float(np.linalg.norm(new - old))
    return diff / ref if ref > 0 else (0.0 if diff == 0 else np.inf)


def _stalled(q_old, q_new, S, M, floor):
    """Prices did not move although some tier is off its clamp-stable point."""
    if not np.array_equal(q_old, q_new):
        return False
    grad = S / np.maximum(q_old, floor) - M
    moving = np.abs(grad) > 1e-9 * np.maximum(M, 1.0)
    interior = q_old > floor
    return bool(np.any(interior & moving) or np.any(~interior & moving & (grad > 0)))


def run_tracking(user_budgets, budget_sum, project, objective, M, params: TrackingParams,
                 q0=None, max_rounds=None):
    """Generic outer/inner loop shared by the plain and CPT markets.

    user_budgets(q) -> budgets; budget_sum(m) -> per-tier weighted sum;
    project(m, q) -> allocation; objective(x) -> real.
    `posted_prices` are the prices the final budgets were formed against.
    """
    M = np.asarray(M, dtype=float)
    q = np.ones(M.size) if q0 is None else np.array(q0, dtype=float)
    rounds_cap = params.max_rounds if max_rounds is None else max_rounds
    trajectory, q_deltas, m_deltas = [], [], []
    m_prev = None
    converged, reason = False, "max_rounds"
    m = x = posted = None
    obj = 0.0
    r = 0
    for r in range(1, rounds_cap + 1):
        posted = q
        m = user_budgets(q)
        S = budget_sum(m)
        q_new = kernels.gradient_steps(q, S, M, params.kappa, params.g_steps, params.price_floor)
        x = project(m, q_new)
        obj = objective(x)
        trajectory.append({"round": r, "prices": q_new.copy(), "budget_sum": S.copy(),
                           "objective": obj})
        dq = _relative_change(q_new, q)
        q_deltas.append(dq)
        m_deltas.append(np.nan if m_prev is None else _relative_change(m, m_prev))
        stalled = _stalled(q, q_new, S, M, params.price_floor)
        q, m_prev = q_new, m
        if stalled:
            reason = "stalled"
            break
        # a tier priced far below the norm can double every round unseen by dq
        hidden = (posted <= params.eps * np.linalg.norm(posted)) & (S > posted * M * (1 + 1e-6))
        if dq < params.eps and not np.any(hidden):
            converged, reason = True, "price_tolerance"
            break
    return {"prices": q, "budgets": m, "allocation": x, "rounds": r, "converged": converged,
            "reason": reason, "objective": obj, "trajectory": trajectory,
            "price_deltas": q_deltas, "budget_deltas": m_deltas, "posted_prices": posted}


def user_budget_matrix(inst: ProblemInstance, q) -> np.ndarray:
    F = derive_values(inst).per_function
    q = np.asarray(q, dtype=float)
    X = np.vstack([_user_allocation(F[i], inst.job_sizes[i], q) for i in range(inst.n_users)])
    return X * q[None, :]


def budgets_to_allocation(m, q, M, floor: float = PRICE_FLOOR):
    z = np.asarray(m, dtype=float) / np.maximum(q, floor)[None, :]
    return han_projection(z, M)


def price_tracking(inst: ProblemInstance, params: TrackingParams | None = None, q0=None,
                   max_rounds=None) -> TrackingResult:
    params = params or default_params(inst)
    M = inst.capacities
    out = run_tracking(
        user_budgets=lambda q: user_budget_matrix(inst, q),
        budget_sum=lambda m: m.sum(axis=0),
        project=lambda m, q: budgets_to_allocation(m, q, M, params.price_floor),
        objective=lambda x: allocation_value(inst, x),
        M=M, params=params, q0=q0, max_rounds=max_rounds,
    )
    return TrackingResult(**out)


@dataclass
class EquilibriumReport:
    user_optimal: bool
    cloud_optimal: bool
    budgets_consistent: bool
    slack_prices_zero: bool
    residuals: dict
    failures: list

    @property
    def passed(self) -> bool:
        return (self.user_optimal and self.cloud_optimal
                and self.budgets_consistent and self.slack_prices_zero)


def equilibrium_check(inst: ProblemInstance, x, m, q, rtol: float = 1e-6,
                      budget_tol: float = 1e-7, slack_tol: float = 1e-6,
                      price_tol: float = 1e-9) -> EquilibriumReport:
    x = np.asarray(x, dtype=float)
    m = np.asarray(m, dtype=float)
    q = np.asarray(q, dtype=float)
    F = derive_values(inst).per_function
    J, M = inst.job_sizes, inst.capacities
    failures = []

    # surplus includes zero-price tiers, where execution is free and carries no budget
    user_gap = 0.0
    for i in range(inst.n_users):
        best = float(J[i] * max(float(np.max(F[i] - q)), 0.0))
        got = float(np.sum(x[i] * (F[i] - q)))
        live = q > 0
        spend = float(np.sum(x[i]))
        gap = max(best - got, 0.0) / max(abs(best), 1e-8)
        bad = (gap > rtol or spend > J[i] * (1 + 1e-9) + 1e-9 or np.any(m[i] < -budget_tol)
               or np.any(np.abs(m[i][~live]) > budget_tol))
        user_gap = max(user_gap, gap)
        if bad:
            failures.append(("user", i))

    S = m.sum(axis=0)
    cloud_res = 0.0
    for t in range(inst.n_tiers):
        if S[t] > budget_tol:
            target = m[:, t] * M[t] / S[t]
            res = float(np.max(np.abs(x[:, t] - target)))
        else:
            res = max(float(x[:, t].sum() - M[t]), float(np.max(-x[:, t])), 0.0)
        cloud_res = max(cloud_res, res)
        if res > budget_tol * max(1.0, M[t]):
            failures.append(("cloud", t))

    mres = np.abs(m - x * q[None, :])
    budget_res = float(np.max(mres, initial=0.0))
    if budget_res > budget_tol * max(1.0, float(np.max(np.abs(m), initial=0.0))):
        failures.append(("budget", int(np.argmax(mres))))

    slack = x.sum(axis=0) < M - slack_tol
    price_res = float(np.max(q[slack], initial=0.0))
    for t in np.flatnonzero(slack & (q > price_tol)):
        failures.append(("price", int(t)))

    kinds = {f[0] for f in failures}
    return EquilibriumReport(
        user_optimal="user" not in kinds,
        cloud_optimal="cloud" not in kinds,
        budgets_consistent="budget" not in kinds,
        slack_prices_zero="price" not in kinds,
        residuals={"user_relative_gap": user_gap, "cloud": cloud_res,
                   "budget": budget_res, "slack_price": price_res},
        failures=failures,
    )


def write_trajectory_csv(path, trajectory, fmt=None):
    fmt = fmt or (lambda v: format(float(v), ".17g"))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "t", "q_t", "sum_m_t", "objective"])
        for rec in trajectory:
            for t, (qt, st) in enumerate(zip(rec["prices"], rec["budget_sum"])):
                w.writerow([rec["round"], t + 1, fmt(qt), fmt(st), fmt(rec["objective"])])
