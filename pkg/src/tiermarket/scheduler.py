"""Welfare-maximizing schedules: SYS-LP with shadow prices, rounding, exact solvers.

The relaxation treats user i's value as linear in executions at rate
F[i][t] = U[i][t]/J_i. Its duals split into per-user values lambda and
per-tier prices mu. Exact optima come either from enumerating greedy
non-preemptive orderings or from branch-and-bound on the completion
indicators y[i][t].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import COMPLETION_RTOL, ProblemInstance, derive_values, realized_welfare
from .lp import LinearProgram, LpSolution, solve_lp

ROUND_TOL = 1e-6
BRUTE_FORCE_MAX_USERS = 9
BNB_MAX_BINARIES = 60


class SolverError(RuntimeError):
    pass


class SizeGuardError(SolverError):
    pass


@dataclass
class SysLpResult:
    allocation: np.ndarray
    user_duals: np.ndarray
    tier_prices: np.ndarray
    value: float
    lp_solution: LpSolution | None = None


@dataclass
class RoundedResult:
    y_relaxed: np.ndarray
    y_integral: np.ndarray
    value: float


@dataclass
class ExactResult:
    allocation: np.ndarray
    value: float
    ordering: tuple
    nodes: int = 0


def build_sys_lp(inst: ProblemInstance) -> LinearProgram:
    N, T = inst.n_users, inst.n_tiers
    F = derive_values(inst).per_function
    A = np.zeros((N + T, N * T))
    for i in range(N):
        A[i, i * T:(i + 1) * T] = 1.0
    for t in range(T):
        A[N + t, t::T] = 1.0
    b = np.concatenate([inst.job_sizes, inst.capacities])
    names = [f"x[{i},{t}]" for i in range(N) for t in range(T)]
    rows = [f"job[{i}]" for i in range(N)] + [f"cap[{t}]" for t in range(T)]
    return LinearProgram(F.reshape(-1), A, b, names, rows)


def solve_sys_lp(inst: ProblemInstance, method: str = "auto") -> SysLpResult:
    N, T = inst.n_users, inst.n_tiers
    sol = solve_lp(build_sys_lp(inst), method=method)
    if not sol.optimal:
        raise SolverError(f"SYS-LP solve ended with status {sol.status}")
    x = sol.primal.reshape(N, T).copy()
    return SysLpResult(x, sol.duals[:N].copy(), sol.duals[N:].copy(),
                       sol.objective_value, sol)


def kkt_residuals(inst: ProblemInstance, res: SysLpResult, tol: float = 1e-9) -> dict:
    """Violations of the SYS-LP optimality conditions (all zero at an optimum)."""
    F = derive_values(inst).per_function
    x, lam, mu = res.allocation, res.user_duals, res.tier_prices
    reduced = lam[:, None] + mu[None, :] - F
    job_slack = inst.job_sizes - x.sum(axis=1)
    cap_slack = inst.capacities - x.sum(axis=0)
    support = x > tol
    return {
        "dual_feasibility": float(np.max(-reduced, initial=0.0)),
        "stationarity": float(np.max(np.abs(reduced[support]), initial=0.0)),
        "job_slackness": float(np.max(np.abs(lam * job_slack), initial=0.0)),
        "capacity_slackness": float(np.max(np.abs(mu * cap_slack), initial=0.0)),
        "primal_feasibility": float(max(np.max(-job_slack, initial=0.0),
                                        np.max(-cap_slack, initial=0.0),
                                        np.max(-x, initial=0.0))),
        "dual_sign": float(max(np.max(-lam, initial=0.0), np.max(-mu, initial=0.0))),
    }


def greedy_allocation(inst: ProblemInstance, ordering) -> np.ndarray:
    order = np.asarray(ordering, dtype=np.int64)
    if sorted(order.tolist()) != list(range(inst.n_users)):
        raise ValueError("ordering must be a permutation of the users")
    return kernels.greedy_fill(order, inst.job_sizes, inst.capacities)


def solve_sys_exact_bruteforce(inst: ProblemInstance) -> ExactResult:
    """Best greedy non-preemptive ordering over all N! permutations."""
    N = inst.n_users
    if N > BRUTE_FORCE_MAX_USERS:
        raise SizeGuardError(
            f"exact-solver size guard: brute force needs N <= {BRUTE_FORCE_MAX_USERS}, got {N}")
    value, perm = kernels.best_ordering(inst.utilities, inst.job_sizes, inst.capacities)
    x = greedy_allocation(inst, perm)
    return ExactResult(x, realized_welfare(inst, x), tuple(int(p) for p in perm))


def round_lp_solution(inst: ProblemInstance, x) -> RoundedResult:
    x = np.asarray(x, dtype=float)
    u = derive_values(inst).marginal
    yR = np.cumsum(x, axis=1) / inst.job_sizes[:, None]
    y_hat = (yR >= 1.0 - ROUND_TOL).astype(float)
    return RoundedResult(yR, y_hat, float(np.sum(u * y_hat)))


def gap_bound(inst: ProblemInstance, x=None) -> dict:
    """Worst-case rounding factor: V_hat >= factor * V_R when factor > 0.

    The tighter factor is only claimed when x has at most one partially
    served user per tier.
    """
    T = inst.n_tiers
    ratio = float(np.max(inst.job_sizes) / np.min(inst.capacities))
    out = {"standard": 1.0 - T * ratio, "tight": None, "tight_applicable": False}
    if x is not None:
        partial = _partial_mask(np.asarray(x, float), inst.job_sizes)
        applicable = bool(np.all(partial.sum(axis=0) <= 1))
        out["tight_applicable"] = applicable
        if applicable:
            out["tight"] = 1.0 - ratio
    return out


def _partial_mask(x, J, tol=1e-9):
    J = np.asarray(J, float)[:, None]
    return (x > tol * J) & (x < J * (1.0 - tol))


def count_partial(x, J, tol: float = 1e-9) -> int:
    return int(_partial_mask(np.asarray(x, float), J, tol).sum())


def exchange_violations(inst: ProblemInstance, x, tol: float = 1e-7, support_tol: float = 1e-9):
    """Triples where x[i,m], x[i,n], x[j,m] > 0 but F[j,m]-F[j,n] < F[i,m]-F[i,n] - tol."""
    F = derive_values(inst).per_function
    pos = np.asarray(x) > support_tol
    out = []
    N, T = pos.shape
    for i in range(N):
        tiers = np.flatnonzero(pos[i])
        for m in tiers:
            for n in tiers:
                if m == n:
                    continue
                for j in np.flatnonzero(pos[:, m]):
                    if F[j, m] - F[j, n] < F[i, m] - F[i, n] - tol:
                        out.append((i, j, int(m), int(n)))
    return out


def _ordering_from_allocation(inst, x):
    tiers = np.cumsum(x, axis=1) >= inst.job_sizes[:, None] * (1.0 - COMPLETION_RTOL)
    last = np.where(tiers.any(axis=1), tiers.argmax(axis=1), inst.n_tiers)
    first = np.where((x > 1e-12).any(axis=1), (x > 1e-12).argmax(axis=1), inst.n_tiers)
    return tuple(int(i) for i in np.lexsort((np.arange(inst.n_users), first, last)))


class _IlpRelaxation:
    """LP relaxation of SYS-ILP with some indicators fixed.

    Variables are x (N*T) followed by the free indicators y. Rows:
    J_i y[i,t] - sum_{s<=t} x[i,s] <= 0, capacities, y <= 1, and for every
    indicator fixed to one, sum_{s<=t} x[i,s] >= J_i.
    """

    def __init__(self, inst: ProblemInstance):
        self.inst = inst
        self.u = derive_values(inst).marginal
        N, T = inst.n_users, inst.n_tiers
        self.N, self.T = N, T
        # indicators with zero marginal never affect the objective
        self.active = [(i, t) for i in range(N) for t in range(T) if self.u[i, t] > 0]

    def solve(self, fixed: dict):
        N, T, J, M = self.N, self.T, self.inst.job_sizes, self.inst.capacities
        free = [k for k in self.active if k not in fixed]
        ones = [k for k, v in fixed.items() if v == 1]
        nx = N * T
        nv = nx + len(free)
        rows, rhs = [], []
        for idx, (i, t) in enumerate(free):
            r = np.zeros(nv)
            r[nx + idx] = J[i]
            r[i * T:i * T + t + 1] = -1.0
            rows.append(r)
            rhs.append(0.0)
        for t in range(T):
            r = np.zeros(nv)
            r[t:nx:T] = 1.0
            rows.append(r)
            rhs.append(M[t])
        for idx in range(len(free)):
            r = np.zeros(nv)
            r[nx + idx] = 1.0
            rows.append(r)
            rhs.append(1.0)
        for (i, t) in ones:
            r = np.zeros(nv)
            r[i * T:i * T + t + 1] = -1.0
            rows.append(r)
            rhs.append(-J[i])
        c = np.zeros(nv)
        c[nx:] = [self.u[i, t] for (i, t) in free]
        const = float(sum(self.u[i, t] for (i, t) in ones))
        sol = solve_lp(LinearProgram(c, np.array(rows), np.array(rhs)))
        if sol.status == "infeasible":
            return None
        if not sol.optimal:
            raise SolverError(f"branch-and-bound relaxation status {sol.status}")
        x = sol.primal[:nx].reshape(N, T)
        y = dict(zip(free, sol.primal[nx:]))
        return sol.objective_value + const, x, y


def solve_sys_ilp_bnb(inst: ProblemInstance) -> ExactResult:
    """Depth-first branch-and-bound over the completion indicators."""
    N, T = inst.n_users, inst.n_tiers
    if N * T > BNB_MAX_BINARIES:
        raise SizeGuardError(
            f"exact-solver size guard: branch-and-bound needs N*T <= {BNB_MAX_BINARIES}, got {N * T}")
    relax = _IlpRelaxation(inst)
    root = solve_sys_lp(inst)
    best_x = root.allocation
    best_val = round_lp_solution(inst, best_x).value
    stack = [dict()]
    nodes = 0
    while stack:
        fixed = stack.pop()
        nodes += 1
        out = relax.solve(fixed)
        if out is None:
            continue
        bound, x, y = out
        if bound <= best_val + 1e-9:
            continue
        cand = round_lp_solution(inst, x).value
        if cand > best_val + 1e-12:
            best_val, best_x = cand, x
        frac = [(k, v) for k, v in y.items() if 1e-9 < v < 1.0 - 1e-9]
        if not frac:
            # integral y: the relaxation value is attained by x
            if bound > best_val + 1e-12:
                best_val, best_x = round_lp_solution(inst, x).value, x
            continue
        (i, t), _ = max(frac, key=lambda kv: (relax.u[kv[0]], -kv[0][0], -kv[0][1]))
        # explore y=1 first: push it last
        stack.append({**fixed, (i, t): 0})
        stack.append({**fixed, (i, t): 1})
    value = realized_welfare(inst, best_x)
    return ExactResult(best_x, value, _ordering_from_allocation(inst, best_x), nodes)
