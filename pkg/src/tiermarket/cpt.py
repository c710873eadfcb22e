"""Lottery allocations for users who weigh probabilities.

A user's completion tier becomes random. The cloud mixes K equiprobable
allocation matrices (alternatives). A user whose alternatives are sorted by
value sees the rank-dependent valuation sum_k h_k * value_k, where
h_k = w(k/K) - w((k-1)/K) for the user's probability weighting function w.

The relaxed program over per-alternative allocations is a linear program.
Its solution is turned into a grid lottery by reading off when each
alternative finishes. Pricing carries over from the plain market with budgets
per alternative and a capacity row weighted by delta_k = 1/K.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Sequence

import numpy as np

from . import kernels
from .core import COMPLETION_RTOL, ProblemInstance, derive_values
from .lp import LinearProgram, LpSolution, solve_lp
from .market import (
    ProjectionWarning,
    TrackingParams,
    TrackingResult,
    default_params,
    run_tracking,
)
from .scheduler import SizeGuardError, SolverError, solve_sys_lp

FAMILIES = ("identity", "prelec", "tversky_kahneman", "two_param", "tabulated")
VALIDATION_GRID = 1001
ENVELOPE_GRID = 1001
BRUTEFORCE_LIMIT = 2_000_000


@dataclass(frozen=True)
class WeightingFunction:
    """Probability weighting w: [0,1] -> [0,1].

    prelec: exp(-(-ln p)^gamma)
    tversky_kahneman: p^g / (p^g + (1-p)^g)^(1/g)
    two_param: delta p^g / (delta p^g + (1-p)^g)
    tabulated: linear interpolation of `table` on a uniform grid over [0,1].
    """

    family: str = "identity"
    gamma: float = 1.0
    delta: float = 1.0
    table: tuple | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown weighting family {self.family!r}")
        if self.family == "tabulated":
            if self.table is None or len(self.table) < 2:
                raise ValueError("tabulated weighting needs a table of at least 2 values")
            object.__setattr__(self, "table", tuple(float(v) for v in self.table))
        if self.family != "identity" and self.family != "tabulated" and self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.family == "two_param" and self.delta <= 0:
            raise ValueError("delta must be positive")
        self.validate()

    def _raw(self, p):
        g, d = self.gamma, self.delta
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            if self.family == "identity":
                return p.copy()
            if self.family == "prelec":
                return np.exp(-(-np.log(p)) ** g)
            if self.family == "tversky_kahneman":
                pg = p ** g
                return pg / (pg + (1.0 - p) ** g) ** (1.0 / g)
            if self.family == "two_param":
                pg = d * p ** g
                return pg / (pg + (1.0 - p) ** g)
            tab = np.asarray(self.table)
            return np.interp(p, np.linspace(0.0, 1.0, tab.size), tab)

    def __call__(self, p):
        arr = np.asarray(p, dtype=float)
        out = self._raw(np.clip(arr, 0.0, 1.0))
        out = np.where(arr <= 0.0, 0.0, np.where(arr >= 1.0, 1.0, out))
        return float(out) if out.ndim == 0 else out

    def validate(self):
        grid = np.linspace(0.0, 1.0, VALIDATION_GRID)
        vals = self(grid)
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"{self.family} weighting is not finite on [0,1]")
        if self.family == "tabulated" and (abs(self.table[0]) > 1e-12
                                           or abs(self.table[-1] - 1.0) > 1e-12):
            raise ValueError("tabulated weighting must map 0 to 0 and 1 to 1")
        if np.any(np.diff(vals) <= 0):
            raise ValueError(f"{self.family} weighting is not strictly increasing")

    @property
    def is_identity(self) -> bool:
        if self.family == "identity":
            return True
        if self.family in ("prelec", "tversky_kahneman"):
            return self.gamma == 1.0
        if self.family == "two_param":
            return self.gamma == 1.0 and self.delta == 1.0
        return False

    def to_dict(self) -> dict:
        out = {"family": self.family, "gamma": self.gamma, "delta": self.delta}
        if self.table is not None:
            out["table"] = list(self.table)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> WeightingFunction:
        table = data.get("table")
        return cls(data.get("family", "identity"), float(data.get("gamma", 1.0)),
                   float(data.get("delta", 1.0)), None if table is None else tuple(table))


IDENTITY = WeightingFunction()


def weight_eval(w: WeightingFunction, p) -> float:
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability {p} outside [0, 1]")
    return float(w(p))


@dataclass(frozen=True)
class Lottery:
    """Outcomes are (probability, tier) pairs; tier T means never completed."""

    outcomes: tuple

    def __post_init__(self):
        outs = tuple((float(p), int(t)) for p, t in self.outcomes)
        if any(p < 0 for p, _ in outs):
            raise ValueError("negative lottery probability")
        if abs(sum(p for p, _ in outs) - 1.0) > 1e-9:
            raise ValueError("lottery probabilities must sum to 1")
        if any(t < 0 for _, t in outs):
            raise ValueError("negative tier index")
        object.__setattr__(self, "outcomes", outs)

    def tier_probabilities(self, n_tiers: int) -> np.ndarray:
        """Probability per tier, with index n_tiers for never."""
        p = np.zeros(n_tiers + 1)
        for prob, t in self.outcomes:
            if t > n_tiers:
                raise ValueError(f"tier {t} outside 0..{n_tiers}")
            p[t] += prob
        return p

    def cumulative(self, n_tiers: int) -> np.ndarray:
        return np.minimum(np.cumsum(self.tier_probabilities(n_tiers)[:n_tiers]), 1.0)


def cpt_value(lottery: Lottery, U_row, w: WeightingFunction) -> float:
    """Rank-dependent value: outcomes sorted by decreasing utility, ties by tier."""
    U_row = np.asarray(U_row, dtype=float)
    T = U_row.size
    prob = lottery.tier_probabilities(T)
    util = np.append(U_row, 0.0)
    order = np.lexsort((np.arange(T + 1), -util))
    cum = np.minimum(np.cumsum(prob[order]), 1.0)
    weights = np.diff(np.asarray(w(cum), dtype=float), prepend=0.0)
    return float(np.sum(weights * util[order]))


def eu_value(lottery: Lottery, U_row) -> float:
    U_row = np.asarray(U_row, dtype=float)
    prob = lottery.tier_probabilities(U_row.size)
    return float(np.sum(prob[:-1] * U_row))


def h_weights(w: WeightingFunction, K: int) -> np.ndarray:
    if K < 1:
        raise ValueError("K must be at least 1")
    vals = np.asarray(w(np.arange(K + 1) / K), dtype=float)
    return np.diff(vals)


@dataclass
class EnvelopeReport:
    grid: np.ndarray
    w_values: np.ndarray
    w_star: np.ndarray
    p_star: float
    p_star_refined: float
    hull_indices: np.ndarray
    tolerance: float

    def __call__(self, p):
        return np.interp(p, self.grid, self.w_star)


def _upper_hull(x, y):
    """Indices of the upper convex hull, left to right, collinear points dropped."""
    hull = []
    for j in range(x.size):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (x[b] - x[a]) * (y[j] - y[a]) - (y[b] - y[a]) * (x[j] - x[a])
            if cross >= -1e-15:
                hull.pop()
            else:
                break
        hull.append(j)
    return np.array(hull)


def concave_envelope(w: WeightingFunction, grid_size: int = ENVELOPE_GRID) -> EnvelopeReport:
    """Least concave majorant of w on a uniform grid, and where its final chord starts.

    p_star is the left end of the last hull segment. When that segment spans a
    single grid cell there is no linear tail and p_star is reported as 1.
    """
    from scipy.optimize import minimize_scalar

    grid = np.linspace(0.0, 1.0, grid_size)
    vals = np.asarray(w(grid), dtype=float)
    hull = _upper_hull(grid, vals)
    w_star = np.interp(grid, grid[hull], vals[hull])
    left = int(hull[-2])
    if left == grid_size - 2:
        p_star = refined = 1.0
    elif left == 0:
        p_star = refined = 0.0
    else:
        p_star = float(grid[left])
        step = 1.0 / (grid_size - 1)

        def slope(p):
            return (1.0 - float(w(p))) / (1.0 - p)

        lo, hi = max(p_star - 2 * step, step), min(p_star + 2 * step, 1.0 - step)
        res = minimize_scalar(slope, bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12})
        refined = float(res.x) if slope(res.x) <= slope(p_star) else p_star
    return EnvelopeReport(grid, vals, w_star, p_star, refined, hull,
                          2.0 / (grid_size - 1))


@dataclass
class CptInstance:
    base: ProblemInstance
    weights: tuple
    K: int = 20

    def __post_init__(self):
        if isinstance(self.weights, WeightingFunction):
            self.weights = (self.weights,) * self.base.n_users
        self.weights = tuple(self.weights)
        if len(self.weights) != self.base.n_users:
            raise ValueError("one weighting function per user is required")
        if int(self.K) != self.K or self.K < 1:
            raise ValueError("K must be a positive integer")
        self.K = int(self.K)

    @property
    def h(self) -> np.ndarray:
        return np.vstack([h_weights(w, self.K) for w in self.weights])

    @property
    def delta(self) -> np.ndarray:
        return np.full(self.K, 1.0 / self.K)


@dataclass
class LotteryAllocation:
    z: np.ndarray
    h: np.ndarray

    def values(self, F) -> np.ndarray:
        """P-bar per user and alternative, shape N x K."""
        return np.einsum("kit,it->ik", self.z, F)

    def ordering_violation(self, F) -> float:
        v = self.values(F)
        return float(np.max(v[:, 1:] - v[:, :-1], initial=0.0))


@dataclass
class CptDuals:
    job: np.ndarray
    capacity: np.ndarray
    monotone: np.ndarray


@dataclass
class CptSolution:
    allocation: LotteryAllocation
    averaged: np.ndarray
    value: float
    duals: CptDuals
    lp_solution: LpSolution | None = None


@dataclass
class EuSolution:
    p: np.ndarray
    allocation: np.ndarray
    value: float


def solve_sys_eu(inst: ProblemInstance, method: str = "auto") -> EuSolution:
    res = solve_sys_lp(inst, method=method)
    return EuSolution(res.allocation / inst.job_sizes[:, None], res.allocation, res.value)


def _var(k, i, t, N, T):
    return (k * N + i) * T + t


def build_sys_cpt_k_r(ci: CptInstance, sparse: bool = False) -> LinearProgram:
    """Variables z[k,i,t] at (k*N + i)*T + t.

    Rows: job rows (i*K + k), T capacity rows, then monotone rows
    (i*(K-1) + k) stating value(k+1) - value(k) <= 0.
    """
    from scipy.sparse import coo_matrix

    inst, K = ci.base, ci.K
    N, T = inst.n_users, inst.n_tiers
    F = derive_values(inst).per_function
    h = ci.h
    c = (h.T[:, :, None] * F[None, :, :]).reshape(-1)
    rows, cols, vals = [], [], []
    k_idx, i_idx, t_idx = np.meshgrid(np.arange(K), np.arange(N), np.arange(T), indexing="ij")
    var = _var(k_idx, i_idx, t_idx, N, T).reshape(-1)
    rows.append((i_idx * K + k_idx).reshape(-1))
    cols.append(var)
    vals.append(np.ones(var.size))
    rows.append(N * K + t_idx.reshape(-1))
    cols.append(var)
    vals.append(np.full(var.size, 1.0 / K))
    if K > 1:
        base_row = N * K + T
        kk, ii, tt = np.meshgrid(np.arange(K - 1), np.arange(N), np.arange(T), indexing="ij")
        r = (base_row + ii * (K - 1) + kk).reshape(-1)
        f = F[ii, tt].reshape(-1)
        rows += [r, r]
        cols += [_var(kk + 1, ii, tt, N, T).reshape(-1), _var(kk, ii, tt, N, T).reshape(-1)]
        vals += [f, -f]
    n_rows = N * K + T + N * (K - 1)
    A = coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                   shape=(n_rows, K * N * T)).tocsr()
    b = np.concatenate([np.repeat(inst.job_sizes, K), inst.capacities, np.zeros(N * (K - 1))])
    if not sparse and n_rows * (K * N * T + n_rows) <= 400_000:
        A = A.toarray()
    return LinearProgram(c, A, b)


def equal_value_average(z, F, rtol: float = 1e-9) -> np.ndarray:
    """Replace every maximal run of equal-valued alternatives by its mean."""
    z = np.array(z, dtype=float)
    K, N, _ = z.shape
    vals = np.einsum("kit,it->ik", z, F)
    for i in range(N):
        tol = rtol * max(1.0, float(np.max(np.abs(vals[i]))))
        start = 0
        for k in range(1, K + 1):
            if k == K or abs(vals[i, k] - vals[i, k - 1]) > tol:
                if k - start > 1:
                    z[start:k, i, :] = z[start:k, i, :].mean(axis=0)
                start = k
    return z


def solve_sys_cpt_k_r(ci: CptInstance, method: str = "auto") -> CptSolution:
    inst, K = ci.base, ci.K
    N, T = inst.n_users, inst.n_tiers
    lp = build_sys_cpt_k_r(ci)
    sol = solve_lp(lp, method=method)
    if not sol.optimal:
        raise SolverError(f"SYS-CPT-K-R solve ended with status {sol.status}")
    z = sol.primal.reshape(K, N, T).copy()
    F = derive_values(inst).per_function
    y = sol.duals
    duals = CptDuals(y[:N * K].reshape(N, K).copy(), y[N * K:N * K + T].copy(),
                     y[N * K + T:].reshape(N, K - 1).copy())
    return CptSolution(LotteryAllocation(z, ci.h), equal_value_average(z, F),
                       sol.objective_value, duals, sol)


def relaxed_objective(ci: CptInstance, z) -> float:
    F = derive_values(ci.base).per_function
    return float(np.sum(ci.h * np.einsum("kit,it->ik", np.asarray(z, float), F)))


def z_from_q(ci: CptInstance, q) -> np.ndarray:
    """Alternative k (1-based) completes in the tier t with q[t-1] < k/K <= q[t]."""
    inst, K = ci.base, ci.K
    N, T = inst.n_users, inst.n_tiers
    q = np.asarray(q, dtype=float)
    if q.shape != (N, T):
        raise ValueError(f"q has shape {q.shape}, expected {(N, T)}")
    counts = np.rint(q * K)
    if np.any(np.abs(q * K - counts) > 1e-9 * K) or np.any(counts < 0) or np.any(counts > K):
        raise ValueError("q is not on the grid {k/K}")
    counts = counts.astype(int)
    if np.any(np.diff(counts, axis=1) < 0):
        raise ValueError("q must be nondecreasing across tiers")
    z = np.zeros((K, N, T))
    for i in range(N):
        prev = 0
        for t in range(T):
            z[prev:counts[i, t], i, t] = inst.job_sizes[i]
            prev = counts[i, t]
    return z


def lotteries_from_q(q) -> list:
    q = np.asarray(q, dtype=float)
    out = []
    for row in q:
        p = np.diff(np.concatenate([[0.0], row, [1.0]]))
        p = np.where(np.abs(p) < 1e-15, 0.0, p)
        out.append(Lottery(tuple((float(pt), t) for t, pt in enumerate(p) if pt > 0)))
    return out


def cpt_objective_of_q(ci: CptInstance, q) -> float:
    q = np.asarray(q, dtype=float)
    if q.shape != ci.base.utilities.shape:
        raise ValueError("q shape does not match the instance")
    if np.any(q < -1e-12) or np.any(q > 1 + 1e-12) or np.any(np.diff(q, axis=1) < -1e-12):
        raise ValueError("q must be nondecreasing across tiers and lie in [0, 1]")
    q = np.clip(q, 0.0, 1.0)
    u = derive_values(ci.base).marginal
    return float(sum(np.sum(np.asarray(w(q[i])) * u[i]) for i, w in enumerate(ci.weights)))


@dataclass
class LotteryExtraction:
    lotteries: list
    completion: np.ndarray
    q_tilde: np.ndarray
    z_tilde: np.ndarray
    V_tilde: float
    V_cpt_k: float


def completion_of_alternatives(ci: CptInstance, z) -> np.ndarray:
    """0-based completion tier per (user, alternative), T when never."""
    z = np.asarray(z, dtype=float)
    J = ci.base.job_sizes
    T = ci.base.n_tiers
    done = np.cumsum(z, axis=2) >= (J * (1.0 - COMPLETION_RTOL))[None, :, None]
    tiers = np.where(done.any(axis=2), done.argmax(axis=2), T)
    return tiers.T


def lottery_from_z(ci: CptInstance, z) -> LotteryExtraction:
    K, T = ci.K, ci.base.n_tiers
    tiers = completion_of_alternatives(ci, z)
    q = np.stack([(tiers <= t).sum(axis=1) for t in range(T)], axis=1) / K
    zt = z_from_q(ci, q)
    return LotteryExtraction(lotteries_from_q(q), tiers, q, zt,
                             relaxed_objective(ci, zt), cpt_objective_of_q(ci, q))


def _grid_options(K, T):
    """All nondecreasing count vectors in {0..K}^T."""
    return np.array([c for c in combinations_with_replacement(range(K + 1), T)], dtype=int)


def cpt_bruteforce(ci: CptInstance, limit: int = BRUTEFORCE_LIMIT):
    """Best grid lottery profile under cumulative capacity.

    A profile q is schedulable iff sum_i J_i q[i,t] <= sum_{s<=t} M_s for all t
    (earliest-deadline order of the completion masses).
    Returns (value, q).
    """
    inst, K = ci.base, ci.K
    N, T = inst.n_users, inst.n_tiers
    opts = _grid_options(K, T)
    n_opt = opts.shape[0]
    if n_opt ** N > limit:
        raise SizeGuardError(f"exact-solver size guard: {n_opt}^{N} grid profiles exceed {limit}")
    u = derive_values(inst).marginal
    qopt = opts / K
    vals = np.stack([np.asarray(w(qopt)) @ u[i] for i, w in enumerate(ci.weights)])
    cumcap = np.cumsum(inst.capacities)
    load = np.zeros((1, T))
    total = np.zeros(1)
    for i in range(N):
        load = (load[:, None, :] + inst.job_sizes[i] * qopt[None, :, :]).reshape(-1, T)
        total = (total[:, None] + vals[i][None, :]).reshape(-1)
    feasible = np.all(load <= cumcap[None, :] * (1 + 1e-12) + 1e-12, axis=1)
    total = np.where(feasible, total, -np.inf)
    best = int(np.argmax(total))
    idx = np.unravel_index(best, (n_opt,) * N) if N else ()
    q = np.stack([qopt[j] for j in idx]) if N else np.zeros((0, T))
    return float(total[best]), q


def cpt_gap_bound(ci: CptInstance, V_R: float, V_extracted: float, V_star=None,
                  tol: float = 1e-9) -> dict:
    inst = ci.base
    factor = 1.0 - inst.n_tiers * float(np.max(inst.job_sizes)) / float(np.min(inst.capacities))
    if V_star is None:
        try:
            V_star = cpt_bruteforce(ci, limit=200_000)[0]
        except SizeGuardError:
            V_star = None
    scale = tol * max(1.0, abs(V_R))
    report = {
        "factor": factor,
        "V_R": V_R,
        "V_extracted": V_extracted,
        "V_star": V_star,
        "bound_holds": bool(factor <= 0 or V_extracted >= factor * V_R - scale),
        "extracted_below_relaxed": bool(V_extracted <= V_R + scale),
    }
    if V_star is not None:
        report["sandwich_holds"] = bool(V_extracted <= V_star + scale and V_star <= V_R + scale)
    return report


def _strips(z_i, tol):
    """Maximal runs of identical alternative vectors for one user."""
    K = z_i.shape[0]
    out, start = [], 0
    for k in range(1, K + 1):
        if k == K or np.max(np.abs(z_i[k] - z_i[start])) > tol:
            out.append((start, k - 1))
            start = k
    return out


def cpt_exchange_violations(ci: CptInstance, z, tol: float = 1e-6,
                            support_tol: float = 1e-9) -> list:
    """Cases where a user sharing two tiers across a strip of identical alternatives
    would gain from trading slots with another alternative.

    The other side's weight is the mean of h over its own strip, which is just
    h_j(k') when alternative k' is not tied with a neighbour. Pass the averaged
    allocation so that equal-valued alternatives form strips.
    Returns (i, k1, k2, j, k', m, n) tuples with 0-based indices.
    """
    inst = ci.base
    F = derive_values(inst).per_function
    h = ci.h
    z = np.asarray(z, dtype=float)
    K, N, T = z.shape
    strips = [_strips(z[:, i, :], support_tol * inst.job_sizes[i]) for i in range(N)]
    strip_weight = np.zeros((N, K))
    strip_of = np.zeros((N, K), dtype=int)
    for i in range(N):
        for s_idx, (k1, k2) in enumerate(strips[i]):
            strip_weight[i, k1:k2 + 1] = h[i, k1:k2 + 1].mean()
            strip_of[i, k1:k2 + 1] = s_idx
    out = []
    for i in range(N):
        stol = support_tol * inst.job_sizes[i]
        for s_idx, (k1, k2) in enumerate(strips[i]):
            tiers = np.flatnonzero(z[k1, i, :] > stol)
            lhs_w = strip_weight[i, k1]
            for a in range(tiers.size):
                for b in range(a + 1, tiers.size):
                    m, n = int(tiers[a]), int(tiers[b])
                    lhs = lhs_w * (F[i, m] - F[i, n])
                    for j in range(N):
                        for kp in np.flatnonzero(z[:, j, m] > support_tol * inst.job_sizes[j]):
                            if j == i and strip_of[i, kp] == s_idx:
                                continue
                            rhs = strip_weight[j, kp] * (F[j, m] - F[j, n])
                            if lhs > rhs + tol * max(1.0, abs(lhs)):
                                out.append((i, k1, k2, j, int(kp), m, n))
    return out


@dataclass
class StructureReport:
    k_star: np.ndarray
    p_star: np.ndarray
    status: list
    max_spread: np.ndarray

    @property
    def passed(self) -> bool:
        return all(s != "fail" for s in self.status)


def typical_structure_check(ci: CptInstance, z, rtol: float = 1e-6,
                            envelopes: dict | None = None) -> StructureReport:
    """Alternatives from k* = min{k : (k-1)/K >= p*} onward must share one value."""
    K, N = ci.K, ci.base.n_users
    F = derive_values(ci.base).per_function
    zbar = equal_value_average(z, F)
    vals = np.einsum("kit,it->ik", zbar, F)
    envelopes = {} if envelopes is None else envelopes
    k_star = np.zeros(N, dtype=int)
    p_star = np.zeros(N)
    status, spread = [], np.zeros(N)
    for i, w in enumerate(ci.weights):
        if w not in envelopes:
            envelopes[w] = concave_envelope(w)
        ps = envelopes[w].p_star_refined
        p_star[i] = ps
        ks = int(np.ceil(ps * K - 1e-9)) + 1
        k_star[i] = ks
        if K == 1 or ps > (K - 1) / K or ks > K:
            status.append("vacuous")
            continue
        tail = vals[i, ks - 1:]
        spread[i] = float(tail.max() - tail.min())
        ok = spread[i] <= rtol * max(1e-12, float(np.max(np.abs(tail))))
        status.append("pass" if ok else "fail")
    return StructureReport(k_star, p_star, status, spread)


@dataclass
class FosdReport:
    passed: bool
    witnesses: list = field(default_factory=list)


def fosd_check(q_implemented, q_promised, tol: float = 1e-9) -> FosdReport:
    a = np.asarray(q_implemented, dtype=float)
    b = np.asarray(q_promised, dtype=float)
    if a.shape != b.shape:
        raise ValueError("lottery profiles have different shapes")
    bad = np.argwhere(a < b - tol)
    return FosdReport(bad.size == 0, [tuple(int(v) for v in w) for w in bad])


def _user_slab(h_i, F_i, J_i, q, K):
    """z[k, t] maximizing sum (h_k F_t - q_t / K) z under per-alternative caps
    and nonincreasing alternative values, over tiers with q > 0."""
    live = np.flatnonzero(q > 0)
    T = q.size
    z = np.zeros((K, T))
    if live.size == 0:
        return z
    L = live.size
    c = (h_i[:, None] * F_i[live][None, :] - q[live][None, :] / K).reshape(-1)
    A = np.zeros((K + K - 1, K * L))
    for k in range(K):
        A[k, k * L:(k + 1) * L] = 1.0
    for k in range(K - 1):
        A[K + k, (k + 1) * L:(k + 2) * L] = F_i[live]
        A[K + k, k * L:(k + 1) * L] = -F_i[live]
    b = np.concatenate([np.full(K, J_i), np.zeros(K - 1)])
    sol = solve_lp(LinearProgram(c, A, b), method="simplex")
    z[:, live] = sol.primal.reshape(K, L)
    return z


def cpt_user_problem(ci: CptInstance, i: int, mu) -> np.ndarray:
    """Budget slab m_i (K x T) that user i posts against prices mu."""
    mu = np.asarray(mu, dtype=float)
    if np.any(mu < 0):
        raise ValueError("prices must be nonnegative")
    F = derive_values(ci.base).per_function
    z = _user_slab(ci.h[i], F[i], ci.base.job_sizes[i], mu, ci.K)
    return z * mu[None, :]


def cpt_user_budgets(ci: CptInstance, mu) -> np.ndarray:
    """Budgets of every user, shape K x N x T."""
    return np.stack([cpt_user_problem(ci, i, mu) for i in range(ci.base.n_users)], axis=1)


def cpt_cloud_closed_form(m, M, delta):
    m = np.asarray(m, dtype=float)
    M = np.asarray(M, dtype=float)
    d = np.asarray(delta, dtype=float)
    S = np.einsum("k,kit->t", d, m)
    pos = S > 0
    mu = np.where(pos, S / M, 0.0)
    z = np.where(pos[None, None, :], m / np.where(pos, mu, 1.0)[None, None, :], 0.0)
    return z, mu


def cpt_han_projection(z, M, delta, eps: float = 1e-10, max_iter: int = 100000,
                       return_info: bool = False):
    """Euclidean projection of z (K x N x T) onto the delta-weighted capacity set and z >= 0."""
    z = np.asarray(z, dtype=float)
    out, it, ok = kernels.han_project(z, M, delta, eps, max_iter)
    if not ok:
        warnings.warn(f"Han projection hit the iteration cap ({max_iter})", ProjectionWarning)
    if return_info:
        return out, {"iterations": it, "converged": ok}
    return out


def cpt_allocation_value(ci: CptInstance, z) -> float:
    """Rank-dependent relaxed value after trimming each alternative to its job size."""
    z = np.clip(np.asarray(z, dtype=float), 0.0, None)
    J = ci.base.job_sizes
    cum = np.minimum(np.cumsum(z, axis=2), J[None, :, None])
    capped = np.diff(cum, axis=2, prepend=0.0)
    F = derive_values(ci.base).per_function
    vals = -np.sort(-np.einsum("kit,it->ik", capped, F), axis=1)
    return float(np.sum(ci.h * vals))


def cpt_price_tracking(ci: CptInstance, params: TrackingParams | None = None, q0=None,
                       max_rounds=None) -> TrackingResult:
    params = params or default_params(ci.base)
    M = ci.base.capacities
    d = ci.delta

    def project(m, q):
        return cpt_han_projection(m / np.maximum(q, params.price_floor)[None, None, :], M, d)

    out = run_tracking(
        user_budgets=lambda q: cpt_user_budgets(ci, q),
        budget_sum=lambda m: np.einsum("k,kit->t", d, m),
        project=project,
        objective=lambda z: cpt_allocation_value(ci, z),
        M=M, params=params, q0=q0, max_rounds=max_rounds,
    )
    return TrackingResult(**out)


def random_weights(rng: np.random.Generator, n: int, gamma_range=(0.3, 0.5),
                   delta: float = 0.7, fraction: float = 1.0) -> tuple:
    """Two-parameter weighting per user; the first round(fraction*n) users get it,
    the rest are expected-utility users."""
    gammas = rng.uniform(*gamma_range, size=n)
    n_cpt = int(round(fraction * n))
    return tuple(WeightingFunction("two_param", float(g), delta) if i < n_cpt else IDENTITY
                 for i, g in enumerate(gammas))


def lottery_report(ci: CptInstance, extraction: LotteryExtraction) -> list:
    U = ci.base.utilities
    T = ci.base.n_tiers
    out = []
    for i, lot in enumerate(extraction.lotteries):
        out.append({
            "user": i,
            "outcomes": [{"tier": (t + 1 if t < T else None), "prob": p} for p, t in lot.outcomes],
            "cpt_value": cpt_value(lot, U[i], ci.weights[i]),
            "eu_value": eu_value(lot, U[i]),
        })
    return out


def weights_from_spec(spec: Sequence | dict | None, n: int) -> tuple:
    if spec is None:
        return (IDENTITY,) * n
    if isinstance(spec, dict):
        return (WeightingFunction.from_dict(spec),) * n
    if len(spec) != n:
        raise ValueError("one weighting entry per user is required")
    return tuple(WeightingFunction.from_dict(s) for s in spec)

