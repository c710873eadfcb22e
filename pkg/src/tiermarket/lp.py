"""Dense linear programming: maximize c.x subject to A x <= b, x >= 0.

The default solver is a two-phase revised simplex with an explicit basis
inverse. It returns a basic (vertex) solution together with the row duals.
Pricing is Dantzig's largest reduced cost. After 3*(rows+cols) consecutive
degenerate pivots it switches to Bland's rule for the rest of the solve.

Programs too large for a dense basis inverse are handed to HiGHS' dual
simplex through scipy, which also returns a vertex with duals.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PIVOT_TOL = 1e-10
FEAS_TOL = 1e-8
REFACTOR_EVERY = 64
DENSE_LIMIT = 400_000


def _issparse(A) -> bool:
    try:
        from scipy.sparse import issparse
    except ImportError:
        return False
    return issparse(A)


@dataclass
class LinearProgram:
    """Canonical form. The matrix is dense; a scipy sparse matrix is accepted
    only as a memory-saving hand-off to the HiGHS route."""

    objective: np.ndarray
    constraint_matrix: np.ndarray
    rhs: np.ndarray
    variable_names: list | None = None
    constraint_names: list | None = None

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float).reshape(-1)
        A = self.constraint_matrix
        if _issparse(A):
            A = A.tocsr().astype(float)
            values = A.data
        else:
            A = np.asarray(A, dtype=float)
            if A.ndim == 1:
                A = A.reshape(1, -1) if self.objective.size > 1 or A.size == 1 else A.reshape(-1, 1)
            if A.size == 0:
                A = A.reshape(0, self.objective.size)
            values = A
        self.constraint_matrix = A
        self.rhs = np.asarray(self.rhs, dtype=float).reshape(-1)
        m, n = A.shape
        if n != self.objective.size or m != self.rhs.size:
            raise ValueError(
                f"dimension mismatch: A is {A.shape}, c has {self.objective.size}, "
                f"b has {self.rhs.size}"
            )
        if not (np.all(np.isfinite(values)) and np.all(np.isfinite(self.rhs))
                and np.all(np.isfinite(self.objective))):
            raise ValueError("non-finite entries in linear program")

    @property
    def shape(self):
        return self.constraint_matrix.shape


@dataclass
class LpSolution:
    status: str
    primal: np.ndarray
    duals: np.ndarray
    objective_value: float
    basis: tuple = ()
    iterations: int = 0
    method: str = "simplex"

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


@dataclass
class CertificateReport:
    primal_residual: float
    dual_infeasibility: float
    duality_gap: float
    complementarity: float
    tolerances: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        t = self.tolerances
        return (self.primal_residual <= t["primal"]
                and self.dual_infeasibility <= t["dual"]
                and self.duality_gap <= t["gap"])


class _Simplex:
    """Revised simplex over columns [A | S | artificials] with S = diag(sign)."""

    def __init__(self, A, b):
        m, n = A.shape
        self.m, self.n = m, n
        sign = np.where(b < 0, -1.0, 1.0)
        self.sign = sign
        art_rows = np.flatnonzero(sign < 0)
        n_art = art_rows.size
        cols = np.zeros((m, n + m + n_art))
        cols[:, :n] = A * sign[:, None]
        cols[np.arange(m), n + np.arange(m)] = sign
        cols[art_rows, n + m + np.arange(n_art)] = 1.0
        self.cols = cols
        self.b = b * sign
        self.n_art = n_art
        basis = n + np.arange(m)
        basis[art_rows] = n + m + np.arange(n_art)
        self.basis = basis
        self.Binv = np.eye(m)
        self.xB = self.b.copy()
        self.iterations = 0
        self.degenerate_limit = 3 * (m + n)

    def _refactor(self):
        B = self.cols[:, self.basis]
        self.Binv = np.linalg.inv(B)
        self.xB = self.Binv @ self.b
        self.xB[np.abs(self.xB) < 1e-13] = 0.0

    def run(self, cost, allowed):
        """Maximize cost over the current feasible basis. Returns 'optimal' or 'unbounded'."""
        m = self.m
        scale = max(1.0, float(np.max(np.abs(cost))) if cost.size else 1.0)
        dtol = 1e-9 * scale
        degenerate = 0
        bland = False
        since_refactor = 0
        while True:
            cB = cost[self.basis]
            y = cB @ self.Binv
            d = cost - y @ self.cols
            d[self.basis] = 0.0
            d[~allowed] = 0.0
            candidates = np.flatnonzero(d > dtol)
            if candidates.size == 0:
                return "optimal"
            if bland:
                j = int(candidates[0])
            else:
                j = int(candidates[np.argmax(d[candidates])])
            col = self.Binv @ self.cols[:, j]
            pos = np.flatnonzero(col > PIVOT_TOL)
            if pos.size == 0:
                return "unbounded"
            ratios = np.maximum(self.xB[pos], 0.0) / col[pos]
            best = ratios.min()
            ties = pos[ratios <= best + 1e-12 * max(1.0, best)]
            # among ties take the smallest basic column index
            r = int(ties[np.argmin(self.basis[ties])])
            step = max(self.xB[r], 0.0) / col[r]
            self.xB -= step * col
            self.xB[r] = step
            self.xB[np.abs(self.xB) < 1e-13] = 0.0
            piv = col[r]
            row_r = self.Binv[r] / piv
            self.Binv -= np.outer(col, row_r)
            self.Binv[r] = row_r
            self.basis[r] = j
            self.iterations += 1
            since_refactor += 1
            if since_refactor >= REFACTOR_EVERY:
                self._refactor()
                since_refactor = 0
            if step <= 1e-12:
                degenerate += 1
                if degenerate > self.degenerate_limit:
                    bland = True
            else:
                degenerate = 0
            if self.iterations > 50 * (m + self.cols.shape[1]) + 1000:
                raise RuntimeError("simplex iteration limit exceeded")

    def drive_out_artificials(self):
        """Pivot zero-level artificials out of the basis where possible."""
        first_art = self.n + self.m
        for r in range(self.m):
            if self.basis[r] < first_art:
                continue
            row = self.Binv[r] @ self.cols[:, :first_art]
            row[self.basis[self.basis < first_art]] = 0.0
            cand = np.flatnonzero(np.abs(row) > 1e-9)
            if cand.size == 0:
                continue
            j = int(cand[0])
            col = self.Binv @ self.cols[:, j]
            piv = col[r]
            row_r = self.Binv[r] / piv
            self.Binv -= np.outer(col, row_r)
            self.Binv[r] = row_r
            self.basis[r] = j
        self._refactor()


def _solve_simplex(lp: LinearProgram) -> LpSolution:
    A, b, c = lp.constraint_matrix, lp.rhs, lp.objective
    if _issparse(A):
        A = A.toarray()
    m, n = A.shape
    if m == 0:
        if np.any(c > 0):
            return LpSolution("unbounded", np.zeros(n), np.zeros(0), np.inf)
        return LpSolution("optimal", np.zeros(n), np.zeros(0), 0.0)
    sx = _Simplex(A, b)
    ncols = sx.cols.shape[1]
    first_art = n + m
    if sx.n_art:
        cost1 = np.zeros(ncols)
        cost1[first_art:] = -1.0
        sx.run(cost1, np.ones(ncols, dtype=bool))
        infeas = float(np.sum(sx.xB[sx.basis >= first_art]))
        if infeas > FEAS_TOL * (1.0 + np.max(np.abs(b))):
            return LpSolution("infeasible", np.zeros(n), np.zeros(m), np.nan,
                              iterations=sx.iterations)
        sx.drive_out_artificials()
    allowed = np.ones(ncols, dtype=bool)
    allowed[first_art:] = False
    cost = np.zeros(ncols)
    cost[:n] = c
    status = sx.run(cost, allowed)
    if status == "unbounded":
        return LpSolution("unbounded", np.zeros(n), np.zeros(m), np.inf,
                          iterations=sx.iterations)
    sx._refactor()
    full = np.zeros(ncols)
    full[sx.basis] = np.maximum(sx.xB, 0.0)
    x = full[:n]
    y = (cost[sx.basis] @ sx.Binv) * sx.sign
    y[np.abs(y) < 1e-13] = 0.0
    y = np.maximum(y, 0.0)
    basis = tuple(sorted(int(k) for k in sx.basis))
    return LpSolution("optimal", x, y, float(c @ x), basis, sx.iterations, "simplex")


def _solve_highs(lp: LinearProgram) -> LpSolution:
    from scipy.optimize import linprog

    A, b, c = lp.constraint_matrix, lp.rhs, lp.objective
    m, n = A.shape
    res = linprog(-c, A_ub=A, b_ub=b, bounds=(0, None), method="highs-ds")
    if res.status == 2:
        return LpSolution("infeasible", np.zeros(n), np.zeros(m), np.nan, method="highs")
    if res.status == 3:
        return LpSolution("unbounded", np.zeros(n), np.zeros(m), np.inf, method="highs")
    if res.status != 0:
        raise RuntimeError(f"HiGHS failed: {res.message}")
    x = np.maximum(res.x, 0.0)
    y = np.maximum(-res.ineqlin.marginals, 0.0)
    slack = b - A @ x
    basis = tuple(int(k) for k in np.flatnonzero(x > 0)) + tuple(
        n + int(k) for k in np.flatnonzero(slack > FEAS_TOL))
    return LpSolution("optimal", x, y, float(c @ x), basis, int(res.nit), "highs")


def solve_lp(lp: LinearProgram, method: str = "auto") -> LpSolution:
    """Solve the LP; `method` is 'simplex', 'highs' or 'auto' (by size)."""
    if method == "auto":
        m, n = lp.shape
        method = "simplex" if m * (n + m) <= DENSE_LIMIT else "highs"
    if method == "simplex":
        return _solve_simplex(lp)
    if method == "highs":
        return _solve_highs(lp)
    raise ValueError(f"unknown LP method {method!r}")


def dual_certificate_check(lp: LinearProgram, sol: LpSolution) -> CertificateReport:
    A, b, c = lp.constraint_matrix, lp.rhs, lp.objective
    x, y = np.asarray(sol.primal, float), np.asarray(sol.duals, float)
    primal = max(float(np.max(A @ x - b, initial=0.0)), float(np.max(-x, initial=0.0)))
    dual_inf = max(float(np.max(c - A.T @ y, initial=0.0)), float(np.max(-y, initial=0.0)))
    cx, by = float(c @ x), float(b @ y)
    gap = abs(cx - by)
    comp = float(np.max(np.abs(y * (b - A @ x)), initial=0.0))
    tol = {
        "primal": FEAS_TOL * (1.0 + float(np.max(np.abs(b), initial=0.0))),
        "dual": FEAS_TOL,
        "gap": 1e-7 * (1.0 + abs(cx)),
    }
    return CertificateReport(primal, dual_inf, gap, comp, tol)
