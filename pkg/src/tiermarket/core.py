"""Problem instances for tiered serverless scheduling.

An instance holds N users and T service tiers. User i needs J_i function
executions and earns U[i][t] if the last execution lands in tier t.
Tier t offers M_t execution slots.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

COMPLETION_RTOL = 1e-9


@dataclass(frozen=True)
class ProblemInstance:
    utilities: np.ndarray
    job_sizes: np.ndarray
    capacities: np.ndarray
    tier_end_times: np.ndarray | None = None

    def __post_init__(self):
        U = np.atleast_2d(np.asarray(self.utilities, dtype=float))
        J = np.asarray(self.job_sizes, dtype=float).reshape(-1)
        M = np.asarray(self.capacities, dtype=float).reshape(-1)
        if U.shape != (J.size, M.size):
            raise ValueError(
                f"utilities shape {U.shape} does not match "
                f"{J.size} users x {M.size} tiers"
            )
        tau = self.tier_end_times
        if tau is None:
            tau = np.arange(1, M.size + 1, dtype=float)
        tau = np.asarray(tau, dtype=float).reshape(-1)
        if tau.size != M.size:
            raise ValueError("tier_end_times length does not match tiers")
        for name, arr in (("utilities", U), ("job_sizes", J),
                          ("capacities", M), ("tier_end_times", tau)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_users(self) -> int:
        return self.utilities.shape[0]

    @property
    def n_tiers(self) -> int:
        return self.utilities.shape[1]


@dataclass(frozen=True)
class DerivedValues:
    marginal: np.ndarray
    per_function: np.ndarray


@dataclass
class CompletionProfile:
    completion_tier: np.ndarray
    realized_utility: np.ndarray


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


def validate_instance(inst: ProblemInstance) -> ValidationReport:
    report = ValidationReport()
    U, J, M = inst.utilities, inst.job_sizes, inst.capacities
    if not np.all(np.isfinite(U)):
        report.violations.append("non-finite utility")
    for i in range(inst.n_users):
        if np.any(U[i] < 0):
            report.violations.append(f"negative utility, user {i}")
        if np.any(np.diff(U[i]) > 0):
            report.violations.append(f"non-monotone utility, user {i}")
        if J[i] < 1 or J[i] != np.round(J[i]):
            report.violations.append(f"job size not a positive integer, user {i}")
    for t in range(inst.n_tiers):
        if not M[t] > 0:
            report.violations.append(f"nonpositive capacity, tier {t}")
    if np.any(np.diff(inst.tier_end_times) <= 0) or np.any(inst.tier_end_times <= 0):
        report.violations.append("tier end times not strictly increasing and positive")
    return report


def marginal_utilities(U: np.ndarray) -> np.ndarray:
    """u[i][t] = U[i][t] - U[i][t+1] with U[i][T+1] = 0."""
    U = np.asarray(U, dtype=float)
    nxt = np.zeros_like(U)
    nxt[:, :-1] = U[:, 1:]
    return U - nxt


def utilities_from_marginals(u: np.ndarray) -> np.ndarray:
    """Suffix sums, the inverse of `marginal_utilities`."""
    u = np.asarray(u, dtype=float)
    return np.cumsum(u[:, ::-1], axis=1)[:, ::-1]


def derive_values(inst: ProblemInstance) -> DerivedValues:
    u = marginal_utilities(inst.utilities)
    F = inst.utilities / inst.job_sizes[:, None]
    return DerivedValues(marginal=u, per_function=F)


def _check_shape(inst, x):
    x = np.asarray(x, dtype=float)
    if x.shape != inst.utilities.shape:
        raise ValueError(f"allocation shape {x.shape} != {inst.utilities.shape}")
    return x


def completion_tiers(x: np.ndarray, J: np.ndarray) -> np.ndarray:
    """0-based completion tier per user; T when the job never finishes."""
    x = np.asarray(x, dtype=float)
    J = np.asarray(J, dtype=float)
    T = x.shape[1]
    done = np.cumsum(x, axis=1) >= J[:, None] * (1.0 - COMPLETION_RTOL)
    return np.where(done.any(axis=1), done.argmax(axis=1), T)


def completion_times(inst: ProblemInstance, x) -> CompletionProfile:
    """Completion tiers are reported 1-based; T+1 marks an unfinished job."""
    x = _check_shape(inst, x)
    tiers = completion_tiers(x, inst.job_sizes)
    T = inst.n_tiers
    padded = np.hstack([inst.utilities, np.zeros((inst.n_users, 1))])
    realized = padded[np.arange(inst.n_users), tiers]
    return CompletionProfile(completion_tier=tiers + 1, realized_utility=realized)


def realized_welfare(inst: ProblemInstance, x) -> float:
    return float(completion_times(inst, x).realized_utility.sum())


def capped_allocation(inst: ProblemInstance, x) -> np.ndarray:
    """Trim each user's row so the cumulative total never exceeds J_i.

    Executions beyond the job size are useless; trimming keeps the earliest
    ones.
    """
    x = np.clip(_check_shape(inst, x), 0.0, None)
    cum = np.minimum(np.cumsum(x, axis=1), inst.job_sizes[:, None])
    out = np.diff(cum, axis=1, prepend=0.0)
    return np.clip(out, 0.0, None)


def allocation_value(inst: ProblemInstance, x) -> float:
    """Fractional welfare sum F*x of the capped allocation (the SYS-LP objective)."""
    F = derive_values(inst).per_function
    return float(np.sum(F * capped_allocation(inst, x)))


def instance_from_dict(data: dict) -> ProblemInstance:
    users = data["users"]
    U = [u["utilities"] for u in users]
    J = [u["job_size"] for u in users]
    return ProblemInstance(
        utilities=np.array(U, dtype=float).reshape(len(users), -1),
        job_sizes=np.array(J, dtype=float),
        capacities=np.array(data["capacities"], dtype=float),
        tier_end_times=data.get("tiers"),
    )


def instance_to_dict(inst: ProblemInstance) -> dict:
    return {
        "tiers": inst.tier_end_times.tolist(),
        "capacities": inst.capacities.tolist(),
        "users": [
            {"job_size": int(j) if float(j).is_integer() else float(j),
             "utilities": row.tolist()}
            for j, row in zip(inst.job_sizes, inst.utilities)
        ],
    }


def toy_instance() -> ProblemInstance:
    """Three users, three tiers, ten slots each."""
    return ProblemInstance(
        utilities=np.array([[3.0, 0.0, 0.0], [4.0, 2.5, 1.0], [2.0, 2.0, 2.0]]),
        job_sizes=np.array([10.0, 10.0, 10.0]),
        capacities=np.array([10.0, 10.0, 10.0]),
    )


def random_instance(rng: np.random.Generator, n_users: int, n_tiers: int,
                    job_range=(1, 9), capacity_range=(2, 20),
                    marginal_range=(0.0, 1.0), integer_capacity=True) -> ProblemInstance:
    u = rng.uniform(*marginal_range, size=(n_users, n_tiers))
    J = rng.integers(job_range[0], job_range[1] + 1, size=n_users)
    if integer_capacity:
        M = rng.integers(capacity_range[0], capacity_range[1] + 1, size=n_tiers)
    else:
        M = rng.uniform(*capacity_range, size=n_tiers)
    return ProblemInstance(utilities_from_marginals(u), J, M)
