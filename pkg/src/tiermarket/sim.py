"""Multi-day market simulation and the lottery experiments.

Every day each user's marginal utilities drift by +/- drift with a
phase-dependent up-probability. Three schemes allocate the day's capacity:

optimal   the system LP solved with full knowledge of utilities
tracking  one budget round per day against prices carried from yesterday
fcfs      users arrive in random order and buy at prices frozen on day 1

Randomness comes from Philox streams keyed by (purpose, day, user) under
one SeedSequence, so any stream can be regenerated on its own.
"""
from __future__ import annotations

import csv
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import (
    COMPLETION_RTOL,
    ProblemInstance,
    capped_allocation,
    derive_values,
    utilities_from_marginals,
)
from .cpt import (
    CptInstance,
    lottery_from_z,
    random_weights,
    relaxed_objective,
    solve_sys_cpt_k_r,
    solve_sys_eu,
)
from .market import TrackingParams, default_kappa, price_tracking
from .scheduler import solve_sys_lp

SCHEMES = ("optimal", "tracking", "fcfs")
PURPOSE_MARKET = 0
PURPOSE_FCFS = 1
PURPOSE_CPT = 2


def stream(seed: int, *key) -> np.random.Generator:
    """Independent Philox generator for the given key."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


@dataclass
class MarketConfig:
    days: int = 60
    n_users: int = 100
    n_tiers: int = 5
    capacity: float | list = 5000.0
    job_range: tuple = (10, 100)
    marginal_range: tuple = (5.0, 10.0)
    drift: float = 0.5
    phases: list = field(default_factory=lambda: [
        {"start": 1, "end": 30, "up_probability": 0.55},
        {"start": 31, "end": 60, "up_probability": 0.45},
    ])
    seed: int = 0
    schemes: tuple = SCHEMES
    min_marginal: float = 0.01
    kappa: float | None = None
    g_steps: int = 40
    eps: float = 1e-4
    converge_first_day: bool = True
    first_day_rounds: int = 200
    cpt: dict | None = None

    def __post_init__(self):
        self.job_range = tuple(int(v) for v in self.job_range)
        self.marginal_range = tuple(float(v) for v in self.marginal_range)
        self.schemes = tuple(self.schemes)
        self.validate()

    @property
    def capacities(self) -> np.ndarray:
        cap = np.asarray(self.capacity, dtype=float)
        return np.full(self.n_tiers, float(cap)) if cap.ndim == 0 else cap

    def validate(self):
        if self.days < 1 or self.n_users < 1 or self.n_tiers < 1:
            raise ValueError("days, n_users and n_tiers must be positive")
        if self.capacities.size != self.n_tiers or np.any(self.capacities <= 0):
            raise ValueError("capacity must be positive, one value or one per tier")
        lo, hi = self.job_range
        if lo < 1 or hi < lo:
            raise ValueError("job_range must satisfy 1 <= low <= high")
        if self.marginal_range[0] < 0 or self.marginal_range[1] < self.marginal_range[0]:
            raise ValueError("marginal_range must be nonnegative and ordered")
        if self.drift < 0 or self.min_marginal < 0:
            raise ValueError("drift and min_marginal must be nonnegative")
        bad = [s for s in self.schemes if s not in SCHEMES]
        if bad or not self.schemes:
            raise ValueError(f"unknown schemes {bad}; choose from {SCHEMES}")
        covered = []
        for ph in self.phases:
            if not 0.0 <= float(ph["up_probability"]) <= 1.0:
                raise ValueError("phase probabilities must lie in [0, 1]")
            if int(ph["start"]) > int(ph["end"]):
                raise ValueError("phase start after end")
            covered.extend(range(int(ph["start"]), int(ph["end"]) + 1))
        if sorted(covered) != list(range(1, self.days + 1)):
            raise ValueError("phases must partition days 1..days")

    def up_probability(self, day: int) -> float:
        for ph in self.phases:
            if int(ph["start"]) <= day <= int(ph["end"]):
                return float(ph["up_probability"])
        raise ValueError(f"day {day} outside every phase")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["job_range"] = list(self.job_range)
        out["marginal_range"] = list(self.marginal_range)
        out["schemes"] = list(self.schemes)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> MarketConfig:
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class MarketData:
    marginals: np.ndarray
    utilities: np.ndarray
    job_sizes: np.ndarray

    def instance(self, day: int, capacities) -> ProblemInstance:
        return ProblemInstance(self.utilities[day - 1], self.job_sizes, capacities)


def generate_market(config: MarketConfig) -> MarketData:
    N, T, D = config.n_users, config.n_tiers, config.days
    lo, hi = config.job_range
    u = np.zeros((D, N, T))
    J = np.zeros(N)
    for i in range(N):
        g = stream(config.seed, PURPOSE_MARKET, 0, i)
        J[i] = g.integers(lo, hi + 1)
        u[0, i] = g.uniform(*config.marginal_range, size=T)
    for d in range(2, D + 1):
        p = config.up_probability(d)
        for i in range(N):
            g = stream(config.seed, PURPOSE_MARKET, d, i)
            step = np.where(g.random(T) < p, config.drift, -config.drift)
            u[d - 1, i] = np.maximum(u[d - 2, i] + step, config.min_marginal)
    U = np.stack([utilities_from_marginals(u[d]) for d in range(D)])
    return MarketData(u, U, J)


@dataclass
class SchemeDay:
    welfare: float
    tier_welfare: np.ndarray
    tier_prices: np.ndarray
    user_utility: np.ndarray
    user_charge: np.ndarray
    meta: dict = field(default_factory=dict)


@dataclass
class DayResult:
    day: int
    schemes: dict


def _record(inst: ProblemInstance, x, prices, meta=None) -> SchemeDay:
    F = derive_values(inst).per_function
    xc = capped_allocation(inst, x)
    gain = F * xc
    return SchemeDay(float(gain.sum()), gain.sum(axis=0), np.asarray(prices, float).copy(),
                     gain.sum(axis=1), (xc * np.asarray(prices, float)[None, :]).sum(axis=1),
                     meta or {})


def run_scheme_optimal(inst: ProblemInstance) -> SchemeDay:
    res = solve_sys_lp(inst)
    return _record(inst, res.allocation, res.tier_prices)


def run_scheme_tracking(inst: ProblemInstance, prices, params: TrackingParams,
                        rounds: int = 1) -> SchemeDay:
    """`rounds` budget exchanges starting from `prices`; charges use the posted prices."""
    res = price_tracking(inst, params, q0=prices, max_rounds=rounds)
    meta = {"next_prices": res.prices, "rounds": res.rounds, "converged": res.converged,
            "reason": res.reason}
    return _record(inst, res.allocation, res.posted_prices, meta)


def run_scheme_fcfs(inst: ProblemInstance, prices, rng: np.random.Generator) -> SchemeDay:
    """Random arrival order; each user buys earliest tiers whose price is within F.

    A user who cannot finish the whole job within acceptable tiers is not served.
    """
    prices = np.asarray(prices, dtype=float)
    F = derive_values(inst).per_function
    J = inst.job_sizes
    cap = inst.capacities.astype(float).copy()
    x = np.zeros((inst.n_users, inst.n_tiers))
    for i in rng.permutation(inst.n_users):
        row = np.zeros(inst.n_tiers)
        need = J[i]
        for t in range(inst.n_tiers):
            if need <= COMPLETION_RTOL * J[i]:
                break
            if F[i, t] >= prices[t] and cap[t] > 0:
                take = min(need, cap[t])
                row[t] = take
                need -= take
        if need <= COMPLETION_RTOL * J[i]:
            x[i] = row
            cap -= row
    return _record(inst, x, prices)


@dataclass
class MarketRun:
    config: MarketConfig
    days: list

    def welfare(self, scheme: str) -> np.ndarray:
        return np.array([d.schemes[scheme].welfare for d in self.days])


def tracking_params(config: MarketConfig, inst: ProblemInstance) -> TrackingParams:
    kappa = config.kappa if config.kappa is not None else default_kappa(inst, config.g_steps)
    return TrackingParams(kappa=kappa, g_steps=config.g_steps, eps=config.eps,
                          max_rounds=max(config.first_day_rounds, 1))


def run_market(config: MarketConfig, data: MarketData | None = None) -> MarketRun:
    data = data or generate_market(config)
    M = config.capacities
    want = set(config.schemes)
    days = []
    q_track = np.ones(config.n_tiers)
    frozen = None
    params = None
    for d in range(1, config.days + 1):
        inst = data.instance(d, M)
        out = {}
        need_opt = "optimal" in want or (d == 1 and "fcfs" in want)
        opt = run_scheme_optimal(inst) if need_opt else None
        if "optimal" in want:
            out["optimal"] = opt
        if "tracking" in want:
            if params is None:
                params = tracking_params(config, inst)
            rounds = config.first_day_rounds if (d == 1 and config.converge_first_day) else 1
            day = run_scheme_tracking(inst, q_track, params, rounds)
            q_track = day.meta["next_prices"]
            day.meta["price_change"] = float(np.max(
                np.abs(q_track - day.tier_prices) / np.maximum(day.tier_prices, 1e-300)))
            out["tracking"] = day
        if "fcfs" in want:
            if frozen is None:
                frozen = opt.tier_prices.copy()
            out["fcfs"] = run_scheme_fcfs(inst, frozen, stream(config.seed, PURPOSE_FCFS, d))
        days.append(DayResult(d, out))
    return MarketRun(config, days)


def _fmt(v) -> str:
    return format(float(v), ".17g")


def write_market_csvs(run: MarketRun, out_dir) -> list:
    os.makedirs(out_dir, exist_ok=True)
    schemes = [s for s in SCHEMES if s in run.config.schemes]
    paths = [os.path.join(out_dir, n) for n in
             ("market_summary.csv", "tier_series.csv", "user_series.csv")]
    with open(paths[0], "w", newline="") as fs, open(paths[1], "w", newline="") as ft, \
            open(paths[2], "w", newline="") as fu:
        ws, wt, wu = (csv.writer(f, lineterminator="\n") for f in (fs, ft, fu))
        ws.writerow(["day", "scheme", "welfare"])
        wt.writerow(["day", "scheme", "tier", "welfare", "price"])
        wu.writerow(["day", "scheme", "user", "utility", "charge"])
        for day in run.days:
            for s in schemes:
                r = day.schemes[s]
                ws.writerow([day.day, s, _fmt(r.welfare)])
                for t in range(r.tier_welfare.size):
                    wt.writerow([day.day, s, t + 1, _fmt(r.tier_welfare[t]),
                                 _fmt(r.tier_prices[t])])
                for i in range(r.user_utility.size):
                    wu.writerow([day.day, s, i, _fmt(r.user_utility[i]), _fmt(r.user_charge[i])])
    return paths


CPT_DEFAULTS = {
    "n_users": 100,
    "n_tiers": 5,
    "capacity": 1000.0,
    "job_range": [10, 99],
    "utility_range": [50.0, 100.0],
    "delta": 0.7,
    "gamma_range": [0.3, 0.5],
    "K": 20,
}


def cpt_settings(cfg: dict | None) -> dict:
    out = dict(CPT_DEFAULTS)
    if cfg:
        unknown = set(cfg) - set(CPT_DEFAULTS) - {"scales", "fractions", "seeds"}
        if unknown:
            raise ValueError(f"unknown CPT settings: {sorted(unknown)}")
        out.update(cfg)
    return out


def cpt_experiment_instance(cfg: dict, seed: int, scale: float = 1.0) -> tuple:
    """Utilities are T draws from utility_range sorted in decreasing order;
    job sizes are integers in job_range multiplied by `scale`."""
    cfg = cpt_settings(cfg)
    N, T = cfg["n_users"], cfg["n_tiers"]
    g = stream(seed, PURPOSE_CPT)
    U = -np.sort(-g.uniform(*cfg["utility_range"], size=(N, T)), axis=1)
    J = g.integers(cfg["job_range"][0], cfg["job_range"][1] + 1, size=N) * scale
    gammas_rng = stream(seed, PURPOSE_CPT, 1)
    weights = random_weights(gammas_rng, N, tuple(cfg["gamma_range"]), cfg["delta"])
    return ProblemInstance(U, J, np.full(T, float(cfg["capacity"]))), weights


def _replicated(x, K):
    return np.repeat(np.asarray(x, float)[None, :, :], K, axis=0)


def demand_scaling_experiment(cfg: dict | None = None, scales=(1, 2, 3, 4, 5),
                              seeds=(0, 1, 2, 3, 4)) -> list:
    """CPT value of the lottery-aware allocation against the expected-utility one.

    Both allocations are turned into grid lotteries by the same extraction and
    valued under every user's own weighting.
    """
    cfg = cpt_settings(cfg)
    rows = []
    for seed in seeds:
        for scale in scales:
            inst, weights = cpt_experiment_instance(cfg, seed, scale)
            ci = CptInstance(inst, weights, cfg["K"])
            sol = solve_sys_cpt_k_r(ci)
            cpt_val = lottery_from_z(ci, sol.averaged).V_cpt_k
            eu = solve_sys_eu(inst)
            eu_val = lottery_from_z(ci, _replicated(eu.allocation, ci.K)).V_cpt_k
            rows.append({"seed": seed, "scale": scale, "cpt_scheme": cpt_val,
                         "eu_scheme": eu_val, "advantage": cpt_val / eu_val - 1.0,
                         "relaxed": sol.value})
    return rows


def cpt_fraction_experiment(cfg: dict | None = None, fractions=(0.0, 0.25, 0.5, 0.75, 1.0),
                            seed: int = 0, scale: float = 1.0) -> list:
    """Relaxed CPT welfare of the lottery-aware scheme and of the EU scheme
    as more users weigh probabilities."""
    cfg = cpt_settings(cfg)
    base, _ = cpt_experiment_instance(cfg, seed, scale)
    eu = solve_sys_eu(base)
    rows = []
    for frac in fractions:
        weights = random_weights(stream(seed, PURPOSE_CPT, 1), base.n_users,
                                 tuple(cfg["gamma_range"]), cfg["delta"], fraction=frac)
        ci = CptInstance(base, weights, cfg["K"])
        sol = solve_sys_cpt_k_r(ci)
        eu_val = relaxed_objective(ci, _replicated(eu.allocation, ci.K))
        rows.append({"fraction": frac, "cpt_aware": sol.value, "eu_scheme": eu_val,
                     "gap": sol.value - eu_val})
    return rows
