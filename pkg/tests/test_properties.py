import numpy as np
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tiermarket.core import random_instance
from tiermarket.cpt import Lottery, WeightingFunction, cpt_value, fosd_check
from tiermarket.market import dual_gradient_step, han_projection
from tiermarket.scheduler import kkt_residuals, solve_sys_lp
from tiermarket.sim import MarketConfig, generate_market

finite = st.floats(-20, 20, allow_nan=False, allow_infinity=False)
weights = st.builds(
    WeightingFunction,
    st.sampled_from(["prelec", "tversky_kahneman", "two_param"]),
    st.floats(0.3, 1.0),
    st.floats(0.5, 1.5),
)


@st.composite
def instances(draw, max_users=8, max_tiers=5):
    seed = draw(st.integers(0, 2**32 - 1))
    N = draw(st.integers(1, max_users))
    T = draw(st.integers(1, max_tiers))
    return random_instance(np.random.default_rng(seed), N, T)


@st.composite
def lotteries(draw, max_tiers=4):
    T = draw(st.integers(1, max_tiers))
    raw = draw(st.lists(st.floats(0.0, 1.0), min_size=T + 1, max_size=T + 1))
    p = np.array(raw) + 1e-3
    p /= p.sum()
    U = np.sort(draw(arrays(float, T, elements=st.floats(0, 10))))[::-1]
    return T, p, U


@given(instances())
def test_vertex_sparsity(inst):
    x = solve_sys_lp(inst, method="simplex").allocation
    assert np.count_nonzero(x > 1e-9) <= inst.n_users + inst.n_tiers


@given(instances())
def test_kkt_residuals_small(inst):
    res = solve_sys_lp(inst)
    assert max(kkt_residuals(inst, res).values()) <= 1e-8


@given(lotteries(), weights, st.randoms(use_true_random=False))
def test_cpt_value_representation_invariance(lot, w, rnd):
    T, p, U = lot
    base = [(float(pt), t) for t, pt in enumerate(p)]
    split = []
    for pt, t in base:
        cut = rnd.random()
        split += [(pt * cut, t), (pt * (1 - cut), t)]
    rnd.shuffle(split)
    a = cpt_value(Lottery(tuple(base)), U, w)
    b = cpt_value(Lottery(tuple(split)), U, w)
    assert abs(a - b) <= 1e-12


@given(lotteries(), weights, st.floats(0.0, 1.0))
def test_earlier_completion_dominates(lot, w, frac):
    T, p, U = lot
    t = int(np.argmax(p[1:])) + 1
    moved = p.copy()
    moved[t - 1] += frac * p[t]
    moved[t] -= frac * p[t]
    before = Lottery(tuple((float(x), s) for s, x in enumerate(p)))
    after = Lottery(tuple((float(max(x, 0.0)), s) for s, x in enumerate(moved)))
    assert fosd_check(after.cumulative(T)[None, :], before.cumulative(T)[None, :]).passed
    assert cpt_value(after, U, w) >= cpt_value(before, U, w) - 1e-12


@given(arrays(float, st.tuples(st.integers(1, 5), st.integers(1, 4)), elements=finite),
       st.floats(0.1, 20))
def test_han_output_feasible(z, cap):
    M = np.full(z.shape[1], cap)
    out = han_projection(z, M)
    assert np.all(out >= -1e-6)
    assert np.all(out.sum(axis=0) <= M + 1e-6)


@given(arrays(float, 3, elements=st.floats(1e-3, 5)), arrays(float, 3, elements=st.floats(1, 50)),
       st.floats(0, 1))
def test_gradient_fixed_point(q, M, kappa):
    S = q * M
    assert np.allclose(dual_gradient_step(q, S[None, :], M, kappa), q, rtol=1e-12)


@given(st.integers(0, 2**63 - 1))
def test_market_generation_deterministic(seed):
    cfg = MarketConfig(days=3, n_users=4, seed=seed,
                       phases=[{"start": 1, "end": 3, "up_probability": 0.5}])
    a, b = generate_market(cfg), generate_market(cfg)
    assert np.array_equal(a.utilities, b.utilities) and np.array_equal(a.job_sizes, b.job_sizes)


@given(instances())
def test_lp_solve_deterministic(inst):
    a, b = solve_sys_lp(inst), solve_sys_lp(inst)
    assert np.array_equal(a.allocation, b.allocation)
    assert np.array_equal(a.tier_prices, b.tier_prices)
