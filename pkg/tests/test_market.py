import numpy as np
import pytest
from scipy.optimize import brentq

from tiermarket.core import ProblemInstance, random_instance
from tiermarket.market import (
    ProjectionWarning,
    TrackingParams,
    default_params,
    dual_gradient_step,
    equilibrium_check,
    han_projection,
    price_tracking,
    solve_cloud_closed_form,
    solve_user_problem,
)
from tiermarket.scheduler import solve_sys_lp

from conftest import small_instances


def projection_oracle(y, M):
    """Per-tier projection onto {sum z <= M, z >= 0}: z = max(y - theta, 0)."""
    out = np.empty_like(y)
    for t in range(y.shape[1]):
        col = y[:, t]
        if np.maximum(col, 0).sum() <= M[t]:
            out[:, t] = np.maximum(col, 0)
            continue
        theta = brentq(lambda th: np.maximum(col - th, 0).sum() - M[t], 0, col.max(), xtol=1e-14)
        out[:, t] = np.maximum(col - theta, 0)
    return out


def test_user_problem_examples(toy):
    inst = ProblemInstance([[3.0]], [10], [20])
    assert solve_user_problem(inst, 0, [0.1]).tolist() == pytest.approx([1.0])
    m = solve_user_problem(toy, 0, [0.259, 0.083, 0.048])
    assert m == pytest.approx([2.59, 0, 0])
    assert np.all(solve_user_problem(toy, 1, [1.0, 1.0, 1.0]) == 0)
    with pytest.raises(ValueError):
        solve_user_problem(toy, 0, [-1, 0, 0])


def test_zero_price_tier_gets_no_budget(toy):
    assert solve_user_problem(toy, 2, [0.5, 0.5, 0.0]).tolist() == [0, 0, 0]


def test_cloud_closed_form():
    x, q = solve_cloud_closed_form(np.ones((2, 1)), [10.0])
    assert x.ravel().tolist() == [5, 5] and q.tolist() == [0.2]
    x, q = solve_cloud_closed_form([[3.0, 0.0]], [10.0, 4.0])
    assert x.tolist() == [[10, 0]] and q.tolist() == pytest.approx([0.3, 0])


def test_dual_step_examples():
    assert dual_gradient_step([1.0], [[0.0]], [5.0], 0.1).tolist() == [0.5]
    assert dual_gradient_step([0.2], [[2.0]], [10.0], 0.1).tolist() == pytest.approx([0.2])
    assert dual_gradient_step([0.2], [[4.0]], [10.0], 1e-4)[0] > 0.2


def test_dual_step_never_crosses_fixed_point(rng):
    for _ in range(200):
        q, S, M = rng.uniform(1e-4, 2), rng.uniform(0, 10), rng.uniform(1, 20)
        new = dual_gradient_step([q], [[S]], [M], rng.uniform(0, 5))[0]
        target = S / M
        assert new >= 1e-12
        if q <= target:
            assert q <= new <= target + 1e-15
        else:
            assert max(target, q / 2) - 1e-15 <= new <= q


def test_han_examples():
    assert han_projection(np.array([[6.0], [6.0]]), [10.0]) == pytest.approx(np.array([[5.0], [5.0]]))
    assert np.allclose(han_projection(np.array([[-1.0], [3.0]]), [10.0]), [[0.0], [3.0]], atol=1e-8)
    z = np.array([[1.0, 2.0], [3.0, 0.5]])
    assert np.allclose(han_projection(z, [10.0, 10.0]), z)


def test_han_matches_bisection_oracle(rng):
    for _ in range(60):
        N, T = int(rng.integers(1, 6)), int(rng.integers(1, 4))
        y = rng.normal(2, 4, (N, T))
        M = rng.uniform(0.5, 8, T)
        assert np.allclose(han_projection(y, M), projection_oracle(y, M), atol=1e-6)


def test_han_variational_inequality(rng):
    y = rng.normal(2, 4, (4, 3))
    M = np.array([3.0, 5.0, 1.0])
    z = han_projection(y, M, eps=1e-13)
    for _ in range(100):
        w = rng.uniform(0, 1, (4, 3))
        w *= np.minimum(1.0, M / w.sum(axis=0))[None, :]
        assert np.sum((y - z) * (w - z)) <= 1e-6


def test_han_iteration_cap_warns(rng):
    y = rng.normal(5, 5, (5, 3))
    with pytest.warns(ProjectionWarning):
        _, info = han_projection(y, np.ones(3), eps=1e-300, max_iter=5, return_info=True)
    assert not info["converged"]


def test_equilibrium_round_trip():
    for inst in small_instances(23, 60):
        res = solve_sys_lp(inst)
        x, q = res.allocation, res.tier_prices
        rep = equilibrium_check(inst, x, x * q[None, :], q)
        assert rep.passed, rep.failures
        assert max(rep.residuals.values()) <= 1e-6


def test_equilibrium_detects_tampering(toy):
    res = solve_sys_lp(toy)
    x, q = res.allocation, res.tier_prices
    m = x * q[None, :]
    bad = m.copy()
    bad[0, 0] += 0.5
    assert not equilibrium_check(toy, x, bad, q).passed
    slack = ProblemInstance(toy.utilities, toy.job_sizes, [10, 10, 20])
    r2 = solve_sys_lp(slack)
    q2 = r2.tier_prices.copy()
    q2[2] += 0.01
    rep = equilibrium_check(slack, r2.allocation, r2.allocation * q2[None, :], q2)
    assert not rep.slack_prices_zero


def test_toy_tracking(toy):
    res = price_tracking(toy, TrackingParams(kappa=1e-3, g_steps=40, eps=1e-4))
    assert res.converged
    assert res.objective == pytest.approx(7.5, rel=0.01)


def test_zero_step_stalls(toy):
    res = price_tracking(toy, TrackingParams(kappa=0.0, g_steps=40, eps=1e-4))
    assert res.reason == "stalled" and not res.converged


def test_loose_tolerance_stops_after_one_round(toy):
    res = price_tracking(toy, TrackingParams(kappa=1e-3, eps=1.0))
    assert res.rounds == 1 and res.converged


def test_zero_utilities_drive_prices_to_floor():
    inst = ProblemInstance(np.zeros((3, 2)), [5, 5, 5], [10, 10])
    res = price_tracking(inst, TrackingParams(kappa=0.1), max_rounds=100)
    assert np.all(res.budgets == 0)
    assert np.all(res.allocation == 0)
    assert np.all(res.prices < 1e-6)


def test_spend_within_job_size(rng):
    inst = random_instance(rng, 12, 3)
    res = price_tracking(inst, default_params(inst), max_rounds=10)
    q = res.posted_prices
    live = q > 0
    assert np.all((res.budgets[:, live] / q[live]).sum(axis=1) <= inst.job_sizes * (1 + 1e-9))
