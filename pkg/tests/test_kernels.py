import numpy as np
import pytest

from tiermarket import _fallback, kernels

compiled = pytest.importorskip("tiermarket._kernels")


def test_backend_reported():
    assert kernels.BACKEND in ("compiled", "python")


@pytest.mark.parametrize("seed", range(5))
def test_best_ordering_agrees(seed):
    rng = np.random.default_rng(seed)
    N, T = 6, 3
    U = np.sort(rng.uniform(0, 10, (N, T)), axis=1)[:, ::-1].copy()
    J = rng.integers(1, 8, N).astype(float)
    M = rng.integers(2, 15, T).astype(float)
    a, b = _fallback.best_ordering(U, J, M), compiled.best_ordering(U, J, M)
    assert a[0] == pytest.approx(b[0], abs=1e-12)
    assert _fallback.ordering_welfare(b[1], U, J, M) == pytest.approx(a[0], abs=1e-12)


def test_greedy_fill_agrees():
    rng = np.random.default_rng(1)
    J = rng.integers(1, 30, 50).astype(float)
    order = rng.permutation(50)
    M = np.full(4, 200.0)
    assert np.array_equal(_fallback.greedy_fill(order, J, M), compiled.greedy_fill(order, J, M))


def test_han_project_agrees():
    rng = np.random.default_rng(2)
    y = rng.normal(3, 4, (3, 6, 4))
    args = (np.full(4, 8.0), np.full(3, 1 / 3), 1e-12, 100000)
    za, ia, oka = _fallback.han_project(y, *args)
    zb, ib, okb = compiled.han_project(y, *args)
    assert oka and okb and ia == ib
    assert np.allclose(za, zb, atol=1e-12)


def test_gradient_steps_agree():
    rng = np.random.default_rng(3)
    for _ in range(20):
        q = rng.uniform(1e-6, 2, 5)
        S = rng.uniform(0, 50, 5) * (rng.random(5) > 0.2)
        M = rng.uniform(1, 100, 5)
        a = _fallback.gradient_steps(q, S, M, 0.01, 40, 1e-12)
        b = compiled.gradient_steps(q, S, M, 0.01, 40, 1e-12)
        assert np.allclose(a, b, rtol=1e-13, atol=0)
