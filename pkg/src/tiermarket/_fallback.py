"""Pure numpy implementations of the hot loops (used when the extension is absent)."""
from itertools import permutations

import numpy as np

COMPLETION_RTOL = 1e-9


def greedy_fill(order, J, M):
    J = np.asarray(J, dtype=float)
    M = np.asarray(M, dtype=float)
    N, T = J.size, M.size
    x = np.zeros((N, T))
    cap = M.copy()
    t = 0
    for i in order:
        need = J[i]
        while need > COMPLETION_RTOL * J[i] and t < T:
            take = min(need, cap[t])
            x[i, t] += take
            need -= take
            cap[t] -= take
            if cap[t] <= 0.0:
                t += 1
    return x


def ordering_welfare(order, U, J, M):
    """Welfare of the greedy fill for one ordering, via cumulative capacity."""
    U = np.asarray(U, dtype=float)
    cumcap = np.cumsum(np.asarray(M, dtype=float))
    T = cumcap.size
    total = 0.0
    used = 0.0
    t = 0
    for i in order:
        used += J[i]
        target = used - COMPLETION_RTOL * J[i]
        while t < T and cumcap[t] < target:
            t += 1
        if t == T:
            break
        total += U[i, t]
    return total


def best_ordering(U, J, M):
    """Lexicographically first ordering maximizing greedy welfare."""
    U = np.asarray(U, dtype=float)
    J = np.asarray(J, dtype=float)
    N, T = U.shape
    perms = np.array(list(permutations(range(N))), dtype=np.int64).reshape(-1, N)
    cumcap = np.cumsum(np.asarray(M, dtype=float))
    Upad = np.hstack([U, np.zeros((N, 1))])
    used = np.zeros(perms.shape[0])
    total = np.zeros(perms.shape[0])
    alive = np.ones(perms.shape[0], dtype=bool)
    for k in range(N):
        who = perms[:, k]
        used = used + J[who]
        tier = np.searchsorted(cumcap, used - COMPLETION_RTOL * J[who], side="left")
        alive &= tier < T
        total = total + np.where(alive, Upad[who, np.minimum(tier, T)], 0.0)
    best = int(np.argmax(total))
    return float(total[best]), perms[best].copy()


def han_project(y, M, delta, eps=1e-10, max_iter=100000):
    """Averaged Dykstra/Han projection onto {sum_{k,i} delta_k z[k,i,t] <= M_t} and {z >= 0}.

    y has shape (K, N, T). Returns (z, iterations, converged).
    """
    y = np.asarray(y, dtype=float)
    M = np.asarray(M, dtype=float)
    d = np.asarray(delta, dtype=float)
    K, N, T = y.shape
    w = d[:, None, None]
    denom = N * float(np.sum(d * d))
    z = y.copy()
    z1 = y.copy()
    z2 = y.copy()
    for it in range(1, max_iter + 1):
        s = np.einsum("k,kit->t", d, z1)
        corr = np.maximum((s - M) / denom, 0.0)
        z1p = z1 - w * corr[None, None, :]
        z2p = np.maximum(z2, 0.0)
        znew = 0.5 * (z1p + z2p)
        z1 = znew + z1 - z1p
        z2 = znew + z2 - z2p
        diff = np.sqrt(np.sum((znew - z) ** 2))
        ref = np.sqrt(np.sum(z * z))
        z = znew
        if diff <= eps * max(ref, 1e-300):
            return z, it, True
    return z, max_iter, False


def gradient_steps(q, S, M, kappa, steps, floor):
    """`steps` iterations of q <- q + kappa*(S/max(q, floor) - M), safeguarded.

    A step never crosses the inner fixed point S/M, never more than halves q,
    and never goes below the floor.
    """
    q = np.asarray(q, dtype=float).copy()
    S = np.asarray(S, dtype=float)
    M = np.asarray(M, dtype=float)
    target = S / M
    for _ in range(steps):
        step = q + kappa * (S / np.maximum(q, floor) - M)
        up = np.minimum(step, np.maximum(target, q))
        down = np.maximum(np.maximum(step, target), 0.5 * q)
        q = np.maximum(np.where(q <= target, up, down), floor)
    return q
