"""Independent reference computations used by the tests.

None of these import the solvers they check. They are slow and simple on
purpose: vertex enumeration for transport, naive refinement for
bisimulation, dense linear algebra and rollouts for values.
"""
from __future__ import annotations

from itertools import combinations

import numpy as np


def transport_by_vertices(a: np.ndarray, b: np.ndarray, C: np.ndarray) -> float:
    """Minimum of the transport LP by enumerating every basic feasible solution.

    A vertex of the transport polytope has at most ``m + n - 1`` non-zero
    cells. For each choice of that many cells the equality system (one row
    constraint dropped, it is implied) is solved; non-negative solutions are
    vertices and the cheapest one is the optimum.
    """
    m, n = C.shape
    k = m + n - 1
    if m == 1 or n == 1:
        return float(a @ C @ b)
    cells = [(i, j) for i in range(m) for j in range(n)]
    A = np.zeros((m + n, m * n))
    for c, (i, j) in enumerate(cells):
        A[i, c] = 1.0
        A[m + j, c] = 1.0
    A, rhs = A[1:], np.concatenate([a, b])[1:]
    subsets = np.array(list(combinations(range(m * n), k)))
    M = A[:, subsets].transpose(1, 0, 2)  # (n_subsets, k, k)
    ok = np.abs(np.linalg.det(M)) > 1e-9
    x = np.linalg.solve(M[ok], np.broadcast_to(rhs, (ok.sum(), k))[..., None])[..., 0]
    feasible = np.all(x >= -1e-12, axis=1)
    costs = np.sum(x * C.ravel()[subsets[ok]], axis=1)
    return float(np.min(costs[feasible]))


def naive_bisimulation(P: np.ndarray, R: np.ndarray, decimals: int = 9) -> np.ndarray:
    """Coarsest stable partition by repeated signature splitting; returns block labels."""
    n = P.shape[0]
    labels = np.zeros(n, dtype=int)
    while True:
        blocks = labels.max() + 1
        sigs = []
        for s in range(n):
            mass = np.zeros((P.shape[1], blocks))
            for t in range(n):
                mass[:, labels[t]] += P[s, :, t]
            sigs.append((labels[s],) + tuple(np.round(R[s], decimals)) + tuple(np.round(mass.ravel(), decimals)))
        seen: dict = {}
        new = np.array([seen.setdefault(sig, len(seen)) for sig in sigs])
        if new.max() == labels.max():
            return new
        labels = new


def same_partition(x, y) -> bool:
    x, y = np.asarray(x), np.asarray(y)
    return bool(np.all((x[:, None] == x[None, :]) == (y[:, None] == y[None, :])))


def values_by_linear_solve(P: np.ndarray, R: np.ndarray, pi: np.ndarray, gamma: float) -> np.ndarray:
    P_pi = np.einsum("sa,sat->st", pi, P)
    R_pi = np.einsum("sa,sa->s", pi, R)
    return np.linalg.solve(np.eye(len(R_pi)) - gamma * P_pi, R_pi)


def stationary_by_linear_solve(P_pi: np.ndarray) -> np.ndarray:
    n = P_pi.shape[0]
    A = np.vstack([P_pi.T - np.eye(n), np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    return np.linalg.lstsq(A, rhs, rcond=None)[0]


def monte_carlo_values(P, R, pi, gamma, start: int, n_rollouts: int, horizon: int, rng) -> tuple[float, float]:
    """Mean and standard error of truncated discounted returns from ``start``."""
    n_states, n_actions = R.shape
    s = np.full(n_rollouts, start)
    ret = np.zeros(n_rollouts)
    disc = 1.0
    cum_pi = np.cumsum(pi, axis=1)
    cum_P = np.cumsum(P, axis=2)
    for _ in range(horizon):
        a = np.minimum((rng.random(n_rollouts)[:, None] > cum_pi[s]).sum(1), n_actions - 1)
        ret += disc * R[s, a]
        s = np.minimum((rng.random(n_rollouts)[:, None] > cum_P[s, a]).sum(1), n_states - 1)
        disc *= gamma
    return float(ret.mean()), float(ret.std(ddof=1) / np.sqrt(n_rollouts))


def pair_w1_by_vertices(p: np.ndarray, q: np.ndarray, dist: np.ndarray) -> float:
    i, j = np.flatnonzero(p > 0), np.flatnonzero(q > 0)
    return transport_by_vertices(p[i], q[j], dist[np.ix_(i, j)])
