"""Transportation simplex on a spanning-tree basis, compiled with numba.

Solves min <C, X> s.t. X 1 = a, X^T 1 = b, X >= 0 for small dense problems and
returns the flow together with dual potentials (u, v) satisfying
u_i + v_j = C_ij on the final basis.
"""
from __future__ import annotations

import numba
import numpy as np

_DANTZIG_PIVOTS = 64


@numba.njit(cache=True)
def _potentials(C, basic, u, v):
    m, n = C.shape
    seen_r = np.zeros(m, dtype=np.bool_)
    seen_c = np.zeros(n, dtype=np.bool_)
    stack = np.empty(m + n, dtype=np.int64)
    top = 0
    u[0] = 0.0
    seen_r[0] = True
    stack[top] = 0
    top += 1
    while top > 0:
        top -= 1
        node = stack[top]
        if node < m:
            i = node
            for j in range(n):
                if basic[i, j] and not seen_c[j]:
                    v[j] = C[i, j] - u[i]
                    seen_c[j] = True
                    stack[top] = m + j
                    top += 1
        else:
            j = node - m
            for i in range(m):
                if basic[i, j] and not seen_r[i]:
                    u[i] = C[i, j] - v[j]
                    seen_r[i] = True
                    stack[top] = i
                    top += 1


@numba.njit(cache=True)
def _tree_path(basic, i0, j0, path_r, path_c):
    """Cells on the basis-tree path from column j0 to row i0, in order."""
    m, n = basic.shape
    parent = np.full(m + n, -1, dtype=np.int64)
    queue = np.empty(m + n, dtype=np.int64)
    head = 0
    tail = 0
    start = m + j0
    parent[start] = start
    queue[tail] = start
    tail += 1
    while head < tail:
        node = queue[head]
        head += 1
        if node == i0:
            break
        if node < m:
            for j in range(n):
                if basic[node, j] and parent[m + j] < 0:
                    parent[m + j] = node
                    queue[tail] = m + j
                    tail += 1
        else:
            j = node - m
            for i in range(m):
                if basic[i, j] and parent[i] < 0:
                    parent[i] = node
                    queue[tail] = i
                    tail += 1
    # walk back from row i0 to column j0 collecting edges, then reverse
    k = 0
    node = i0
    while node != start:
        prev = parent[node]
        if node < m:
            path_r[k] = node
            path_c[k] = prev - m
        else:
            path_r[k] = prev
            path_c[k] = node - m
        k += 1
        node = prev
    for t in range(k // 2):
        path_r[t], path_r[k - 1 - t] = path_r[k - 1 - t], path_r[t]
        path_c[t], path_c[k - 1 - t] = path_c[k - 1 - t], path_c[t]
    return k


@numba.njit(cache=True)
def transport_simplex(a, b, C, max_iter):
    m = a.shape[0]
    n = b.shape[0]
    X = np.zeros((m, n))
    basic = np.zeros((m, n), dtype=np.bool_)
    ra = a.copy()
    rb = b.copy()
    i = 0
    j = 0
    while True:
        f = min(ra[i], rb[j])
        if f < 0.0:
            f = 0.0
        X[i, j] = f
        basic[i, j] = True
        ra[i] -= f
        rb[j] -= f
        if i == m - 1 and j == n - 1:
            break
        if i == m - 1:
            j += 1
        elif j == n - 1:
            i += 1
        elif ra[i] < rb[j]:
            i += 1
        else:
            j += 1
    # absorb rounding residue into the last cell
    X[m - 1, n - 1] += 0.5 * (ra[m - 1] + rb[n - 1])
    if X[m - 1, n - 1] < 0.0:
        X[m - 1, n - 1] = 0.0

    u = np.zeros(m)
    v = np.zeros(n)
    scale = 0.0
    for i in range(m):
        for j in range(n):
            if abs(C[i, j]) > scale:
                scale = abs(C[i, j])
    eps = 1e-13 * max(scale, 1.0)
    path_r = np.empty(m + n, dtype=np.int64)
    path_c = np.empty(m + n, dtype=np.int64)
    status = 1
    for it in range(max_iter):
        _potentials(C, basic, u, v)
        best = -eps
        ei = -1
        ej = -1
        bland = it >= _DANTZIG_PIVOTS
        for i in range(m):
            for j in range(n):
                if not basic[i, j]:
                    r = C[i, j] - u[i] - v[j]
                    if r < best:
                        best = r
                        ei = i
                        ej = j
                        if bland:
                            break
            if bland and ei >= 0:
                break
        if ei < 0:
            status = 0
            break
        k = _tree_path(basic, ei, ej, path_r, path_c)
        # cells at even positions along the path lose flow
        theta = np.inf
        li = -1
        lj = -1
        for t in range(0, k, 2):
            x = X[path_r[t], path_c[t]]
            idx = path_r[t] * n + path_c[t]
            if x < theta or (x == theta and idx < li * n + lj):
                theta = x
                li = path_r[t]
                lj = path_c[t]
        for t in range(k):
            if t % 2 == 0:
                X[path_r[t], path_c[t]] -= theta
            else:
                X[path_r[t], path_c[t]] += theta
        X[ei, ej] = theta
        basic[ei, ej] = True
        basic[li, lj] = False
        X[li, lj] = 0.0
    _potentials(C, basic, u, v)
    for i in range(m):
        for j in range(n):
            if X[i, j] < 0.0:
                X[i, j] = 0.0
    return X, u, v, status


def solve_transport(a: np.ndarray, b: np.ndarray, C: np.ndarray, max_iter: int = 100_000):
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    C = np.ascontiguousarray(C, dtype=np.float64)
    X, u, v, status = transport_simplex(a, b, C, max_iter)
    if status != 0:
        raise RuntimeError(f"transport simplex hit the pivot cap ({max_iter}) on a {C.shape} problem")
    return X, u, v


@numba.njit(cache=True)
def _w1_rows(p, q, dist, max_iter):
    """W1 between dense rows on a shared space, restricted to their supports."""
    n = p.shape[0]
    ki = 0
    kj = 0
    ii = np.empty(n, dtype=np.int64)
    jj = np.empty(n, dtype=np.int64)
    for k in range(n):
        if p[k] > 0.0:
            ii[ki] = k
            ki += 1
        if q[k] > 0.0:
            jj[kj] = k
            kj += 1
    a = np.empty(ki)
    b = np.empty(kj)
    C = np.empty((ki, kj))
    for r in range(ki):
        a[r] = p[ii[r]]
        for c in range(kj):
            C[r, c] = dist[ii[r], jj[c]]
    for c in range(kj):
        b[c] = q[jj[c]]
    if ki == 1 or kj == 1:
        total = 0.0
        for r in range(ki):
            for c in range(kj):
                total += a[r] * b[c] * C[r, c]
        return total, 0
    X, u, v, status = transport_simplex(a, b, C, max_iter)
    total = 0.0
    for r in range(ki):
        for c in range(kj):
            total += X[r, c] * C[r, c]
    return total, status


@numba.njit(cache=True)
def bisim_sweep(P, R, gamma, d, max_iter):
    """One application of the bisimulation operator; returns (table, status)."""
    n, n_actions, _ = P.shape
    out = np.zeros((n, n))
    status = 0
    for s1 in range(n):
        for s2 in range(s1 + 1, n):
            best = 0.0
            for a in range(n_actions):
                val = (1.0 - gamma) * abs(R[s1, a] - R[s2, a])
                same = True
                for k in range(n):
                    if P[s1, a, k] != P[s2, a, k]:
                        same = False
                        break
                if gamma > 0.0 and not same:
                    w, st = _w1_rows(P[s1, a], P[s2, a], d, max_iter)
                    if st != 0:
                        status = st
                    val += gamma * w
                if val > best:
                    best = val
            out[s1, s2] = best
            out[s2, s1] = best
    return out, status
