"""Exact probability metrics between finitely supported distributions.

Wasserstein-1 is the optimum of the transport linear program, Total Variation
and the energy distance are closed-form sums, and KL enters only through
Pinsker's inequality. Each Norm-MMD kind carries the function seminorm that
controls ``|E_P f - E_Q f|``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
import numpy as np

from ._transport import solve_transport
from .mdp_core import InvalidInputError

TRIANGLE_TOL = 1e-9
ENERGY_CLAMP = 1e-12


class AbsoluteContinuityError(ValueError):
    pass


class UnsupportedDimensionError(ValueError):
    pass


class MetricKind(enum.Enum):
    WASSERSTEIN = "wasserstein"
    TOTAL_VARIATION = "tv"
    ENERGY = "energy"
    KL = "kl"

    @property
    def seminorm_name(self) -> str:
        return {
            MetricKind.WASSERSTEIN: "lipschitz",
            MetricKind.TOTAL_VARIATION: "oscillation",
            MetricKind.ENERGY: "derivative-l1",
            MetricKind.KL: "none",
        }[self]

    @property
    def is_norm_mmd(self) -> bool:
        return self is not MetricKind.KL

    @classmethod
    def parse(cls, name) -> "MetricKind":
        if isinstance(name, cls):
            return name
        aliases = {"w": "wasserstein", "w1": "wasserstein", "total_variation": "tv", "e": "energy"}
        key = str(name).lower()
        return cls(aliases.get(key, key))


@dataclass(frozen=True, eq=False)
class MetricSpace:
    """Finite (pseudo)metric space given by a distance table, optionally embedded in R^k."""

    dist: np.ndarray
    coords: np.ndarray | None = None

    def __post_init__(self):
        d = np.array(self.dist, dtype=float, copy=True)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise InvalidInputError(f"distance table must be square, got {d.shape}")
        if not np.all(np.isfinite(d)) or np.any(d < 0):
            raise InvalidInputError("distances must be finite and non-negative")
        if np.max(np.abs(d - d.T), initial=0.0) > 0:
            raise InvalidInputError("distance table is not symmetric")
        if np.any(np.diag(d) != 0):
            raise InvalidInputError("distance table has a non-zero diagonal")
        d.setflags(write=False)
        object.__setattr__(self, "dist", d)
        if self.coords is not None:
            c = np.array(self.coords, dtype=float, copy=True)
            if c.ndim == 1:
                c = c[:, None]
            if c.shape[0] != d.shape[0]:
                raise InvalidInputError("coords and distance table disagree on the number of points")
            c.setflags(write=False)
            object.__setattr__(self, "coords", c)

    @classmethod
    def euclidean(cls, coords) -> "MetricSpace":
        c = np.asarray(coords, dtype=float)
        if c.ndim == 1:
            c = c[:, None]
        diff = c[:, None, :] - c[None, :, :]
        d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        return cls(d, c)

    @property
    def n_points(self) -> int:
        return self.dist.shape[0]

    @property
    def diameter(self) -> float:
        return float(self.dist.max(initial=0.0))

    def triangle_violation(self, max_exhaustive: int = 64, n_samples: int = 200_000, seed: int = 0) -> float:
        """Largest ``d(x,z) - d(x,y) - d(y,z)``; exhaustive for small spaces, sampled beyond."""
        return triangle_violation(self.dist, max_exhaustive, n_samples, seed)


def triangle_violation(d: np.ndarray, max_exhaustive: int = 64, n_samples: int = 200_000, seed: int = 0) -> float:
    n = d.shape[0]
    if n <= max_exhaustive:
        # d[x, z] <= min_y d[x, y] + d[y, z] for every pair, one row of x at a time
        worst = 0.0
        for x in range(n):
            through = np.min(d[x][:, None] + d, axis=0)
            worst = max(worst, float(np.max(d[x] - through)))
        return worst
    rng = np.random.default_rng(seed)
    x, y, z = rng.integers(0, n, size=(3, n_samples))
    return float(max(0.0, np.max(d[x, z] - d[x, y] - d[y, z])))


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        s = np.array(self.support, dtype=np.int64, copy=True).ravel()
        w = np.array(self.weights, dtype=float, copy=True).ravel()
        if s.shape != w.shape:
            raise InvalidInputError("support and weights differ in length")
        if s.size == 0:
            raise InvalidInputError("empty distribution")
        if np.any(s < 0):
            raise InvalidInputError("support indices must be non-negative")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InvalidInputError("weights must be finite and non-negative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise InvalidInputError(f"weights sum to {w.sum()!r}, not 1")
        s.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "support", s)
        object.__setattr__(self, "weights", w)

    @classmethod
    def point_mass(cls, index: int) -> "DiscreteDistribution":
        return cls([index], [1.0])

    @classmethod
    def from_dense(cls, probs, atol: float = 0.0) -> "DiscreteDistribution":
        probs = np.asarray(probs, dtype=float)
        idx = np.flatnonzero(probs > atol)
        return cls(idx, probs[idx] / probs[idx].sum() if atol > 0 else probs[idx])

    def dense(self, n_points: int) -> np.ndarray:
        if self.support.max() >= n_points:
            raise InvalidInputError(f"support index {self.support.max()} outside a space of {n_points} points")
        out = np.zeros(n_points)
        np.add.at(out, self.support, self.weights)
        return out

    def to_dict(self) -> dict:
        return {"support": self.support.tolist(), "weights": self.weights.tolist()}


def _union_dense(p: DiscreteDistribution, q: DiscreteDistribution) -> tuple[np.ndarray, np.ndarray]:
    n = int(max(p.support.max(), q.support.max())) + 1
    return p.dense(n), q.dense(n)


@dataclass(frozen=True)
class TransportResult:
    cost: float
    coupling: np.ndarray  # over (atoms of p) x (atoms of q)
    p_atoms: np.ndarray
    q_atoms: np.ndarray
    u: np.ndarray
    v: np.ndarray

    @property
    def dual_value(self) -> float:
        return float(self.u @ self.coupling.sum(axis=1) + self.v @ self.coupling.sum(axis=0))


def wasserstein_dense(p: np.ndarray, q: np.ndarray, dist: np.ndarray) -> float:
    """W1 between two dense probability vectors on a common finite space."""
    i = np.flatnonzero(p > 0)
    j = np.flatnonzero(q > 0)
    if i.size == 1 or j.size == 1:
        return float(p[i] @ dist[np.ix_(i, j)] @ q[j])
    X, _, _ = solve_transport(p[i], q[j], dist[np.ix_(i, j)])
    return float(np.sum(X * dist[np.ix_(i, j)]))


def wasserstein1_full(p: DiscreteDistribution, q: DiscreteDistribution, space: MetricSpace) -> TransportResult:
    pd, qd = p.dense(space.n_points), q.dense(space.n_points)
    i = np.flatnonzero(pd > 0)
    j = np.flatnonzero(qd > 0)
    C = space.dist[np.ix_(i, j)]
    X, u, v = solve_transport(pd[i], qd[j], C)
    return TransportResult(float(np.sum(X * C)), X, i, j, u, v)


def wasserstein1(p: DiscreteDistribution, q: DiscreteDistribution, space: MetricSpace) -> float:
    return wasserstein1_full(p, q, space).cost


def total_variation(p: DiscreteDistribution, q: DiscreteDistribution) -> float:
    pd, qd = _union_dense(p, q)
    return 0.5 * float(np.abs(pd - qd).sum())


def energy_distance_dense(p: np.ndarray, q: np.ndarray, dist: np.ndarray) -> float:
    # 2 pDq - pDp - qDq == -(p - q) D (p - q); the difference form avoids cancellation
    delta = p - q
    val = -(delta @ dist @ delta)
    if val < 0.0:
        if val < -ENERGY_CLAMP:
            raise ArithmeticError(f"energy distance evaluated to {val!r}; ground distance is not of negative type")
        val = 0.0
    return float(val)


def energy_distance(p: DiscreteDistribution, q: DiscreteDistribution, space: MetricSpace) -> float:
    """``2 E|x-y| - E|x-x'| - E|y-y'|`` by exact double sums over the supports."""
    n = space.n_points
    return energy_distance_dense(p.dense(n), q.dense(n), space.dist)


def energy_mmd_dense(p: np.ndarray, q: np.ndarray, dist: np.ndarray) -> float:
    return float(np.sqrt(0.5 * energy_distance_dense(p, q, dist)))


def energy_mmd(p: DiscreteDistribution, q: DiscreteDistribution, space: MetricSpace) -> float:
    """The Norm-MMD form of the energy distance, ``sqrt(E / 2)``.

    On the line this equals ``||F_P - F_Q||_2`` and is dual to the seminorm
    ``||f'||_2`` (see ``dual_seminorm``), so ``|E_P f - E_Q f| <= ||f'||_2 * energy_mmd``.
    """
    n = space.n_points
    return energy_mmd_dense(p.dense(n), q.dense(n), space.dist)


def kl_divergence(p: DiscreteDistribution, q: DiscreteDistribution) -> float:
    pd, qd = _union_dense(p, q)
    pos = pd > 0
    if np.any(qd[pos] <= 0):
        bad = int(np.flatnonzero(pos & (qd <= 0))[0])
        raise AbsoluteContinuityError(f"p puts mass {pd[bad]} on point {bad} where q has none")
    return float(np.sum(pd[pos] * np.log(pd[pos] / qd[pos])))


def pinsker_tv_bound(kl: float) -> float:
    return float(np.sqrt(max(kl, 0.0) / 2.0))


def distance_dense(kind: MetricKind, p: np.ndarray, q: np.ndarray, dist: np.ndarray) -> float:
    """The Norm-MMD ``D(P, Q)`` used in transition losses, for dense vectors."""
    if kind is MetricKind.WASSERSTEIN:
        return wasserstein_dense(p, q, dist)
    if kind is MetricKind.TOTAL_VARIATION:
        return 0.5 * float(np.abs(p - q).sum())
    if kind is MetricKind.ENERGY:
        return energy_mmd_dense(p, q, dist)
    raise InvalidInputError("KL is a divergence, not a Norm-MMD; go through pinsker_tv_bound")


def distance(kind: MetricKind, p: DiscreteDistribution, q: DiscreteDistribution, space: MetricSpace) -> float:
    n = space.n_points
    return distance_dense(MetricKind.parse(kind), p.dense(n), q.dense(n), space.dist)


def lipschitz_seminorm(values: np.ndarray, dist: np.ndarray) -> tuple[float, tuple[int, int] | None]:
    """Max of ``|f(x) - f(y)| / d(x, y)`` with its witness pair.

    Raises ``ZeroDivisionError``-style ``InvalidInputError`` when two points at
    distance zero carry different values.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    if n < 2:
        return 0.0, None
    i, j = np.triu_indices(n, 1)
    diff = np.abs(values[i] - values[j])
    d = dist[i, j]
    collapsed = (d == 0) & (diff > 0)
    if np.any(collapsed):
        k = int(np.flatnonzero(collapsed)[0])
        raise InfiniteConstantError((int(i[k]), int(j[k])), float(diff[k]))
    ratio = np.where(d > 0, diff / np.where(d > 0, d, 1.0), 0.0)
    k = int(np.argmax(ratio))
    return float(ratio[k]), (int(i[k]), int(j[k]))


class InfiniteConstantError(InvalidInputError):
    def __init__(self, pair, gap):
        self.pair = pair
        self.gap = gap
        super().__init__(f"points {pair[0]} and {pair[1]} are at distance 0 but differ by {gap:.3e}")


def _sorted_line(coords: np.ndarray | None, n: int) -> tuple[np.ndarray, np.ndarray]:
    if coords is None or coords.shape[1] != 1:
        dim = None if coords is None else coords.shape[1]
        raise UnsupportedDimensionError(f"derivative seminorms need a 1-D embedded space, got dim={dim}")
    x = coords[:, 0]
    order = np.argsort(x, kind="stable")
    return order, x[order]


def derivative_l1(values, coords) -> float:
    """``||f'||_1`` of the monotone interpolant: total variation of f along the line."""
    values = np.asarray(values, dtype=float)
    coords = None if coords is None else np.atleast_2d(np.asarray(coords, float).T).T
    order, _ = _sorted_line(coords, values.shape[0])
    return float(np.abs(np.diff(values[order])).sum())


def derivative_l2(values, coords) -> float:
    """``||f'||_2`` of the piecewise-linear interpolant, the smallest over all extensions."""
    values = np.asarray(values, dtype=float)
    coords = None if coords is None else np.atleast_2d(np.asarray(coords, float).T).T
    order, x = _sorted_line(coords, values.shape[0])
    dv = np.diff(values[order])
    dx = np.diff(x)
    if np.any((dx == 0) & (dv != 0)):
        k = int(np.flatnonzero((dx == 0) & (dv != 0))[0])
        raise InfiniteConstantError((int(order[k]), int(order[k + 1])), float(abs(dv[k])))
    keep = dx > 0
    return float(np.sqrt(np.sum(dv[keep] ** 2 / dx[keep])))


def seminorm(values, space: MetricSpace, kind: MetricKind) -> float:
    """Associated function seminorm of ``kind`` for a function table over ``space``.

    TV -> oscillation ``max f - min f`` (the sup norm of the centred function);
    Wasserstein -> Lipschitz constant; Energy -> ``||f'||_1``, the sum of
    consecutive differences along a 1-D embedding.
    """
    kind = MetricKind.parse(kind)
    values = np.asarray(values, dtype=float)
    if kind is MetricKind.TOTAL_VARIATION:
        return float(values.max() - values.min()) if values.size else 0.0
    if kind is MetricKind.WASSERSTEIN:
        return lipschitz_seminorm(values, space.dist)[0]
    if kind is MetricKind.ENERGY:
        return derivative_l1(values, space.coords)
    raise InvalidInputError("KL has no associated seminorm")


def dual_seminorm(values, space: MetricSpace, kind: MetricKind) -> float:
    """Seminorm for which ``|E_P f - E_Q f| <= dual_seminorm(f) * distance(kind, P, Q)`` holds.

    Agrees with ``seminorm`` for TV and Wasserstein. For Energy the distance is
    ``sqrt(E / 2) = ||F_P - F_Q||_2`` and Cauchy-Schwarz pairs it with ``||f'||_2``.
    """
    kind = MetricKind.parse(kind)
    if kind is MetricKind.ENERGY:
        return derivative_l2(values, space.coords)
    return seminorm(values, space, kind)


def sup_norm(values) -> float:
    return float(np.max(np.abs(values), initial=0.0))


def mcshane_extension(values, anchors, dist_to_anchors: np.ndarray, lipschitz: float) -> np.ndarray:
    """Smallest ``lipschitz``-Lipschitz extension ``min_y f(y) + K d(., y)`` of ``values`` at ``anchors``.

    ``dist_to_anchors[z, k]`` is the distance from target point ``z`` to anchor ``k``.
    """
    values = np.asarray(values, dtype=float)
    return np.min(values[None, :] + lipschitz * dist_to_anchors, axis=1)

