"""Bisimulation: Givan partition refinement and the Ferns fixed-point metric."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .certificate import Certificate, digest
from .mdp_core import ConvergenceError, FiniteMdp, InvalidInputError, value_iteration
from ._transport import bisim_sweep
from .prob_metrics import triangle_violation

MAX_ITERATIONS = 100_000
PARTITION_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class PseudometricTable:
    d: np.ndarray

    def __post_init__(self):
        d = np.array(self.d, dtype=float, copy=True)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise InvalidInputError(f"pseudometric table must be square, got {d.shape}")
        if np.any(d < 0) or np.any(np.diag(d) != 0) or np.any(d != d.T):
            raise InvalidInputError("pseudometric table must be symmetric, non-negative, zero on the diagonal")
        d.setflags(write=False)
        object.__setattr__(self, "d", d)

    @property
    def n(self) -> int:
        return self.d.shape[0]

    def triangle_violation(self) -> float:
        return triangle_violation(self.d)

    def kernel(self, threshold: float) -> "Partition":
        """Blocks of the relation ``d < threshold`` (an equivalence for a true kernel)."""
        labels = -np.ones(self.n, dtype=int)
        nxt = 0
        for s in range(self.n):
            if labels[s] < 0:
                labels[(self.d[s] < threshold) & (labels < 0)] = nxt
                nxt += 1
        return Partition(labels)


@dataclass(frozen=True, eq=False)
class Partition:
    block_of: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.block_of, dtype=int).copy()
        # canonical labelling: blocks numbered in order of first appearance
        _, first, inv = np.unique(b, return_index=True, return_inverse=True)
        rank = np.argsort(np.argsort(first))
        b = rank[inv]
        b.setflags(write=False)
        object.__setattr__(self, "block_of", b)

    @property
    def n_blocks(self) -> int:
        return int(self.block_of.max()) + 1 if self.block_of.size else 0

    def blocks(self) -> list[list[int]]:
        return [np.flatnonzero(self.block_of == k).tolist() for k in range(self.n_blocks)]

    def __eq__(self, other):
        return isinstance(other, Partition) and np.array_equal(self.block_of, other.block_of)

    def __hash__(self):
        return hash(self.block_of.tobytes())


def bisim_operator_step(mdp: FiniteMdp, d: PseudometricTable | np.ndarray) -> PseudometricTable:
    d = d.d if isinstance(d, PseudometricTable) else np.asarray(d, float)
    return PseudometricTable(_apply_operator(mdp, d))


def _apply_operator(mdp: FiniteMdp, d: np.ndarray) -> np.ndarray:
    out, status = bisim_sweep(mdp.transition, mdp.reward, float(mdp.discount), np.ascontiguousarray(d, float), 100_000)
    if status != 0:
        raise ConvergenceError("transport simplex hit its pivot cap inside the bisimulation operator")
    return out


@dataclass(frozen=True, eq=False)
class BisimResult:
    metric: PseudometricTable
    iterations: int
    residual: float
    changes: np.ndarray  # sup-norm change of every iterate

    def __iter__(self):
        return iter((self.metric, self.iterations, self.residual))


def bisim_metric(mdp: FiniteMdp, tol: float = 1e-9, max_iterations: int = MAX_ITERATIONS) -> BisimResult:
    """Iterate the Ferns operator from ``d = 0`` until the sup-norm change is at most ``tol``."""
    if tol <= 0:
        raise InvalidInputError("tol must be positive")
    d = np.zeros((mdp.n_states, mdp.n_states))
    changes = []
    for it in range(1, max_iterations + 1):
        new = _apply_operator(mdp, d)
        change = float(np.max(np.abs(new - d), initial=0.0))
        changes.append(change)
        d = new
        if change <= tol:
            return BisimResult(PseudometricTable(d), it, change, np.asarray(changes))
    raise ConvergenceError(
        f"bisimulation operator did not contract within {max_iterations} iterations "
        f"(last change {changes[-1]:.3e}); this indicates an implementation bug"
    )


def _group(signatures: np.ndarray, members: list[int], tol: float) -> list[list[int]]:
    groups: list[list[int]] = []
    for s in members:
        for g in groups:
            if np.max(np.abs(signatures[s] - signatures[g[0]])) <= tol:
                g.append(s)
                break
        else:
            groups.append([s])
    return groups


def bisim_partition(mdp: FiniteMdp, tol: float = PARTITION_TOL) -> Partition:
    """Coarsest partition with equal rewards and equal block-transition mass for every action."""
    n = mdp.n_states
    labels = np.zeros(n, dtype=int)
    groups = _group(mdp.reward, list(range(n)), tol)
    for k, g in enumerate(groups):
        labels[g] = k
    while True:
        n_blocks = labels.max() + 1
        onehot = np.zeros((n, n_blocks))
        onehot[np.arange(n), labels] = 1.0
        # block mass P(G | s, a) for every block G, flattened over actions
        mass = (mdp.transition @ onehot).reshape(n, -1)
        new = np.empty(n, dtype=int)
        nxt = 0
        for k in range(n_blocks):
            for g in _group(mass, np.flatnonzero(labels == k).tolist(), tol):
                new[g] = nxt
                nxt += 1
        if nxt == n_blocks:
            return Partition(labels)
        labels = new


def value_bisim_bound_check(
    mdp: FiniteMdp, dtilde: PseudometricTable | BisimResult, tol: float = 1e-10
) -> Certificate:
    """Certify ``|V*(s1) - V*(s2)| <= d~(s1, s2) / (1 - gamma)`` on every pair.

    Iterates from zero approach the fixed point from below, so when a
    ``BisimResult`` is given its remaining gap ``gamma * residual / (1 - gamma)``
    is added back on the right-hand side. lhs/rhs are reported at the pair of
    smallest slack.
    """
    gamma = mdp.discount
    margin = 0.0
    if isinstance(dtilde, BisimResult):
        margin = gamma * dtilde.residual / (1.0 - gamma)
        dtilde = dtilde.metric
    values, _ = value_iteration(mdp, tol)
    v = values.v
    lhs = np.abs(v[:, None] - v[None, :])
    rhs = (dtilde.d + margin * (1 - np.eye(mdp.n_states))) / (1.0 - gamma)
    slack = rhs - lhs
    if mdp.n_states > 1:
        slack[np.diag_indices(mdp.n_states)] = np.inf  # the diagonal is 0 <= 0
    s1, s2 = np.unravel_index(np.argmin(slack), slack.shape)
    return Certificate(
        name="bisim_value_bound",
        metric_kind="wasserstein",
        lhs=float(lhs[s1, s2]),
        rhs=float(rhs[s1, s2]),
        witness=(int(s1), int(s2)),
        inputs_digest=digest(mdp.transition, mdp.reward, mdp.discount, dtilde.d),
        notes=[f"value iteration residual {values.residual:.2e}"],
    )
