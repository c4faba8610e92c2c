"""Exact tabular MDPs: Bellman solvers, induced kernels and stationary distributions."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

ROW_TOL = 1e-12


class InvalidInputError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    """Raised when a fixed-point or power iteration fails to settle."""


def _frozen(arr, dtype=float) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def _check_stochastic(rows: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(rows)):
        raise InvalidInputError(f"{what} contains non-finite entries")
    if np.any(rows < 0.0):
        raise InvalidInputError(f"{what} has negative entries")
    sums = rows.sum(axis=-1)
    bad = np.abs(sums - 1.0) > ROW_TOL
    if np.any(bad):
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise InvalidInputError(f"{what} row {idx} sums to {sums[idx]!r}, not 1")


@dataclass(frozen=True, eq=False)
class FiniteMdp:
    """Tabular MDP with transition tensor ``P[s, a, s']`` and rewards ``R[s, a]``."""

    transition: np.ndarray
    reward: np.ndarray
    discount: float

    def __post_init__(self):
        P = _frozen(self.transition)
        R = _frozen(self.reward)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise InvalidInputError(f"transition must have shape (S, A, S), got {P.shape}")
        if R.shape != P.shape[:2]:
            raise InvalidInputError(f"reward shape {R.shape} does not match transition {P.shape}")
        if not np.all(np.isfinite(R)):
            raise InvalidInputError("rewards must be finite")
        _check_stochastic(P, "transition")
        gamma = float(self.discount)
        if not 0.0 <= gamma < 1.0:
            raise InvalidInputError(f"discount must lie in [0, 1), got {gamma}")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", R)
        object.__setattr__(self, "discount", gamma)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "gamma": self.discount,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FiniteMdp":
        missing = {"n_states", "n_actions", "gamma", "transition", "reward"} - set(doc)
        if missing:
            raise InvalidInputError(f"MDP document is missing fields {sorted(missing)}")
        mdp = cls(np.asarray(doc["transition"], float), np.asarray(doc["reward"], float), doc["gamma"])
        if (mdp.n_states, mdp.n_actions) != (doc["n_states"], doc["n_actions"]):
            raise InvalidInputError(
                f"declared size ({doc['n_states']}, {doc['n_actions']}) does not match "
                f"arrays ({mdp.n_states}, {mdp.n_actions})"
            )
        return mdp


def save_mdp(mdp: FiniteMdp, path) -> None:
    Path(path).write_text(json.dumps(mdp.to_dict(), indent=1))


def load_mdp(path) -> FiniteMdp:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return FiniteMdp.from_dict(doc)


@dataclass(frozen=True, eq=False)
class Policy:
    probs: np.ndarray

    def __post_init__(self):
        pi = _frozen(self.probs)
        if pi.ndim != 2:
            raise InvalidInputError(f"policy must be a (S, A) matrix, got shape {pi.shape}")
        _check_stochastic(pi, "policy")
        object.__setattr__(self, "probs", pi)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "Policy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions, n_actions: int) -> "Policy":
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros((actions.size, n_actions))
        probs[np.arange(actions.size), actions] = 1.0
        return cls(probs)

    @classmethod
    def constant(cls, action_probs, n_states: int) -> "Policy":
        return cls(np.tile(np.asarray(action_probs, float), (n_states, 1)))


@dataclass(frozen=True, eq=False)
class ValueTable:
    v: np.ndarray
    q: np.ndarray
    residual: float


@dataclass(frozen=True, eq=False)
class StationaryDistribution:
    state_mass: np.ndarray
    state_action_mass: np.ndarray
    balance_residual: float


def _check_policy(mdp: FiniteMdp, policy: Policy) -> None:
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise InvalidInputError(
            f"policy shape {policy.probs.shape} does not match MDP ({mdp.n_states}, {mdp.n_actions})"
        )


def policy_kernel(mdp: FiniteMdp, policy: Policy) -> tuple[np.ndarray, np.ndarray]:
    """State-to-state kernel and reward vector obtained by averaging over the policy."""
    _check_policy(mdp, policy)
    pi = policy.probs
    P_pi = np.einsum("sa,sat->st", pi, mdp.transition)
    R_pi = np.einsum("sa,sa->s", pi, mdp.reward)
    return P_pi, R_pi


def q_from_v(mdp: FiniteMdp, v: np.ndarray) -> np.ndarray:
    return mdp.reward + mdp.discount * mdp.transition @ v


def policy_evaluation(mdp: FiniteMdp, policy: Policy, tol: float = 1e-10, max_sweeps: int = 10**7) -> ValueTable:
    """Synchronous Bellman sweeps until the sup-norm change is at most ``tol``.

    The returned residual is ``||T_pi V - V||_inf`` for the tables handed back.
    """
    if tol <= 0:
        raise InvalidInputError("tol must be positive")
    P_pi, R_pi = policy_kernel(mdp, policy)
    gamma = mdp.discount
    v = np.zeros(mdp.n_states)
    # Stopping on the step size bounds the distance to the fixed point by step * gamma / (1 - gamma).
    stop = tol * (1.0 - gamma) / max(gamma, 1e-300) if gamma > 0 else np.inf
    for _ in range(max_sweeps):
        new = R_pi + gamma * P_pi @ v
        step = np.max(np.abs(new - v), initial=0.0)
        v = new
        if step <= min(stop, tol):
            break
    else:
        raise ConvergenceError(f"policy evaluation did not converge in {max_sweeps} sweeps")
    q = q_from_v(mdp, v)
    v = np.einsum("sa,sa->s", policy.probs, q)
    residual = float(np.max(np.abs(R_pi + gamma * P_pi @ v - v), initial=0.0))
    return ValueTable(v=v, q=q, residual=residual)


def greedy_policy(q: np.ndarray) -> Policy:
    # np.argmax returns the first maximiser, i.e. the lowest action index on ties
    return Policy.deterministic(np.argmax(q, axis=1), q.shape[1])


def value_iteration(mdp: FiniteMdp, tol: float = 1e-10, max_sweeps: int = 10**7) -> tuple[ValueTable, Policy]:
    if tol <= 0:
        raise InvalidInputError("tol must be positive")
    gamma = mdp.discount
    q = np.zeros((mdp.n_states, mdp.n_actions))
    stop = tol * (1.0 - gamma) / gamma if gamma > 0 else np.inf
    for _ in range(max_sweeps):
        new = q_from_v(mdp, q.max(axis=1))
        step = np.max(np.abs(new - q))
        q = new
        if step <= min(stop, tol):
            break
    else:
        raise ConvergenceError(f"value iteration did not converge in {max_sweeps} sweeps")
    v = q.max(axis=1)
    residual = float(np.max(np.abs(q_from_v(mdp, v) - q)))
    return ValueTable(v=v, q=q, residual=residual), greedy_policy(q)


def solve_policy_values(mdp: FiniteMdp, policy: Policy) -> ValueTable:
    """Values of ``policy`` from the linear system ``(I - gamma P_pi) V = R_pi``.

    Accurate to a few ulps, which certificates need when values are divided by
    small latent distances.
    """
    P_pi, R_pi = policy_kernel(mdp, policy)
    gamma = mdp.discount
    v = np.linalg.solve(np.eye(mdp.n_states) - gamma * P_pi, R_pi)
    q = q_from_v(mdp, v)
    v = np.einsum("sa,sa->s", policy.probs, q)
    residual = float(np.max(np.abs(R_pi + gamma * P_pi @ v - v), initial=0.0))
    return ValueTable(v=v, q=q, residual=residual)


def solve_optimal_values(mdp: FiniteMdp, tol: float = 1e-10) -> tuple[ValueTable, Policy]:
    """Value iteration followed by policy-iteration polishing with exact solves."""
    values, policy = value_iteration(mdp, tol)
    for _ in range(10 * mdp.n_states * mdp.n_actions + 10):
        exact = solve_policy_values(mdp, policy)
        q = exact.q
        best = q.max(axis=1)
        current = np.einsum("sa,sa->s", policy.probs, q)
        # switch only on a strict improvement beyond rounding, keeping lowest-index ties
        if np.all(best <= current + 1e-13 * (1.0 + np.abs(current))):
            residual = float(np.max(np.abs(q_from_v(mdp, q.max(axis=1)) - q)))
            return ValueTable(v=q.max(axis=1), q=q, residual=residual), greedy_policy(q)
        policy = greedy_policy(q)
    raise ConvergenceError("policy iteration polishing did not settle")


def stationary_distribution(
    mdp: FiniteMdp, policy: Policy, tol: float = 1e-10, max_sweeps: int = 10**6
) -> StationaryDistribution:
    """Power iteration from the uniform vector on the policy-induced chain.

    Chains whose iteration does not settle (periodic or reducible) raise
    ``ConvergenceError`` instead of being damped.
    """
    P_pi, _ = policy_kernel(mdp, policy)
    n = mdp.n_states
    xi = np.full(n, 1.0 / n)
    for sweep in range(max_sweeps):
        new = xi @ P_pi
        new /= new.sum()
        if np.max(np.abs(new - xi)) <= tol * 1e-2:
            xi = new
            break
        xi = new
    else:
        raise ConvergenceError(
            f"stationary distribution of the induced {n}-state chain did not converge in "
            f"{max_sweeps} sweeps; the chain is periodic or reducible"
        )
    balance = float(np.max(np.abs(xi @ P_pi - xi)))
    if balance > tol:
        raise ConvergenceError(f"balance residual {balance:.3e} exceeds tol {tol:.1e}")
    _check_unique(P_pi, xi)
    terminal = terminal_states(mdp)
    if n > 1 and terminal.size and xi[terminal].sum() > 0.5:
        raise ConvergenceError(
            f"induced chain is absorbed by terminal state(s) {terminal.tolist()}; "
            "terminating MDPs have no informative stationary distribution"
        )
    sa = xi[:, None] * policy.probs
    return StationaryDistribution(state_mass=xi, state_action_mass=sa, balance_residual=balance)


def terminal_states(mdp: FiniteMdp) -> np.ndarray:
    """States that are absorbing under every action and pay zero reward."""
    idx = np.arange(mdp.n_states)
    absorbing = np.all(mdp.transition[idx, :, idx] == 1.0, axis=1)
    silent = np.all(mdp.reward == 0.0, axis=1)
    return np.flatnonzero(absorbing & silent)


def _check_unique(P_pi: np.ndarray, xi: np.ndarray) -> None:
    # Power iteration from uniform also settles on reducible chains with several closed
    # classes; uniqueness needs a single closed class, which we test by reachability.
    n = len(xi)
    reach = (P_pi > 0).astype(np.int64) + np.eye(n, dtype=np.int64)
    for _ in range(max(1, int(np.ceil(np.log2(max(n, 2))))) + 1):
        reach = np.minimum(reach @ reach, 1)
    closed = [s for s in range(n) if np.all(reach[reach[s] > 0][:, s] > 0)]
    classes = {tuple(np.flatnonzero(reach[s] & reach[:, s])) for s in closed}
    if len(classes) > 1:
        raise ConvergenceError(
            f"induced chain has {len(classes)} closed classes; its stationary distribution is not unique"
        )
