"""Latent space models (M-bar, phi) over a finite metric latent space and their losses."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mdp_core import (
    FiniteMdp,
    InvalidInputError,
    Policy,
    StationaryDistribution,
    ValueTable,
    policy_evaluation,
)
from .prob_metrics import (
    DiscreteDistribution,
    InfiniteConstantError,
    MetricKind,
    MetricSpace,
    distance_dense,
    dual_seminorm,
    wasserstein_dense,
)

SNAP_TOL = 1e-12


class ClosureError(ValueError):
    """The model's transitions leave its finite set of latent points."""


@dataclass(frozen=True, eq=False)
class LatentModel:
    """Finite latent MDP plus an embedding table ``embed[s] -> latent index``.

    ``transition[z, a, z']`` is a stochastic tensor over the latent points. A
    model may instead carry ``next_coords[z, a]``: deterministic successors given
    as raw coordinates. Those that coincide with a latent point are snapped into
    the table; if any does not, the model is not closed.
    """

    space: MetricSpace
    embed: np.ndarray
    reward: np.ndarray
    transition: np.ndarray | None = None
    next_coords: np.ndarray | None = None
    closed: bool = field(init=False, default=True)

    def __post_init__(self):
        n_z = self.space.n_points
        embed = np.array(self.embed, dtype=np.int64, copy=True)
        reward = np.array(self.reward, dtype=float, copy=True)
        if reward.ndim != 2 or reward.shape[0] != n_z:
            raise InvalidInputError(f"latent reward must be ({n_z}, A), got {reward.shape}")
        if embed.ndim != 1 or embed.min(initial=0) < 0 or embed.max(initial=0) >= n_z:
            raise InvalidInputError("embedding table must index latent points")
        n_a = reward.shape[1]
        closed = True
        if self.transition is not None:
            P = np.array(self.transition, dtype=float, copy=True)
            if P.shape == (n_z, n_a) and np.issubdtype(np.asarray(self.transition).dtype, np.integer):
                P = _one_hot(P.astype(np.int64), n_z)
            if P.shape != (n_z, n_a, n_z):
                raise InvalidInputError(f"latent transition must be ({n_z}, {n_a}, {n_z}), got {P.shape}")
            if np.any(P < 0) or np.max(np.abs(P.sum(-1) - 1.0)) > 1e-12:
                raise InvalidInputError("latent transition rows must be probability vectors")
            nxt = None
        elif self.next_coords is not None:
            if self.space.coords is None:
                raise InvalidInputError("coordinate successors need an embedded latent space")
            nxt = np.array(self.next_coords, dtype=float, copy=True)
            if nxt.shape != (n_z, n_a, self.space.coords.shape[1]):
                raise InvalidInputError(f"next_coords must be ({n_z}, {n_a}, k), got {nxt.shape}")
            gap = np.linalg.norm(nxt[:, :, None, :] - self.space.coords[None, None], axis=-1)
            idx = np.argmin(gap, axis=-1)
            closed = bool(np.all(np.take_along_axis(gap, idx[..., None], -1) <= SNAP_TOL))
            P = _one_hot(idx, n_z) if closed else None
            nxt.setflags(write=False)
        else:
            raise InvalidInputError("a latent model needs a transition table or successor coordinates")
        for arr in (embed, reward, P):
            if arr is not None:
                arr.setflags(write=False)
        object.__setattr__(self, "embed", embed)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "next_coords", nxt)
        object.__setattr__(self, "closed", closed)

    @property
    def n_latent(self) -> int:
        return self.space.n_points

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]

    def require_closed(self, why: str = "") -> None:
        if not self.closed:
            raise ClosureError("latent transitions leave the finite latent point set" + (f" ({why})" if why else ""))

    def as_mdp(self, discount: float) -> FiniteMdp:
        self.require_closed("solving the latent MDP")
        return FiniteMdp(self.transition, self.reward, discount)

    def is_deterministic(self) -> bool:
        return self.transition is not None and bool(np.all(self.transition.max(-1) == 1.0))

    def digest_parts(self):
        return (self.space.dist, self.embed, self.reward, self.transition, self.next_coords)

    def to_dict(self) -> dict:
        coords = self.space.coords
        doc = {
            "latent_coords": None if coords is None else coords.tolist(),
            "latent_dist": None if coords is not None else self.space.dist.tolist(),
            "embed": self.embed.tolist(),
            "reward": self.reward.tolist(),
        }
        if self.next_coords is not None and not self.closed:
            doc["transition"] = {"tag": "deterministic-coords", "table": self.next_coords.tolist()}
        elif self.is_deterministic():
            doc["transition"] = {"tag": "deterministic", "table": self.transition.argmax(-1).tolist()}
        else:
            doc["transition"] = {"tag": "stochastic", "table": self.transition.tolist()}
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "LatentModel":
        if doc.get("latent_coords") is not None:
            space = MetricSpace.euclidean(np.asarray(doc["latent_coords"], float))
        else:
            space = MetricSpace(np.asarray(doc["latent_dist"], float))
        tr = doc["transition"]
        tag = tr["tag"]
        if tag == "stochastic":
            return cls(space, doc["embed"], doc["reward"], transition=np.asarray(tr["table"], float))
        if tag == "deterministic":
            return cls(space, doc["embed"], doc["reward"], transition=np.asarray(tr["table"], np.int64))
        if tag == "deterministic-coords":
            return cls(space, doc["embed"], doc["reward"], next_coords=np.asarray(tr["table"], float))
        raise InvalidInputError(f"unknown transition tag {tag!r}")


def save_model(model: LatentModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()))


def load_model(path) -> LatentModel:
    return LatentModel.from_dict(json.loads(Path(path).read_text()))


def _one_hot(idx: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros(idx.shape + (n,))
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out


def exact_model(mdp: FiniteMdp, coords=None) -> LatentModel:
    """phi = identity onto one latent point per state, with R-bar = R and P-bar = P."""
    if coords is None:
        coords = np.arange(mdp.n_states, dtype=float)
    return LatentModel(MetricSpace.euclidean(coords), np.arange(mdp.n_states), mdp.reward, mdp.transition)


def pushforward_dense(mdp: FiniteMdp, model: LatentModel, s: int, a: int) -> np.ndarray:
    out = np.zeros(model.n_latent)
    np.add.at(out, model.embed, mdp.transition[s, a])
    return out


def pushforward(mdp: FiniteMdp, model: LatentModel, s: int, a: int) -> DiscreteDistribution:
    """Law of ``phi(s')`` for ``s' ~ P(.|s, a)``, atoms on a shared latent point merged."""
    return DiscreteDistribution.from_dense(pushforward_dense(mdp, model, s, a))


def _check_compatible(mdp: FiniteMdp, model: LatentModel) -> None:
    if model.embed.shape[0] != mdp.n_states:
        raise InvalidInputError(f"embedding covers {model.embed.shape[0]} states, MDP has {mdp.n_states}")
    if model.n_actions != mdp.n_actions:
        raise InvalidInputError("latent model and MDP disagree on the number of actions")


def pair_losses(mdp: FiniteMdp, model: LatentModel, kind: MetricKind) -> tuple[np.ndarray, np.ndarray]:
    """Per-(s, a) reward and transition discrepancies."""
    kind = MetricKind.parse(kind)
    _check_compatible(mdp, model)
    if kind in (MetricKind.WASSERSTEIN, MetricKind.ENERGY):
        model.require_closed(f"{kind.value} needs latent-to-latent distances")
    reward_loss = np.abs(mdp.reward - model.reward[model.embed])
    trans_loss = np.zeros_like(reward_loss)
    dist = model.space.dist
    for s in range(mdp.n_states):
        z = model.embed[s]
        for a in range(mdp.n_actions):
            pushed = pushforward_dense(mdp, model, s, a)
            if model.closed:
                trans_loss[s, a] = distance_dense(kind, pushed, model.transition[z, a], dist)
            else:
                # a lone successor off the latent grid is disjoint from every pushed atom
                trans_loss[s, a] = 1.0
    return reward_loss, trans_loss


@dataclass(frozen=True, eq=False)
class LossReport:
    metric_kind: MetricKind
    reward_loss: float
    transition_loss: float
    mode: str  # "global-sup" or "local-expectation"
    reward_witness: tuple[int, int] | None = None
    transition_witness: tuple[int, int] | None = None
    weighting: np.ndarray | None = None
    per_pair_reward: np.ndarray | None = None
    per_pair_transition: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "metric_kind": self.metric_kind.value,
            "mode": self.mode,
            "reward_loss": self.reward_loss,
            "transition_loss": self.transition_loss,
            "reward_witness": self.reward_witness,
            "transition_witness": self.transition_witness,
        }


def _argmax2(table: np.ndarray) -> tuple[int, int]:
    s, a = np.unravel_index(np.argmax(table), table.shape)
    return int(s), int(a)


def global_losses(mdp: FiniteMdp, model: LatentModel, kind: MetricKind) -> LossReport:
    kind = MetricKind.parse(kind)
    lr, lp = pair_losses(mdp, model, kind)
    wr, wp = _argmax2(lr), _argmax2(lp)
    return LossReport(kind, float(lr[wr]), float(lp[wp]), "global-sup", wr, wp, None, lr, lp)


def local_losses(mdp: FiniteMdp, model: LatentModel, kind: MetricKind, xi) -> LossReport:
    """Expected per-pair discrepancies under a state-action distribution ``xi``."""
    kind = MetricKind.parse(kind)
    weights = xi.state_action_mass if isinstance(xi, StationaryDistribution) else np.asarray(xi, float)
    if weights.shape != (mdp.n_states, mdp.n_actions):
        raise InvalidInputError(f"weighting must be ({mdp.n_states}, {mdp.n_actions}), got {weights.shape}")
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-10:
        raise InvalidInputError("weighting must be a probability table")
    lr, lp = pair_losses(mdp, model, kind)
    return LossReport(
        kind, float(np.sum(weights * lr)), float(np.sum(weights * lp)), "local-expectation",
        weighting=weights, per_pair_reward=lr, per_pair_transition=lp,
    )


def lift_policy(model: LatentModel, deep_policy: Policy) -> Policy:
    """``pi(.|s) := pi-bar(.|phi(s))``."""
    if deep_policy.probs.shape != (model.n_latent, model.n_actions):
        raise InvalidInputError("deep policy must be defined over the latent points")
    return Policy(deep_policy.probs[model.embed])


def latent_policy_lift_and_eval(
    mdp: FiniteMdp, model: LatentModel, deep_policy: Policy, tol: float = 1e-10
) -> tuple[ValueTable, ValueTable]:
    """Exact values of ``pi-bar`` lifted into M and of ``pi-bar`` itself in M-bar."""
    _check_compatible(mdp, model)
    latent_mdp = model.as_mdp(mdp.discount)
    lifted = lift_policy(model, deep_policy)
    return policy_evaluation(mdp, lifted, tol), policy_evaluation(latent_mdp, deep_policy, tol)


@dataclass(frozen=True)
class LipschitzEstimate:
    K_R: float
    K_P: float
    K_V: float
    R_witness: tuple | None = None
    P_witness: tuple | None = None
    V_witness: tuple | None = None


def _pairwise_ratio(diffs: np.ndarray, dist: np.ndarray, what: str):
    """diffs[i, j] over dist[i, j] maximised over i < j, with a zero-distance check."""
    n = dist.shape[0]
    i, j = np.triu_indices(n, 1)
    num = diffs[i, j]
    den = dist[i, j]
    bad = (den == 0) & (num > 1e-12)
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise InfiniteConstantError((int(i[k]), int(j[k])), float(num[k]))
    if i.size == 0:
        return 0.0, None
    ratio = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    k = int(np.argmax(ratio))
    return float(ratio[k]), (int(i[k]), int(j[k]))


def reward_lipschitz(reward: np.ndarray, dist: np.ndarray) -> tuple[float, tuple | None]:
    """``max |R(z1, a) - R(z2, a)| / d(z1, z2)`` over pairs and actions; reward may be 1-D (policy-averaged)."""
    reward = reward if reward.ndim == 2 else reward[:, None]
    best, wit = 0.0, None
    for a in range(reward.shape[1]):
        diffs = np.abs(reward[:, None, a] - reward[None, :, a])
        k, pair = _pairwise_ratio(diffs, dist, "reward")
        if k > best or wit is None:
            best, wit = k, (None if pair is None else pair + (a,))
    return best, wit


def transition_lipschitz(transition: np.ndarray, dist: np.ndarray) -> tuple[float, tuple | None]:
    """``max W(P(.|z1, a), P(.|z2, a)) / d(z1, z2)`` with the latent metric as ground cost."""
    transition = transition if transition.ndim == 3 else transition[:, None, :]
    n, n_a, _ = transition.shape
    best, wit = 0.0, None
    for a in range(n_a):
        w = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                if not np.array_equal(transition[i, a], transition[j, a]):
                    w[i, j] = w[j, i] = wasserstein_dense(transition[i, a], transition[j, a], dist)
        k, pair = _pairwise_ratio(w, dist, "transition")
        if k > best or wit is None:
            best, wit = k, (None if pair is None else pair + (a,))
    return best, wit


def value_seminorm(values: ValueTable, space: MetricSpace, kind: MetricKind) -> tuple[float, tuple]:
    """Largest dual seminorm among V and every Q(., a); witness names the table ('v' or action index)."""
    kind = MetricKind.parse(kind)
    best, wit = dual_seminorm(values.v, space, kind), ("v",)
    for a in range(values.q.shape[1]):
        k = dual_seminorm(values.q[:, a], space, kind)
        if k > best:
            best, wit = k, ("q", a)
    return float(best), wit


def lipschitz_estimate(model: LatentModel, deep_values: ValueTable, kind: MetricKind) -> LipschitzEstimate:
    model.require_closed("Lipschitz constants of the latent transition")
    dist = model.space.dist
    k_r, wr = reward_lipschitz(model.reward, dist)
    k_p, wp = transition_lipschitz(model.transition, dist)
    k_v, wv = value_seminorm(deep_values, model.space, kind)
    return LipschitzEstimate(k_r, k_p, k_v, wr, wp, wv)


def policy_constants(model: LatentModel, deep_policy: Policy) -> tuple[float, float]:
    """Lipschitz norms of the policy-averaged latent reward and transition."""
    model.require_closed()
    pi = deep_policy.probs
    r_pi = np.einsum("za,za->z", pi, model.reward)
    p_pi = np.einsum("za,zay->zy", pi, model.transition)
    return reward_lipschitz(r_pi, model.space.dist)[0], transition_lipschitz(p_pi, model.space.dist)[0]
