"""Gradient training of DeepMDPs with deterministic latent transitions.

The model is an encoder ``phi`` from flattened observations into ``R^k`` plus
two heads on ``(z, a)``: a reward head and a next-latent head. The loss is

    |r - R(phi(s), a)| + ||phi(s') - P(phi(s), a)||_2 + lam * penalty

where the penalty is the squared latent-input gradient norm of both heads,
estimated by central differences and pushed toward zero. Gradients come from
``autodiff``; ``gradcheck`` compares them with central differences of the
very same loss evaluated on plain arrays.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .certificate import Certificate, digest
from .envs import TransitionDataset
from .latent import LatentModel, global_losses
from .mdp_core import FiniteMdp, InvalidInputError
from .prob_metrics import MetricKind, MetricSpace

PENALTY_STEP = 1e-3  # latent offset of the penalty's central differences
GRADCHECK_STEP = 1e-5
NORM_SMOOTHING = 1e-12  # keeps ||.||_2 differentiable at a collapsed transition
GRAD_FLOOR = 1e-6  # gradients below this are compared on an absolute scale
SNAP_RADIUS = 1e-6


class DivergenceError(RuntimeError):
    def __init__(self, step: int, value: float):
        self.step = step
        super().__init__(f"training diverged at step {step}: loss {value}")


@dataclass(frozen=True)
class Architecture:
    obs_dim: int
    latent_dim: int
    n_actions: int
    encoder_hidden: tuple[int, ...] = (32,)
    head_hidden: tuple[int, ...] = (32, 32)
    activation: str = "relu"  # "relu" or "linear"
    squash: str = "sigmoid"  # encoder output: "sigmoid" or "none"

    def __post_init__(self):
        if min(self.obs_dim, self.latent_dim, self.n_actions) < 1:
            raise InvalidInputError("architecture sizes must be positive")
        if self.activation not in ("relu", "linear") or self.squash not in ("sigmoid", "none"):
            raise InvalidInputError(f"unknown activation/squash tags {self.activation!r}, {self.squash!r}")
        object.__setattr__(self, "encoder_hidden", tuple(int(h) for h in self.encoder_hidden))
        object.__setattr__(self, "head_hidden", tuple(int(h) for h in self.head_hidden))

    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        out = []
        sizes = (self.obs_dim,) + self.encoder_hidden + (self.latent_dim,)
        for i in range(len(sizes) - 1):
            out += [(f"enc_w{i}", (sizes[i], sizes[i + 1])), (f"enc_b{i}", (sizes[i + 1],))]
        k, A = self.latent_dim, self.n_actions
        for head, width in (("rew", 1), ("dyn", k)):
            sizes = self.head_hidden + (width,)
            out += [(f"{head}_wz", (k, sizes[0])), (f"{head}_wa", (A, sizes[0])), (f"{head}_b0", (sizes[0],))]
            for i in range(len(sizes) - 1):
                out += [(f"{head}_w{i + 1}", (sizes[i], sizes[i + 1])), (f"{head}_b{i + 1}", (sizes[i + 1],))]
        return out


@dataclass
class ParametricModel:
    """Encoder and heads; observations are standardised per pixel before the encoder.

    ``shift`` and ``scale`` are fitted on the training observations and are
    not trained. Pixels that never change keep scale 1.
    """

    arch: Architecture
    params: dict[str, np.ndarray]
    shift: np.ndarray | None = None
    scale: np.ndarray | None = None

    def __post_init__(self):
        d = self.arch.obs_dim
        self.shift = np.zeros(d) if self.shift is None else np.asarray(self.shift, dtype=float)
        self.scale = np.ones(d) if self.scale is None else np.asarray(self.scale, dtype=float)

    def fit_input(self, obs: np.ndarray) -> None:
        obs = np.asarray(obs, dtype=float)
        self.shift = obs.mean(axis=0)
        sd = obs.std(axis=0)
        self.scale = np.where(sd > 1e-8, sd, 1.0)

    def normalize(self, obs) -> np.ndarray:
        return (np.asarray(obs, dtype=float) - self.shift) / self.scale

    @classmethod
    def init(cls, arch: Architecture, rng: np.random.Generator, encoder_scale: float = 1.0) -> "ParametricModel":
        params = {}
        for name, shape in arch.shapes():
            if len(shape) == 1:
                params[name] = np.zeros(shape)
                continue
            fan_in = shape[0] if not name.endswith(("_wz", "_wa")) else arch.latent_dim + arch.n_actions
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
            params[name] = w * (encoder_scale if name == "enc_w0" else 1.0)
        return cls(arch, params)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[n].ravel() for n, _ in self.arch.shapes()])

    @classmethod
    def from_flat(cls, arch: Architecture, vector) -> "ParametricModel":
        vector = np.asarray(vector, dtype=float)
        params, i = {}, 0
        for name, shape in arch.shapes():
            size = int(np.prod(shape))
            params[name] = vector[i:i + size].reshape(shape).copy()
            i += size
        if i != vector.size:
            raise InvalidInputError(f"parameter vector has {vector.size} entries, architecture needs {i}")
        return cls(arch, params)

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.arch.shapes())

    def copy(self) -> "ParametricModel":
        return ParametricModel(self.arch, {k: v.copy() for k, v in self.params.items()}, self.shift, self.scale)

    def with_flat(self, vector) -> "ParametricModel":
        out = ParametricModel.from_flat(self.arch, vector)
        out.shift, out.scale = self.shift, self.scale
        return out

    # numeric forward passes on plain arrays
    def encode(self, obs) -> np.ndarray:
        return encoder(self.params, self.arch, self.normalize(np.atleast_2d(obs)))

    def predict_reward(self, z, actions) -> np.ndarray:
        z = np.atleast_2d(z)
        return head(self.params, self.arch, "rew", z, one_hot(actions, self.arch.n_actions))[..., 0]

    def predict_next(self, z, actions) -> np.ndarray:
        z = np.atleast_2d(z)
        return head(self.params, self.arch, "dyn", z, one_hot(actions, self.arch.n_actions))

    def to_dict(self) -> dict:
        return {"architecture": asdict(self.arch), "parameters": self.flat().tolist(),
                "input_shift": self.shift.tolist(), "input_scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "ParametricModel":
        model = cls.from_flat(Architecture(**doc["architecture"]), doc["parameters"])
        model.shift = np.asarray(doc.get("input_shift", model.shift), dtype=float)
        model.scale = np.asarray(doc.get("input_scale", model.scale), dtype=float)
        if not all(np.all(np.isfinite(v)) for v in model.params.values()):
            raise InvalidInputError("checkpoint holds non-finite parameters")
        return model


def save_checkpoint(model: ParametricModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()))


def load_checkpoint(path) -> ParametricModel:
    return ParametricModel.from_dict(json.loads(Path(path).read_text()))


def one_hot(actions, n_actions: int) -> np.ndarray:
    actions = np.atleast_1d(np.asarray(actions, dtype=int))
    return np.eye(n_actions)[actions]


def _act(arch: Architecture, x):
    return ad.relu(x) if arch.activation == "relu" else x


def _bias(b):
    # stacked perturbations carry a leading axis; line it up with the batch axis
    return b[:, None, :] if isinstance(b, np.ndarray) and b.ndim == 2 else b


def encoder(params, arch: Architecture, obs):
    x = obs
    n = len(arch.encoder_hidden) + 1
    for i in range(n):
        x = ad.add(ad.matmul(x, params[f"enc_w{i}"]), _bias(params[f"enc_b{i}"]))
        if i < n - 1:
            x = _act(arch, x)
    return ad.sigmoid(x) if arch.squash == "sigmoid" else x


def head(params, arch: Architecture, name: str, z, onehot):
    x = ad.add(ad.add(ad.matmul(z, params[f"{name}_wz"]), ad.matmul(onehot, params[f"{name}_wa"])),
               _bias(params[f"{name}_b0"]))
    for i in range(1, len(arch.head_hidden) + 1):
        x = ad.add(ad.matmul(_act(arch, x), params[f"{name}_w{i}"]), _bias(params[f"{name}_b{i}"]))
    return x


def _penalty(params, arch: Architecture, z, onehot, h: float = PENALTY_STEP):
    """Squared latent-input gradient norms of both heads by central differences, per sample."""
    total = 0.0
    for j in range(arch.latent_dim):
        e = np.zeros(arch.latent_dim)
        e[j] = h
        zp, zm = ad.add(z, e), ad.sub(z, e)
        for name in ("rew", "dyn"):
            diff = ad.mul(ad.sub(head(params, arch, name, zp, onehot), head(params, arch, name, zm, onehot)),
                          1.0 / (2.0 * h))
            total = ad.add(total, ad.sum_last(ad.square(diff)))
    return total


@dataclass(frozen=True, eq=False)
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray

    @classmethod
    def take(cls, data: TransitionDataset, idx) -> "Batch":
        return cls(data.obs[idx], data.actions[idx], data.rewards[idx], data.next_obs[idx])


def loss_terms(params, arch: Architecture, batch: Batch, penalty_weight: float, surrogate: str = "absolute"):
    """(total, reward, transition, penalty); Var-valued when any parameter is a Var.

    ``surrogate="squared"`` swaps both prediction errors for their squares,
    which is smooth and used to exercise the gradient check on linear models.
    """
    onehot = one_hot(batch.actions, arch.n_actions)
    z = encoder(params, arch, batch.obs)
    z_next = encoder(params, arch, batch.next_obs)
    r_err = ad.sub(batch.rewards[:, None], head(params, arch, "rew", z, onehot))
    diff = ad.sub(z_next, head(params, arch, "dyn", z, onehot))
    if surrogate == "absolute":
        reward = ad.batch_mean(ad.absolute(r_err))
        transition = ad.batch_mean(ad.sqrt(ad.add(ad.sum_last(ad.square(diff)), NORM_SMOOTHING)))
    elif surrogate == "squared":
        reward = ad.batch_mean(ad.square(r_err))
        transition = ad.batch_mean(ad.sum_last(ad.square(diff)))
    else:
        raise InvalidInputError(f"unknown surrogate {surrogate!r}")
    total = ad.add(reward, transition)
    penalty = 0.0
    if penalty_weight > 0:
        penalty = ad.batch_mean(_penalty(params, arch, z, onehot))
        total = ad.add(total, ad.mul(penalty, penalty_weight))
    return total, reward, transition, penalty


def _normalized(model: ParametricModel, batch: Batch) -> Batch:
    return Batch(model.normalize(batch.obs), batch.actions, batch.rewards, model.normalize(batch.next_obs))


def loss_and_grad(model: ParametricModel, batch: Batch, penalty_weight: float, surrogate: str = "absolute"):
    """Loss values and reverse-mode gradients on a raw (unstandardised) batch."""
    batch = _normalized(model, batch)
    leaves = {k: ad.Var(v) for k, v in model.params.items()}
    total, reward, transition, penalty = loss_terms(leaves, model.arch, batch, penalty_weight, surrogate)
    total.backward()
    grads = {k: (v.grad if v.grad is not None else np.zeros_like(v.value)) for k, v in leaves.items()}
    values = tuple(float(ad.detach(x)) for x in (total, reward, transition, penalty))
    return values, grads


@dataclass
class GradcheckReport:
    max_rel_error: float
    max_abs_error: float
    analytic: np.ndarray
    numeric: np.ndarray
    worst_index: int
    one_sided: int = 0  # parameters whose central difference straddled a kink
    straddled_both: int = 0  # entries whose offsets still crossed kinks on both sides after refinement


def _crossings(pattern: list, base: list, n: int) -> np.ndarray:
    """Which of ``n`` stacked evaluations changed a ReLU or |.| sign relative to the base point."""
    out = np.zeros(n, dtype=bool)
    for arr, ref in zip(pattern, base):
        if arr.ndim == ref.ndim + 1:
            out |= np.any((arr != ref).reshape(n, -1), axis=1)
    return out


def _stencil(model: ParametricModel, batch: Batch, name: str, idx: np.ndarray, step: float, order: int,
             base: float, base_pattern: list, penalty_weight: float, surrogate: str):
    """Finite-difference estimates for entries ``idx`` of one tensor, plus which sides crossed a kink."""
    shape = model.params[name].shape
    flat = model.params[name].ravel()
    offsets = (1, -1) if order == 2 else (1, -1, 2, -2)
    f, crossed = {0: base}, {}
    for k in offsets:
        pert = np.repeat(flat[None, :], idx.size, axis=0)
        pert[np.arange(idx.size), idx] += k * step
        params = dict(model.params)
        params[name] = pert.reshape((idx.size,) + shape)
        with ad.record_kinks() as pattern:
            f[k] = loss_terms(params, model.arch, batch, penalty_weight, surrogate)[0]
        crossed[k] = _crossings(pattern, base_pattern, idx.size)
    if order == 2:
        est = (f[1] - f[-1]) / (2.0 * step)
        fwd = (f[1] - f[0]) / step
        bwd = (f[0] - f[-1]) / step
        up, down = crossed[1], crossed[-1]
    else:
        est = (-f[2] + 8.0 * f[1] - 8.0 * f[-1] + f[-2]) / (12.0 * step)
        fwd = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * step)
        bwd = (3.0 * f[0] - 4.0 * f[-1] + f[-2]) / (2.0 * step)
        up, down = crossed[1] | crossed[2], crossed[-1] | crossed[-2]
    est = np.where(up & ~down, bwd, est)
    est = np.where(down & ~up, fwd, est)
    return est, up, down


def gradcheck_detail(model: ParametricModel, batch: Batch, penalty_weight: float = 0.0,
                     surrogate: str = "absolute", step: float = GRADCHECK_STEP, order: int = 4,
                     chunk: int = 256, refinements: int = 4) -> GradcheckReport:
    """Reverse-mode gradient against central differences, for every parameter.

    Perturbed copies of one parameter tensor are stacked along a leading axis
    and pushed through the loss together, so each difference is an honest
    re-evaluation of the full loss at ``theta + j step e_i``. ``order=4`` uses
    the five-point stencil on offsets ``-2..2``; ``order=2`` the plain
    two-point one. The unsquared transition norm has curvature ``1 / r`` at a
    residual of size ``r``, so at trained checkpoints the two-point estimate
    can carry truncation errors above 1e-4 on its own.

    The loss is only piecewise smooth. When the offsets on one side flip the
    sign of some ReLU or absolute value, a one-sided stencil on the other side
    replaces the central one. When both sides flip, the entry is differenced
    again with the step divided by 16, up to ``refinements`` times.
    """
    if order not in (2, 4):
        raise InvalidInputError("order must be 2 or 4")
    _, grads = loss_and_grad(model, batch, penalty_weight, surrogate)
    batch = _normalized(model, batch)
    with ad.record_kinks() as base_pattern:
        base = float(loss_terms(model.params, model.arch, batch, penalty_weight, surrogate)[0])
    analytic, numeric = [], []
    one_sided = both = 0
    for name, _ in model.arch.shapes():
        size = model.params[name].size
        num = np.empty(size)
        for lo in range(0, size, chunk):
            idx = np.arange(lo, min(size, lo + chunk))
            h = step
            est, up, down = _stencil(model, batch, name, idx, h, order, base, base_pattern, penalty_weight,
                                     surrogate)
            num[idx] = est
            stuck = idx[up & down]
            one_sided += int(np.sum(up ^ down))
            for _ in range(refinements):
                if stuck.size == 0:
                    break
                h /= 16.0
                est, up, down = _stencil(model, batch, name, stuck, h, order, base, base_pattern,
                                         penalty_weight, surrogate)
                num[stuck] = est
                one_sided += int(np.sum(up ^ down))
                stuck = stuck[up & down]
            both += int(stuck.size)
        analytic.append(grads[name].ravel())
        numeric.append(num)
    a, n = np.concatenate(analytic), np.concatenate(numeric)
    err = np.abs(a - n)
    rel = err / np.maximum(np.maximum(np.abs(a), np.abs(n)), GRAD_FLOOR)
    return GradcheckReport(float(rel.max(initial=0.0)), float(err.max(initial=0.0)), a, n,
                           int(np.argmax(rel)), one_sided, both)


def gradcheck(model: ParametricModel, batch: Batch, tol: float = 1e-4, penalty_weight: float = 0.0,
              surrogate: str = "absolute") -> float:
    """Largest relative error between reverse-mode and central-difference gradients.

    ``tol`` is not used to stop early; compare the return value against it.
    """
    del tol
    return gradcheck_detail(model, batch, penalty_weight, surrogate).max_rel_error


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    steps: int = 30_000
    batch_size: int = 256
    gamma: float = 0.9
    latent_dim: int = 2
    penalty_weight: float = 0.01
    seed: int = 0
    optimizer: str = "sgd"  # "sgd" or "adam"
    encoder_hidden: tuple[int, ...] = (32,)
    head_hidden: tuple[int, ...] = (32, 32)
    encoder_init_scale: float = 1.0
    n_snapshots: int = 5
    activation: str = "relu"
    surrogate: str = "absolute"  # "squared" trains on squared errors instead
    freeze_encoder: bool = False

    def __post_init__(self):
        if min(self.learning_rate, self.steps, self.batch_size, self.latent_dim) <= 0:
            raise InvalidInputError("learning rate, steps, batch size and latent dimension must be positive")
        if not 0 <= self.gamma < 1 or self.penalty_weight < 0:
            raise InvalidInputError("need 0 <= gamma < 1 and penalty_weight >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise InvalidInputError(f"unknown optimizer {self.optimizer!r}")
        if self.surrogate not in ("absolute", "squared"):
            raise InvalidInputError(f"unknown surrogate {self.surrogate!r}")
        object.__setattr__(self, "encoder_hidden", tuple(self.encoder_hidden))
        object.__setattr__(self, "head_hidden", tuple(self.head_hidden))

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidInputError(f"unknown train config keys {sorted(unknown)}")
        return cls(**doc)


@dataclass
class TrainTrace:
    reward_loss: np.ndarray
    transition_loss: np.ndarray
    penalty_loss: np.ndarray
    snapshot_steps: list[int] = field(default_factory=list)
    snapshots: list[np.ndarray] = field(default_factory=list)
    value_gap: float | None = None

    def window_mean(self, series: str, at: float, width: float = 0.02) -> float:
        """Mean of a loss series over ``[at - width, at]`` as fractions of training."""
        x = getattr(self, series)
        n = len(x)
        hi = max(1, int(round(at * n)))
        lo = max(0, hi - max(1, int(round(width * n))))
        return float(np.mean(x[lo:hi]))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "reward_loss", "transition_loss", "penalty"])
            for i, row in enumerate(zip(self.reward_loss, self.transition_loss, self.penalty_loss)):
                w.writerow([i] + [repr(float(v)) for v in row])


class _Adam:
    def __init__(self, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m, self.v, self.t = {}, {}, 0

    def update(self, params, grads):
        self.t += 1
        for k, g in grads.items():
            m = self.m[k] = self.b1 * self.m.get(k, 0.0) + (1 - self.b1) * g
            v = self.v[k] = self.b2 * self.v.get(k, 0.0) + (1 - self.b2) * g * g
            mhat = m / (1 - self.b1 ** self.t)
            vhat = v / (1 - self.b2 ** self.t)
            params[k] = params[k] - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def train_deepmdp(data: TransitionDataset, config: TrainConfig) -> tuple[ParametricModel, TrainTrace]:
    """Minibatch training; identical data and config give bit-identical traces."""
    if len(data) == 0:
        raise InvalidInputError("dataset is empty")
    rng = np.random.default_rng(config.seed)
    arch = Architecture(data.obs_dim, config.latent_dim, data.n_actions, config.encoder_hidden, config.head_hidden,
                        config.activation)
    model = ParametricModel.init(arch, rng, config.encoder_init_scale)
    model.fit_input(np.concatenate([data.obs, data.next_obs]))
    adam = _Adam(config.learning_rate) if config.optimizer == "adam" else None
    n = config.steps
    trace = TrainTrace(np.empty(n), np.empty(n), np.empty(n))
    snap_at = set(np.linspace(0, n, config.n_snapshots).round().astype(int).tolist()) if config.n_snapshots else set()
    for step in range(n):
        if step in snap_at:
            trace.snapshot_steps.append(step)
            trace.snapshots.append(model.flat())
        idx = rng.integers(len(data), size=config.batch_size)
        (total, rew, dyn, pen), grads = loss_and_grad(model, Batch.take(data, idx), config.penalty_weight,
                                                      config.surrogate)
        if not np.isfinite(total):
            raise DivergenceError(step, total)
        if config.freeze_encoder:
            grads = {k: g for k, g in grads.items() if not k.startswith("enc_")}
        trace.reward_loss[step], trace.transition_loss[step], trace.penalty_loss[step] = rew, dyn, pen
        if adam is not None:
            adam.update(model.params, grads)
        else:
            for k, g in grads.items():
                model.params[k] = model.params[k] - config.learning_rate * g
    if n in snap_at:
        trace.snapshot_steps.append(n)
        trace.snapshots.append(model.flat())
    return model, trace


# ------------------------------------------------------------------ evaluation


class TabularModel:
    """Lookup-table latent model over a finite set of observations (exact when built from M itself)."""

    def __init__(self, observations: np.ndarray, coords: np.ndarray, reward: np.ndarray, next_index: np.ndarray):
        self.observations = np.asarray(observations, dtype=float)
        self.coords = np.asarray(coords, dtype=float)
        self.reward = np.asarray(reward, dtype=float)
        self.next_index = np.asarray(next_index, dtype=int)
        self._lookup = {o.tobytes(): i for i, o in enumerate(self.observations)}

    def encode(self, obs) -> np.ndarray:
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        return self.coords[[self._lookup[o.tobytes()] for o in obs]]

    def _index(self, z) -> np.ndarray:
        z = np.atleast_2d(z)
        return np.argmin(np.linalg.norm(z[:, None, :] - self.coords[None], axis=-1), axis=1)

    def predict_reward(self, z, actions) -> np.ndarray:
        return self.reward[self._index(z), np.atleast_1d(actions)]

    def predict_next(self, z, actions) -> np.ndarray:
        return self.coords[self.next_index[self._index(z), np.atleast_1d(actions)]]


def empirical_value_gap(env, model, n_trajectories: int, horizon: int, seed: int, gamma: float = 0.9,
                        per_trajectory: bool = False):
    """Mean ``|sum_t gamma^t r_t - sum_t gamma^t R(z_t, a_t)|`` under a shared random action sequence.

    ``z_0 = phi(s_0)`` and ``z_{t+1} = P(z_t, a_t)``: the model is rolled open
    loop. ``model`` needs ``encode``, ``predict_reward`` and ``predict_next``.
    """
    if horizon < 1 or n_trajectories < 1:
        raise InvalidInputError("need horizon >= 1 and at least one trajectory")
    rng = np.random.default_rng(seed)
    gaps = np.empty(n_trajectories)
    for i in range(n_trajectories):
        obs = env.reset(rng)
        z = model.encode(obs)
        real = pred = 0.0
        disc = 1.0
        for _ in range(horizon):
            a = int(rng.integers(env.n_actions))
            pred += disc * float(model.predict_reward(z, a)[0])
            obs, r = env.step(a)
            real += disc * float(r)
            z = model.predict_next(z, a)
            disc *= gamma
        gaps[i] = abs(real - pred)
    return gaps if per_trajectory else float(gaps.mean())


def exact_tabular(mdp: FiniteMdp, observations: np.ndarray, coords: np.ndarray) -> TabularModel:
    """Lookup model reproducing a deterministic finite MDP exactly, states placed at ``coords``."""
    return TabularModel(observations, coords, mdp.reward, mdp.transition.argmax(-1))


@dataclass
class SnappedModel:
    """Closed finite latent model obtained by snapping a trained DeepMDP to its visited latents.

    ``points`` are the deduplicated encodings of a finite observation set (one
    row per underlying state); next-latent predictions ``next_raw`` are
    projected to the nearest point and ``radius`` is the largest projection
    distance. The model satisfies the rollout interface of ``empirical_value_gap``
    with snapped dynamics.
    """

    model: LatentModel
    points: np.ndarray
    next_raw: np.ndarray  # (Z, A, k) head outputs before projection
    next_index: np.ndarray  # (Z, A)
    radius: float
    observations: np.ndarray

    def _point(self, z) -> np.ndarray:
        z = np.atleast_2d(z)
        return np.argmin(np.linalg.norm(z[:, None, :] - self.points[None], axis=-1), axis=1)

    def encode(self, obs) -> np.ndarray:
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        rows = [int(np.flatnonzero(np.all(self.observations == o, axis=1))[0]) for o in obs]
        return self.points[self.model.embed[rows]]

    def predict_reward(self, z, actions) -> np.ndarray:
        return self.model.reward[self._point(z), np.atleast_1d(actions)]

    def predict_next(self, z, actions) -> np.ndarray:
        return self.points[self.next_index[self._point(z), np.atleast_1d(actions)]]


def snap_model(trained: ParametricModel, observations: np.ndarray, radius: float = SNAP_RADIUS) -> SnappedModel:
    z = trained.encode(observations)
    points: list[np.ndarray] = []
    embed = np.empty(len(z), dtype=int)
    for i, zi in enumerate(z):
        for k, p in enumerate(points):
            if np.linalg.norm(zi - p) <= radius:
                embed[i] = k
                break
        else:
            embed[i] = len(points)
            points.append(zi)
    pts = np.array(points)
    A = trained.arch.n_actions
    reward = np.stack([trained.predict_reward(pts, np.full(len(pts), a)) for a in range(A)], axis=1)
    nxt = np.stack([trained.predict_next(pts, np.full(len(pts), a)) for a in range(A)], axis=1)
    dist = np.linalg.norm(nxt[:, :, None, :] - pts[None, None], axis=-1)
    table = np.argmin(dist, axis=-1)
    rho = float(np.max(np.min(dist, axis=-1)))
    latent = LatentModel(MetricSpace.euclidean(pts), embed, reward, transition=table)
    return SnappedModel(latent, pts, nxt, table, rho, np.asarray(observations, dtype=float))


def open_loop_lipschitz(model: LatentModel, gamma: float, tol: float = 1e-13) -> tuple[float, tuple | None]:
    """Lipschitz constant of open-loop returns of a deterministic closed model.

    ``D(z1, z2) = max_a |R(z1, a) - R(z2, a)| + gamma D(P(z1, a), P(z2, a))`` bounds
    the return gap of any shared action sequence; the constant is ``max D / d``.
    The iterate is lifted by its remaining gap so the constant is an upper bound.
    """
    if not model.is_deterministic():
        raise InvalidInputError("open-loop constants need deterministic latent transitions")
    nxt = model.transition.argmax(-1)
    R = model.reward
    dR = np.abs(R[:, None, :] - R[None, :, :])
    D = np.zeros(dR.shape[:2])
    while True:
        new = np.max(dR + gamma * D[nxt[:, None, :], nxt[None, :, :]], axis=-1)
        change = float(np.max(np.abs(new - D), initial=0.0))
        D = new
        if change <= tol:
            break
    D = D + gamma * change / (1.0 - gamma)
    dist = model.space.dist
    off = ~np.eye(len(D), dtype=bool)
    if not off.any():
        return 0.0, None
    ratio = np.where(off & (dist > 0), D / np.where(dist > 0, dist, 1.0), 0.0)
    if np.any(off & (dist == 0)):
        raise InvalidInputError("snapped model has coincident points")
    i, j = np.unravel_index(np.argmax(ratio), ratio.shape)
    return float(ratio[i, j]), (int(i), int(j))


def certify_snapped_gap(env, mdp: FiniteMdp, snapped: SnappedModel, continuous: ParametricModel | None = None,
                        n_trajectories: int = 200, horizon: int = 100, seed: int = 0) -> Certificate:
    """Empirical open-loop value gap of the snapped model against its certified bound.

    With ``L_R``, ``L_P`` the worst reward and next-latent errors at the snapped
    points, ``rho`` the projection radius and ``K`` the open-loop constant,
    every trajectory satisfies ``gap <= (L_R + gamma K L_P) / (1 - gamma) + gamma K rho / (1 - gamma)``.
    The first term is the value-difference bound of the snapped model, the
    second the projection allowance.
    """
    gamma = mdp.discount
    model = snapped.model
    if model.embed.shape[0] != mdp.n_states:
        raise InvalidInputError("snapped model must cover every state of the MDP")
    k_open, wit = open_loop_lipschitz(model, gamma)
    emb = model.embed
    loss_r = float(np.max(np.abs(mdp.reward - model.reward[emb])))
    succ = mdp.transition.argmax(-1)
    if not np.all(mdp.transition.max(-1) == 1.0):
        raise InvalidInputError("open-loop certification needs a deterministic MDP")
    target = snapped.points[emb[succ]]  # (S, A, k)
    loss_p = float(np.max(np.linalg.norm(target - snapped.next_raw[emb], axis=-1)))
    lemma = (loss_r + gamma * k_open * loss_p) / (1.0 - gamma)
    allowance = gamma * k_open * snapped.radius / (1.0 - gamma)
    gap = empirical_value_gap(env, snapped, n_trajectories, horizon, seed, gamma)
    notes = [f"L_R={loss_r:.6g}", f"L_P={loss_p:.6g}", f"rho={snapped.radius:.6g}", f"K_open={k_open:.6g}",
             f"bound={lemma:.6g}", f"projection allowance={allowance:.6g}", f"latent points={model.n_latent}"]
    if continuous is not None:
        cont = empirical_value_gap(env, continuous, n_trajectories, horizon, seed, gamma)
        notes.append(f"continuous-rollout gap={cont:.6g} (not certified)")
    snapped_losses = global_losses(mdp, model, MetricKind.WASSERSTEIN)
    notes.append(f"snapped transition loss={snapped_losses.transition_loss:.6g}")
    ident = digest(mdp.transition, mdp.reward, gamma, model, n_trajectories, horizon, seed)
    return Certificate("open_loop_value_gap", "wasserstein", gap, lemma + allowance, wit or (), ident, notes=notes)
