"""Benchmark environments and instance generators.

DonutWorld is the continuous annulus task; RingWorld is its exact finite
discretization with one or several disconnected copies of the track. The
random generators feed the certificate batteries.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .latent import LatentModel
from .mdp_core import FiniteMdp, InvalidInputError, Policy
from .prob_metrics import MetricSpace

# Grayscale luminances of the rendered grid.
AGENT, TRACK, GRASS, OUT = 1.0, 0.75, 0.25, 0.0
TRACK_RADIUS = 4.5


class InvalidStateError(ValueError):
    pass


@dataclass(frozen=True)
class DonutWorldConfig:
    inner: float = 3.0
    outer: float = 6.0
    track_lo: float = 4.0
    track_hi: float = 5.0
    obs_resolution: int = 16
    n_tracks: int = 1
    seed: int = 0
    start: str = "track"  # "track" (uniform over the band) or "annulus"

    def __post_init__(self):
        if not 0 < self.inner < self.track_lo < self.track_hi < self.outer:
            raise InvalidInputError("need 0 < inner < track_lo < track_hi < outer")
        if not 8 <= self.obs_resolution <= 64:
            raise InvalidInputError("obs_resolution must lie in [8, 64]")
        if self.n_tracks not in (1, 4):
            raise InvalidInputError("n_tracks must be 1 or 4")
        if self.start not in ("track", "annulus"):
            raise InvalidInputError(f"unknown start distribution {self.start!r}")

    @property
    def obs_shape(self) -> tuple[int, int]:
        side = self.obs_resolution * (2 if self.n_tracks == 4 else 1)
        return side, side


def _speed(config: DonutWorldConfig, x: float, y: float) -> float:
    r = float(np.hypot(x, y))
    return min(1.0, r - config.inner, config.outer - r)


def clockwise_advance(x0: float, y0: float, x1: float, y1: float) -> float:
    """Signed decrease of ``atan2(y, x)`` between two points, wrapped to (-pi, pi]."""
    delta = np.arctan2(y0, x0) - np.arctan2(y1, x1)
    return float((delta + np.pi) % (2 * np.pi) - np.pi) if delta != 0 else 0.0


def _background(config: DonutWorldConfig) -> np.ndarray:
    res = config.obs_resolution
    half = config.outer
    centres = (np.arange(res) + 0.5) / res * 2 * half - half
    xx, yy = np.meshgrid(centres, -centres)  # row 0 is the top of the picture
    r = np.hypot(xx, yy)
    img = np.full((res, res), OUT)
    img[(r >= config.inner) & (r <= config.outer)] = GRASS
    img[(r >= config.track_lo) & (r <= config.track_hi)] = TRACK
    return img


def _pixel(config: DonutWorldConfig, x: float, y: float) -> tuple[int, int]:
    res = config.obs_resolution
    half = config.outer
    col = int(np.clip(np.floor((x + half) / (2 * half) * res), 0, res - 1))
    row = int(np.clip(np.floor((half - y) / (2 * half) * res), 0, res - 1))
    return row, col


def render(config: DonutWorldConfig, x: float, y: float, track: int = 0) -> np.ndarray:
    """Grayscale grid: agent 1.0, track 0.75, grass 0.25, out of bounds 0.0.

    The four-track variant tiles four copies of the annulus in a 2x2 layout;
    only the copy holding the agent shows it.
    """
    tile = _background(config)
    row, col = _pixel(config, x, y)
    if config.n_tracks == 1:
        tile[row, col] = AGENT
        return tile
    res = config.obs_resolution
    img = np.tile(tile, (2, 2))
    r0, c0 = divmod(int(track), 2)
    img[r0 * res + row, c0 * res + col] = AGENT
    return img


def _split_state(config: DonutWorldConfig, state) -> tuple[float, float, int]:
    state = tuple(state)
    if len(state) == 2:
        x, y, track = state[0], state[1], 0
    elif len(state) == 3:
        x, y, track = state
    else:
        raise InvalidStateError(f"state must be (x, y) or (x, y, track), got {state!r}")
    if not 0 <= int(track) < config.n_tracks:
        raise InvalidStateError(f"track {track} outside 0..{config.n_tracks - 1}")
    r = np.hypot(x, y)
    if not (config.inner <= r <= config.outer):
        raise InvalidStateError(f"state ({x}, {y}) at radius {r:.4f} is out of bounds")
    return float(x), float(y), int(track)


def donutworld_step(config: DonutWorldConfig, state, action):
    """One DonutWorld transition; returns ``(next_state, reward, observation)``.

    The agent moves along the normalised action direction by the speed rule
    ``min(1, distance to the nearest out-of-bounds point)``. A ball of that
    radius stays inside the annulus, so the move never leaves bounds. Reward
    is the clockwise angle swept, positive for decreasing ``atan2(y, x)``.
    """
    x, y, track = _split_state(config, state)
    a = np.asarray(action, dtype=float)
    if a.shape != (2,) or not np.all(np.abs(a) < 1.0):
        raise InvalidInputError(f"action must be a 2-vector in (-1, 1)^2, got {action!r}")
    norm = float(np.hypot(a[0], a[1]))
    if norm == 0.0:
        nx, ny = x, y
    else:
        step = _speed(config, x, y)
        nx, ny = x + step * a[0] / norm, y + step * a[1] / norm
    reward = clockwise_advance(x, y, nx, ny)
    nxt = (nx, ny) if len(tuple(state)) == 2 else (nx, ny, track)
    return nxt, reward, render(config, nx, ny, track)


class DonutWorld:
    """Stateful wrapper with ``reset`` and ``step`` over a fixed set of action directions."""

    def __init__(self, config: DonutWorldConfig, n_directions: int = 8):
        self.config = config
        ang = 2 * np.pi * np.arange(n_directions) / n_directions
        self.directions = 0.999 * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        self.n_actions = n_directions
        self.state = None

    def sample_state(self, rng: np.random.Generator):
        c = self.config
        lo, hi = (c.track_lo, c.track_hi) if c.start == "track" else (c.inner, c.outer)
        # uniform over area of the band
        r = np.sqrt(rng.uniform(lo**2, hi**2))
        theta = rng.uniform(-np.pi, np.pi)
        track = int(rng.integers(c.n_tracks))
        return (r * np.cos(theta), r * np.sin(theta), track)

    def observe(self, state) -> np.ndarray:
        x, y, track = _split_state(self.config, state)
        return render(self.config, x, y, track).ravel()

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.state = self.sample_state(rng)
        return self.observe(self.state)

    def step(self, action: int):
        self.state, reward, obs = donutworld_step(self.config, self.state, self.directions[action])
        return obs.ravel(), reward


# ---------------------------------------------------------------- ring world

CLOCKWISE, COUNTER_CLOCKWISE, STAY = 0, 1, 2


@dataclass(frozen=True, eq=False)
class RingWorld:
    """Finite ring-world: states ``(track, phase)`` indexed ``track * n_phases + phase``.

    Clockwise advances one phase and earns the angle swept; counter-clockwise
    retreats and pays it back; stay earns nothing. With ``warp > 0`` the
    phases are unevenly spaced, mimicking slow grass stretches where each move
    sweeps a smaller angle; ``warp = 0`` gives the uniform step ``2 pi / n``.
    """

    n_phases: int
    n_tracks: int
    mdp: FiniteMdp
    steps: np.ndarray  # angle swept when moving clockwise out of each phase
    angles: np.ndarray  # polar angle of each phase on the track circle

    def state_index(self, track: int, phase: int) -> int:
        return int(track) * self.n_phases + int(phase) % self.n_phases

    def track_phase(self, s: int) -> tuple[int, int]:
        return divmod(int(s), self.n_phases)

    @property
    def n_states(self) -> int:
        return self.n_phases * self.n_tracks

    def position(self, s: int) -> tuple[float, float, int]:
        track, phase = self.track_phase(s)
        th = self.angles[phase]
        return TRACK_RADIUS * np.cos(th), TRACK_RADIUS * np.sin(th), track

    def observation(self, s: int, config: DonutWorldConfig | None = None) -> np.ndarray:
        config = config or self.render_config()
        x, y, track = self.position(s)
        return render(config, x, y, track).ravel()

    def render_config(self, resolution: int = 16) -> DonutWorldConfig:
        return DonutWorldConfig(obs_resolution=resolution, n_tracks=1 if self.n_tracks == 1 else 4)

    def next_state(self, s: int, a: int) -> int:
        return int(np.argmax(self.mdp.transition[s, a]))


def phase_steps(n_phases: int, warp: float = 0.0) -> np.ndarray:
    """Clockwise angle swept out of each phase; they sum to ``2 pi``."""
    if not 0.0 <= warp < 1.0:
        raise InvalidInputError("warp must lie in [0, 1)")
    p = np.arange(n_phases)
    speed = 1.0 - warp * 0.5 * (1.0 - np.cos(2 * np.pi * p / n_phases))
    return 2 * np.pi * speed / speed.sum()


def ringworld(n_phases: int, n_tracks: int = 1, gamma: float = 0.9, warp: float = 0.0) -> RingWorld:
    if n_phases < 3:
        raise InvalidInputError("ring-world needs at least 3 phases")
    if n_tracks < 1:
        raise InvalidInputError("ring-world needs at least one track")
    steps = phase_steps(n_phases, warp)
    angles = -np.concatenate([[0.0], np.cumsum(steps)[:-1]])
    n = n_phases * n_tracks
    P = np.zeros((n, 3, n))
    R = np.zeros((n, 3))
    for t in range(n_tracks):
        for p in range(n_phases):
            s = t * n_phases + p
            fwd = t * n_phases + (p + 1) % n_phases
            back = t * n_phases + (p - 1) % n_phases
            P[s, CLOCKWISE, fwd] = 1.0
            P[s, COUNTER_CLOCKWISE, back] = 1.0
            P[s, STAY, s] = 1.0
            R[s, CLOCKWISE] = steps[p]
            R[s, COUNTER_CLOCKWISE] = -steps[(p - 1) % n_phases]
    return RingWorld(n_phases, n_tracks, FiniteMdp(P, R, gamma), steps, angles)


class RingWorldEnv:
    """Episodic interface over a ring-world with rendered observations."""

    def __init__(self, world: RingWorld, resolution: int = 16):
        self.world = world
        self.config = world.render_config(resolution)
        self.n_actions = 3
        self._obs = np.stack([world.observation(s, self.config) for s in range(world.n_states)])
        self.state = 0

    def observation(self, s: int) -> np.ndarray:
        return self._obs[s]

    @property
    def observations(self) -> np.ndarray:
        return self._obs

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.state = int(rng.integers(self.world.n_states))
        return self._obs[self.state]

    def step(self, action: int):
        mdp = self.world.mdp
        reward = float(mdp.reward[self.state, action])
        self.state = self.world.next_state(self.state, action)
        return self._obs[self.state], reward


# ------------------------------------------------------------------ datasets


@dataclass(frozen=True, eq=False)
class TransitionDataset:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    n_actions: int
    states: np.ndarray | None = None  # underlying finite state ids when known
    next_states: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.actions)
        if n == 0:
            raise InvalidInputError("dataset is empty")
        if self.obs.shape[0] != n or self.next_obs.shape != self.obs.shape or len(self.rewards) != n:
            raise InvalidInputError("dataset columns have inconsistent lengths or widths")

    def __len__(self):
        return len(self.actions)

    @property
    def obs_dim(self) -> int:
        return self.obs.shape[1]


def ringworld_dataset(world: RingWorld, n: int, seed: int, resolution: int = 16) -> TransitionDataset:
    """Uniform states and actions, rendered observations."""
    rng = np.random.default_rng(seed)
    env = RingWorldEnv(world, resolution)
    s = rng.integers(world.n_states, size=n)
    a = rng.integers(3, size=n)
    s2 = np.array([world.next_state(i, j) for i, j in zip(s, a)])
    r = world.mdp.reward[s, a]
    return TransitionDataset(env.observations[s], a, r, env.observations[s2], 3, s, s2)


def donutworld_dataset(config: DonutWorldConfig, n: int, seed: int, n_directions: int = 8) -> TransitionDataset:
    rng = np.random.default_rng(seed)
    env = DonutWorld(config, n_directions)
    obs, nxt, acts, rews = [], [], [], []
    for _ in range(n):
        state = env.sample_state(rng)
        a = int(rng.integers(n_directions))
        s2, r, o2 = donutworld_step(config, state, env.directions[a])
        obs.append(env.observe(state))
        nxt.append(o2.ravel())
        acts.append(a)
        rews.append(r)
    return TransitionDataset(np.array(obs), np.array(acts), np.array(rews), np.array(nxt), n_directions)


def save_dataset(ds: TransitionDataset, path) -> None:
    """CSV rows ``obs..., action, reward, next_obs...`` with a header naming the columns."""
    d = ds.obs_dim
    header = [f"o{i}" for i in range(d)] + ["action", "reward"] + [f"n{i}" for i in range(d)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(ds)):
            w.writerow([repr(float(v)) for v in ds.obs[i]] + [int(ds.actions[i]), repr(float(ds.rewards[i]))]
                       + [repr(float(v)) for v in ds.next_obs[i]])


def load_dataset(path, n_actions: int | None = None) -> TransitionDataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidInputError(f"{path}: empty dataset file")
    header, body = rows[0], rows[1:]
    d = (len(header) - 2) // 2
    if len(header) != 2 * d + 2 or header[d] != "action":
        raise InvalidInputError(f"{path}:1: header does not match obs..., action, reward, next_obs...")
    try:
        arr = np.array([[float(v) for v in r] for r in body])
    except ValueError as exc:
        for k, r in enumerate(body, start=2):
            for c, v in enumerate(r, start=1):
                try:
                    float(v)
                except ValueError:
                    raise InvalidInputError(f"{path}:{k}:{c}: not a number: {v!r}") from exc
        raise
    if arr.ndim != 2 or arr.shape[1] != len(header):
        raise InvalidInputError(f"{path}: ragged rows")
    acts = arr[:, d].astype(np.int64)
    return TransitionDataset(arr[:, :d], acts, arr[:, d + 1], arr[:, d + 2:],
                             n_actions if n_actions is not None else int(acts.max()) + 1)


# ------------------------------------------------------- random instances


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int, gamma: float,
               concentration: float = 1.0) -> FiniteMdp:
    P = rng.dirichlet(np.full(n_states, concentration), size=(n_states, n_actions))
    R = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    return FiniteMdp(P, R, gamma)


def _perturb_rows(rng, P: np.ndarray, eps: float) -> np.ndarray:
    if eps == 0.0:
        return P.copy()
    noisy = P + rng.uniform(0.0, eps, size=P.shape)
    return noisy / noisy.sum(axis=-1, keepdims=True)


def random_instance(seed: int, n_states: int, n_actions: int, gamma: float,
                    perturbation: float = 0.0) -> tuple[FiniteMdp, LatentModel]:
    """Random MDP plus a latent model obtained by perturbing its exact copy.

    Latent points sit at ``0, 1, ..., n-1`` on the line; rewards move by at most
    ``perturbation`` and transition rows get uniform noise of that size before
    renormalising.
    """
    if n_states < 1 or n_actions < 1 or perturbation < 0:
        raise InvalidInputError("sizes must be >= 1 and perturbation >= 0")
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, n_states, n_actions, gamma)
    r_bar = mdp.reward + rng.uniform(-perturbation, perturbation, size=mdp.reward.shape)
    p_bar = _perturb_rows(rng, mdp.transition, perturbation)
    space = MetricSpace.euclidean(np.arange(n_states, dtype=float)[:, None])
    return mdp, LatentModel(space, np.arange(n_states), r_bar, p_bar)


@dataclass(frozen=True, eq=False)
class Instance:
    mdp: FiniteMdp
    model: LatentModel
    policy: Policy  # deep policy over latent points
    seed: int
    notes: dict = field(default_factory=dict)


def lipschitz_latent(rng: np.random.Generator, n_latent: int, n_actions: int, gamma: float,
                     latent_dim: int = 2) -> LatentModel:
    """Closed latent MDP with ``K_P <= 1 < 1 / gamma`` by construction.

    Each row mixes an action-specific distribution shared by every point with a
    point mass on the point itself: ``P(.|z, a) = (1 - alpha_a) q_a + alpha_a delta_z``.
    Coupling the shared parts leaves ``W <= alpha_a d(z1, z2)``.
    """
    coords = rng.uniform(0.0, 1.0, size=(n_latent, latent_dim))
    space = MetricSpace.euclidean(coords)
    alpha = rng.uniform(0.0, 1.0, size=n_actions)
    q = rng.dirichlet(np.ones(n_latent), size=n_actions)
    P = (1 - alpha)[None, :, None] * q[None, :, :] + alpha[None, :, None] * np.eye(n_latent)[:, None, :]
    P /= P.sum(-1, keepdims=True)
    # smooth rewards: random affine function of the coordinates plus a small bump
    w = rng.normal(size=(latent_dim, n_actions))
    R = coords @ w + rng.uniform(-0.1, 0.1, size=(n_latent, n_actions))
    R = R - R.min() + rng.uniform(0, 0.2)
    return LatentModel(space, np.zeros(0, dtype=np.int64), R, P)


def lift_latent(rng: np.random.Generator, latent: LatentModel, n_states: int, gamma: float,
                perturbation: float = 0.0) -> tuple[FiniteMdp, LatentModel]:
    """Build M from M-bar through a random surjective phi, then perturb it.

    Mass headed for latent point ``z`` is split at random among the states that
    embed to ``z``, so with ``perturbation = 0`` the fibres of phi are bisimulation
    classes and every DeepMDP loss vanishes.
    """
    m = latent.n_latent
    if n_states < m:
        raise InvalidInputError("phi must be surjective: need n_states >= n_latent")
    embed = np.concatenate([np.arange(m), rng.integers(m, size=n_states - m)])
    rng.shuffle(embed)
    n_a = latent.n_actions
    P = np.zeros((n_states, n_a, n_states))
    for s in range(n_states):
        for a in range(n_a):
            for z in range(m):
                fibre = np.flatnonzero(embed == z)
                P[s, a, fibre] = latent.transition[embed[s], a, z] * rng.dirichlet(np.ones(fibre.size))
    R = latent.reward[embed].copy()
    if perturbation > 0:
        R += rng.uniform(-perturbation, perturbation, size=R.shape)
        P = (1 - perturbation) * P + perturbation * rng.dirichlet(np.ones(n_states), size=(n_states, n_a))
    P /= P.sum(-1, keepdims=True)
    model = LatentModel(latent.space, embed, latent.reward, latent.transition)
    return FiniteMdp(P, R, gamma), model


def smooth_policy(rng: np.random.Generator, model: LatentModel, kind: str = "random") -> Policy:
    """Deep policy over latent points: ``constant``, ``softmax`` of an affine score, or ``random`` rows."""
    m, n_a = model.n_latent, model.n_actions
    if kind == "constant":
        return Policy.constant(rng.dirichlet(np.ones(n_a)), m)
    if kind == "softmax":
        coords = model.space.coords
        score = coords @ rng.normal(scale=0.5, size=(coords.shape[1], n_a))
        e = np.exp(score - score.max(1, keepdims=True))
        return Policy(e / e.sum(1, keepdims=True))
    if kind == "random":
        return Policy(rng.dirichlet(np.ones(n_a), size=m))
    raise InvalidInputError(f"unknown policy kind {kind!r}")


def lipschitz_instance(seed: int, n_states: int = 6, n_latent: int = 4, n_actions: int = 2,
                       gamma: float = 0.9, perturbation: float = 0.05, latent_dim: int = 2,
                       policy_kind: str | None = None) -> Instance:
    """(M, (M-bar, phi), pi-bar) with a Lipschitz M-bar satisfying ``gamma K_P < 1``."""
    rng = np.random.default_rng(seed)
    latent = lipschitz_latent(rng, n_latent, n_actions, gamma, latent_dim)
    mdp, model = lift_latent(rng, latent, n_states, gamma, perturbation)
    kind = policy_kind or ("constant", "softmax", "random")[seed % 3]
    return Instance(mdp, model, smooth_policy(rng, model, kind), seed, {"policy_kind": kind})


def planted_bisimulation(seed: int, n_blocks: int, n_states: int, n_actions: int,
                         gamma: float = 0.9, sparsity: float = 0.0) -> tuple[FiniteMdp, np.ndarray]:
    """Random MDP whose bisimulation classes contain the planted blocks.

    A random quotient MDP on ``n_blocks`` states is lifted by splitting each
    block's incoming mass at random among its members. Returns the MDP and the
    planted block labels. Rewards are drawn from a coarse grid so that
    coincidences between blocks also occur.
    """
    rng = np.random.default_rng(seed)
    labels = np.concatenate([np.arange(n_blocks), rng.integers(n_blocks, size=n_states - n_blocks)])
    rng.shuffle(labels)
    Q = rng.dirichlet(np.ones(n_blocks), size=(n_blocks, n_actions))
    if sparsity > 0:
        Q = np.where(rng.random(Q.shape) < sparsity, 0.0, Q)
        empty = Q.sum(-1) == 0
        Q[empty, 0] = 1.0
        Q /= Q.sum(-1, keepdims=True)
    Rq = rng.integers(0, 3, size=(n_blocks, n_actions)) / 2.0
    P = np.zeros((n_states, n_actions, n_states))
    for s in range(n_states):
        for a in range(n_actions):
            for b in range(n_blocks):
                members = np.flatnonzero(labels == b)
                P[s, a, members] = Q[labels[s], a, b] * rng.dirichlet(np.ones(members.size))
    P /= P.sum(-1, keepdims=True)
    return FiniteMdp(P, Rq[labels], gamma), labels


def lipschitz_bisim_policy(rng: np.random.Generator, dtilde: np.ndarray, n_actions: int,
                           slope: float) -> tuple[Policy, float]:
    """Random policy that is K-Lipschitz in the pseudometric ``dtilde``.

    ``pi(.|s) = f(s) mu + (1 - f(s)) nu`` where ``f`` is the smallest
    ``slope``-Lipschitz extension of random anchor values, clipped to [0, 1].
    Returns the policy and ``K = slope * max |mu - nu|``.
    """
    n = dtilde.shape[0]
    anchors = rng.choice(n, size=max(1, n // 2), replace=False)
    f = np.min(rng.random(anchors.size)[None, :] + slope * dtilde[:, anchors], axis=1)
    f = np.clip(f, 0.0, 1.0)
    mu, nu = rng.dirichlet(np.ones(n_actions), size=2)
    probs = f[:, None] * mu + (1.0 - f[:, None]) * nu
    return Policy(probs), float(slope * np.max(np.abs(mu - nu)))
