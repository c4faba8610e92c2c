import numpy as np
import pytest

from deepmdp_lab.envs import RingWorldEnv, TransitionDataset, ringworld, ringworld_dataset
from deepmdp_lab.latent import LatentModel
from deepmdp_lab.mdp_core import InvalidInputError
from deepmdp_lab.prob_metrics import MetricSpace
from deepmdp_lab.train import (
    Architecture,
    Batch,
    DivergenceError,
    ParametricModel,
    TabularModel,
    TrainConfig,
    certify_snapped_gap,
    empirical_value_gap,
    exact_tabular,
    gradcheck,
    gradcheck_detail,
    load_checkpoint,
    loss_and_grad,
    one_hot,
    open_loop_lipschitz,
    save_checkpoint,
    snap_model,
    train_deepmdp,
)

GRADCHECK_TOL = 1e-4


def check_snapshots(model, trace, data, config, batch_size=16):
    """Gradient check at every recorded snapshot of a run."""
    assert len(trace.snapshots) == 5
    idx = np.random.default_rng(0).choice(len(data), size=min(batch_size, len(data)), replace=False)
    batch = Batch.take(data, idx)
    for flat in trace.snapshots:
        err = gradcheck(model.with_flat(flat), batch, GRADCHECK_TOL, config.penalty_weight, config.surrogate)
        assert err <= GRADCHECK_TOL


def check_trace(trace):
    for series in (trace.reward_loss, trace.transition_loss, trace.penalty_loss):
        assert np.all(np.isfinite(series)) and np.all(series >= 0)


def full_losses(model, data, config):
    batch = Batch.take(data, np.arange(len(data)))
    return loss_and_grad(model, batch, config.penalty_weight, config.surrogate)[0]


def one_state_dataset(n=64, reward=0.7, obs_dim=16):
    obs = np.tile(np.linspace(0, 1, obs_dim), (n, 1))
    return TransitionDataset(obs, np.zeros(n, int), np.full(n, reward), obs.copy(), 1)


@pytest.fixture(scope="module")
def ring_small():
    world = ringworld(6, 1, 0.9, warp=0.5)
    return world, ringworld_dataset(world, 400, 0, resolution=8)


class TestTraining:
    def test_one_state_constant_reward(self):
        data = one_state_dataset()
        cfg = TrainConfig(learning_rate=1e-4, steps=2000, batch_size=32, optimizer="adam", seed=0)
        model, trace = train_deepmdp(data, cfg)
        _, reward, transition, _ = full_losses(model, data, cfg)
        assert reward <= 1e-3 and transition <= 1e-3
        check_trace(trace)
        check_snapshots(model, trace, data, cfg)

    def test_frozen_encoder_reaches_least_squares(self, ring_small):
        _, data = ring_small
        n = len(data)
        cfg = TrainConfig(learning_rate=1e-2, steps=3000, batch_size=n, optimizer="adam", penalty_weight=0.0,
                          head_hidden=(), activation="linear", surrogate="squared", freeze_encoder=True, seed=1)
        model, trace = train_deepmdp(data, cfg)
        for name in model.params:
            if name.startswith("enc_"):
                start = model.with_flat(trace.snapshots[0]).params[name]
                assert np.array_equal(model.params[name], start)
        z, z_next = model.encode(data.obs), model.encode(data.next_obs)
        feats = np.hstack([z, one_hot(data.actions, 3), np.ones((n, 1))])
        target = np.hstack([data.rewards[:, None], z_next])
        coef = np.linalg.lstsq(feats, target, rcond=None)[0]
        residual = float(np.sum((feats @ coef - target) ** 2) / n)
        total = full_losses(model, data, cfg)[0]
        assert residual - 1e-12 <= total <= 1.01 * residual
        check_trace(trace)
        check_snapshots(model, trace, data, cfg)

    def test_deterministic(self, ring_small):
        _, data = ring_small
        cfg = TrainConfig(learning_rate=1e-3, steps=60, batch_size=16, optimizer="adam", seed=3)
        (m1, t1), (m2, t2) = train_deepmdp(data, cfg), train_deepmdp(data, cfg)
        for series in ("reward_loss", "transition_loss", "penalty_loss"):
            assert np.array_equal(getattr(t1, series), getattr(t2, series))
        assert all(np.array_equal(a, b) for a, b in zip(t1.snapshots, t2.snapshots))
        assert np.array_equal(m1.flat(), m2.flat())
        check_trace(t1)
        check_snapshots(m1, t1, data, cfg)
        other = train_deepmdp(data, TrainConfig(learning_rate=1e-3, steps=60, batch_size=16, optimizer="adam",
                                                seed=4))[1]
        assert not np.array_equal(other.reward_loss, t1.reward_loss)

    def test_divergence_reports_step(self):
        data = one_state_dataset(reward=1e3)
        cfg = TrainConfig(learning_rate=1e6, steps=200, batch_size=8, surrogate="squared", penalty_weight=0.0)
        with pytest.raises(DivergenceError) as err:
            with np.errstate(all="ignore"):
                train_deepmdp(data, cfg)
        assert err.value.step > 0

    def test_config_validation(self):
        with pytest.raises(InvalidInputError):
            TrainConfig(penalty_weight=-1.0)
        with pytest.raises(InvalidInputError):
            TrainConfig(optimizer="rmsprop")
        with pytest.raises(InvalidInputError):
            TrainConfig.from_dict({"learning_rate": 1e-3, "momentum": 0.9})

    def test_checkpoint_round_trip(self, tmp_path, ring_small):
        _, data = ring_small
        model = ParametricModel.init(Architecture(data.obs_dim, 2, 3), np.random.default_rng(0))
        model.fit_input(data.obs)
        save_checkpoint(model, tmp_path / "m.json")
        back = load_checkpoint(tmp_path / "m.json")
        assert np.array_equal(back.flat(), model.flat())
        assert np.array_equal(back.encode(data.obs), model.encode(data.obs))
        doc = model.to_dict()
        doc["parameters"][0] = float("nan")
        with pytest.raises(InvalidInputError):
            ParametricModel.from_dict(doc)

    def test_encoder_output_is_squashed(self, ring_small):
        _, data = ring_small
        model = ParametricModel.init(Architecture(data.obs_dim, 2, 3), np.random.default_rng(1), 10.0)
        z = model.encode(data.obs)
        assert np.all((z > 0) & (z < 1))


def reward_head_lipschitz(model, seed):
    rng = np.random.default_rng(1000 + seed)
    z1 = rng.uniform(0, 1, size=(4000, 2))
    z2 = z1 + rng.normal(0, 0.05, size=z1.shape)
    dist = np.linalg.norm(z1 - z2, axis=1)
    worst = 0.0
    for a in range(3):
        acts = np.full(len(z1), a)
        gap = np.abs(model.predict_reward(z1, acts) - model.predict_reward(z2, acts))
        worst = max(worst, float(np.max(gap / dist)))
    return worst


def test_gradient_penalty_lowers_reward_lipschitz_constant():
    world = ringworld(12, 4, 0.9, warp=0.5)
    constants = {0.0: [], 0.01: []}
    for seed in range(5):
        data = ringworld_dataset(world, 2000, seed, resolution=8)
        for lam in constants:
            cfg = TrainConfig(learning_rate=1e-3, steps=1500, batch_size=64, optimizer="adam",
                              penalty_weight=lam, seed=seed)
            model, trace = train_deepmdp(data, cfg)
            check_trace(trace)
            check_snapshots(model, trace, data, cfg)
            constants[lam].append(reward_head_lipschitz(model, seed))
    assert np.median(constants[0.01]) < np.median(constants[0.0])


class TestGradcheck:
    def batch(self, rng, obs_dim=6, n=12, n_actions=3):
        obs = rng.normal(size=(n, obs_dim))
        return Batch(obs, rng.integers(n_actions, size=n), rng.normal(size=n), rng.normal(size=(n, obs_dim)))

    def test_linear_model_squared_loss(self):
        rng = np.random.default_rng(0)
        arch = Architecture(6, 2, 3, encoder_hidden=(4,), head_hidden=(4,), activation="linear", squash="none")
        model = ParametricModel.init(arch, rng)
        assert gradcheck(model, self.batch(rng), surrogate="squared") <= 1e-6

    @pytest.mark.parametrize("penalty", [0.0, 0.01])
    def test_random_two_layer_model(self, penalty):
        for seed in range(3):
            rng = np.random.default_rng(seed)
            model = ParametricModel.init(Architecture(6, 2, 3, encoder_hidden=(8,), head_hidden=(8, 8)), rng)
            assert gradcheck(model, self.batch(rng), penalty_weight=penalty) <= 1e-4

    def test_dead_unit(self):
        rng = np.random.default_rng(1)
        model = ParametricModel.init(Architecture(6, 2, 3, encoder_hidden=(5,), head_hidden=(8, 8)), rng)
        model.params["enc_b0"][2] = -1e3  # hidden unit 2 never fires
        rep = gradcheck_detail(model, self.batch(rng), penalty_weight=0.01)
        names = [n for n, _ in model.arch.shapes()]
        offsets = np.cumsum([0] + [model.params[n].size for n in names])
        dead = []
        for name, lo in zip(names, offsets):
            if name == "enc_w0":
                dead += [lo + i * 5 + 2 for i in range(6)]
            elif name == "enc_b0":
                dead.append(lo + 2)
            elif name == "enc_w1":
                dead += list(range(lo + 2 * 2, lo + 3 * 2))
        dead = np.array(dead)
        assert np.all(rep.analytic[dead] == 0.0)
        assert np.max(np.abs(rep.analytic[dead] - rep.numeric[dead])) <= 1e-8
        assert rep.max_rel_error <= 1e-4


class TestValueGap:
    def test_exact_tabular_model(self):
        world = ringworld(8, 1, 0.9, warp=0.5)
        env = RingWorldEnv(world, 8)
        coords = np.random.default_rng(0).uniform(size=(8, 2))
        model = exact_tabular(world.mdp, env.observations, coords)
        assert empirical_value_gap(env, model, 50, 40, seed=0) == 0.0

    def test_constant_reward_offset(self):
        world = ringworld(8, 1, 0.9, warp=0.5)
        env = RingWorldEnv(world, 8)
        coords = np.random.default_rng(0).uniform(size=(8, 2))
        c, gamma, T = 0.3, 0.9, 60
        model = TabularModel(env.observations, coords, world.mdp.reward + c, world.mdp.transition.argmax(-1))
        gaps = empirical_value_gap(env, model, 20, T, seed=1, gamma=gamma, per_trajectory=True)
        assert np.max(np.abs(gaps - c * (1 - gamma ** T) / (1 - gamma))) <= 1e-9

    def test_rejects_empty_horizon(self):
        world = ringworld(4, 1)
        env = RingWorldEnv(world, 8)
        with pytest.raises(InvalidInputError):
            empirical_value_gap(env, exact_tabular(world.mdp, env.observations, np.eye(4)), 1, 0, 0)

    def test_open_loop_constant_closed_form(self):
        model = LatentModel(MetricSpace.euclidean([0.0, 2.0]), [0, 1], np.array([[1.0], [0.0]]),
                            transition=np.array([[0], [1]]))
        k, pair = open_loop_lipschitz(model, 0.5)
        # returns 2 and 0 at distance 2
        assert k == pytest.approx(1.0, abs=1e-12) and pair in ((0, 1), (1, 0))

    def test_snapped_certificate_after_short_training(self, ring_small):
        world, data = ring_small
        cfg = TrainConfig(learning_rate=1e-3, steps=300, batch_size=64, optimizer="adam", seed=0)
        model, trace = train_deepmdp(data, cfg)
        check_trace(trace)
        check_snapshots(model, trace, data, cfg)
        env = RingWorldEnv(world, 8)
        snapped = snap_model(model, env.observations)
        assert snapped.model.closed and snapped.radius >= 0
        cert = certify_snapped_gap(env, world.mdp, snapped, model, n_trajectories=50, horizon=60, seed=0)
        assert cert.satisfied, str(cert)

    def test_exact_snapped_model_has_zero_bound(self):
        world = ringworld(6, 1, 0.9, warp=0.5)
        env = RingWorldEnv(world, 8)
        snapped = snap_model_from_table(world, env)
        cert = certify_snapped_gap(env, world.mdp, snapped, n_trajectories=20, horizon=40, seed=0)
        assert cert.lhs <= 1e-12 and cert.rhs <= 1e-12


def snap_model_from_table(world, env):
    """Snapped model built by hand from the exact tabular model."""
    from deepmdp_lab.train import SnappedModel

    n = world.n_states
    pts = np.stack([np.cos(2 * np.pi * np.arange(n) / n), np.sin(2 * np.pi * np.arange(n) / n)], 1)
    table = world.mdp.transition.argmax(-1)
    latent = LatentModel(MetricSpace.euclidean(pts), np.arange(n), world.mdp.reward, transition=table)
    return SnappedModel(latent, pts, pts[table], table, 0.0, env.observations)
