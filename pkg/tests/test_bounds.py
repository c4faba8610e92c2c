import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepmdp_lab.bisim import bisim_metric
from deepmdp_lab.bounds import (
    AssumptionError,
    PolicyNotLipschitzError,
    certify_bisim_chain,
    certify_global_value_diff,
    certify_instance,
    certify_lipschitz_value,
    certify_local_value_diff,
    certify_representation,
    certify_suboptimality,
    construct_deep_policy,
    joined_mdp,
)
from deepmdp_lab.certificate import CERT_TOL, Certificate
from deepmdp_lab.envs import lipschitz_bisim_policy, lipschitz_instance
from deepmdp_lab.latent import LatentModel, latent_policy_lift_and_eval
from deepmdp_lab.mdp_core import FiniteMdp, InvalidInputError, Policy, solve_policy_values
from deepmdp_lab.prob_metrics import MetricSpace, sup_norm


def with_reward(model, reward):
    return LatentModel(model.space, model.embed, reward, model.transition)


def absorbing_pair(gamma=0.5, rewards=(1.0, 0.0)):
    P = np.zeros((2, 1, 2))
    P[0, 0, 0] = P[1, 0, 1] = 1.0
    return FiniteMdp(P, np.array(rewards)[:, None], gamma)


def absorbing_latent(rewards=(1.0, 0.0)):
    return LatentModel(MetricSpace.euclidean([0.0, 1.0]), [0, 1], np.array(rewards)[:, None],
                       transition=np.array([[0], [1]]))


class TestCertificateType:
    def test_satisfied_iff_within_tolerance(self):
        assert Certificate("x", "w", 1.0, 1.0 - 0.5 * CERT_TOL).satisfied
        assert not Certificate("x", "w", 1.0, 1.0 - 2 * CERT_TOL).satisfied
        parent = Certificate("p", "w", 0.0, 1.0, parts=[Certificate("c", "w", 2.0, 1.0)])
        assert not parent.satisfied and [c.name for c in parent.violations()] == ["c"]

    def test_csv_row_columns(self):
        row = Certificate("x", "w", 0.5, 1.0, (1, 2)).csv_row()
        assert row[0] == "x" and float(row[4]) == 0.5 and row[5] == 1 and row[6] == "1 2"

    def test_witness_reproduces_lhs(self):
        inst = lipschitz_instance(11, perturbation=0.1)
        cert = certify_global_value_diff(inst.mdp, inst.model, inst.policy)
        lifted, latent = latent_policy_lift_and_eval(inst.mdp, inst.model, inst.policy, 1e-13)
        s, a = cert.witness
        assert abs(abs(lifted.q[s, a] - latent.q[inst.model.embed[s], a]) - cert.lhs) <= 1e-11

    def test_digest_changes_with_inputs(self):
        a = lipschitz_instance(1, perturbation=0.1)
        b = lipschitz_instance(2, perturbation=0.1)
        da = certify_global_value_diff(a.mdp, a.model, a.policy).inputs_digest
        assert da == certify_global_value_diff(a.mdp, a.model, a.policy).inputs_digest
        assert da != certify_global_value_diff(b.mdp, b.model, b.policy).inputs_digest


class TestValueDiff:
    @pytest.mark.parametrize("kind", ["w", "tv"])
    def test_exact_model(self, kind):
        inst = lipschitz_instance(0, perturbation=0.0)
        for fn in (certify_global_value_diff, certify_local_value_diff):
            cert = fn(inst.mdp, inst.model, inst.policy, kind)
            assert cert.lhs <= 1e-9 and cert.rhs <= 1e-9

    def test_constant_reward_shift_is_tight(self):
        inst = lipschitz_instance(1, perturbation=0.0)
        eps = 0.3
        model = with_reward(inst.model, inst.model.reward + eps)
        cert = certify_global_value_diff(inst.mdp, model, inst.policy)
        assert cert.rhs == pytest.approx(eps / (1 - 0.9), abs=1e-12)
        assert cert.lhs == pytest.approx(eps / (1 - 0.9), abs=1e-9)
        assert cert.satisfied

    @pytest.mark.parametrize("gamma", [0.05, 0.01])
    def test_slack_vanishes_as_gamma_shrinks(self, gamma):
        inst = lipschitz_instance(2, perturbation=0.0, gamma=gamma)
        bump = np.random.default_rng(0).uniform(-0.2, 0.2, size=inst.model.reward.shape)
        cert = certify_global_value_diff(inst.mdp, with_reward(inst.model, inst.model.reward + bump), inst.policy)
        assert cert.satisfied
        assert cert.slack <= 2 * gamma * np.abs(bump).max() / (1 - gamma) + 1e-12

    def test_local_ignores_null_action(self):
        inst = lipschitz_instance(3, perturbation=0.0)
        R = inst.model.reward.copy()
        R[:, 1] += 0.5
        model = with_reward(inst.model, R)
        greedy0 = Policy.deterministic(np.zeros(inst.model.n_latent, int), 2)
        local = certify_local_value_diff(inst.mdp, model, greedy0)
        glob = certify_global_value_diff(inst.mdp, model, greedy0)
        assert local.lhs <= 1e-12 and local.rhs <= 1e-12
        assert glob.rhs > 0.5

    def test_derived_mode_and_assumption(self):
        inst = lipschitz_instance(4, perturbation=0.05)
        assert certify_global_value_diff(inst.mdp, inst.model, inst.policy, k_v_mode="derived").satisfied
        # successor map z1 -> z2 stretches a 0.1 gap to 1
        space = MetricSpace.euclidean([0.0, 0.1, 1.0])
        model = LatentModel(space, [0, 1, 2], np.zeros((3, 1)), transition=np.array([[0], [2], [2]]))
        mdp = FiniteMdp(model.transition, model.reward, 0.9)
        with pytest.raises(AssumptionError):
            certify_global_value_diff(mdp, model, Policy.uniform(3, 1), k_v_mode="derived")

    def test_tv_with_sup_norm_and_wasserstein_both_dominate(self):
        for seed in range(10):
            inst = lipschitz_instance(seed, perturbation=0.1)
            _, latent = latent_policy_lift_and_eval(inst.mdp, inst.model, inst.policy)
            k_sup = max(sup_norm(latent.v), sup_norm(latent.q))
            tv = certify_global_value_diff(inst.mdp, inst.model, inst.policy, "tv", k_v=k_sup)
            w = certify_global_value_diff(inst.mdp, inst.model, inst.policy, "w")
            assert tv.satisfied and w.satisfied
            assert tv.lhs == w.lhs


class TestRepresentation:
    def test_exact_model(self):
        inst = lipschitz_instance(5, perturbation=0.0)
        for mode in ("global", "local"):
            cert = certify_representation(inst.mdp, inst.model, inst.policy, "w", mode)
            assert abs(cert.lhs) <= 1e-9 and cert.rhs <= 1e-9

    def test_collapsed_states_have_equal_values(self):
        inst = lipschitz_instance(6, n_states=8, n_latent=3, perturbation=0.0)
        real = solve_policy_values(inst.mdp, Policy(inst.policy.probs[inst.model.embed]))
        emb = inst.model.embed
        for s1 in range(8):
            for s2 in range(8):
                if emb[s1] == emb[s2]:
                    assert np.max(np.abs(real.q[s1] - real.q[s2])) <= 1e-12

    def test_zero_mass_states_are_reported(self):
        inst = lipschitz_instance(7, perturbation=0.05)
        P = inst.mdp.transition.copy()
        P[:, :, 5] = 0.0
        P /= P.sum(-1, keepdims=True)
        mdp = FiniteMdp(P, inst.mdp.reward, 0.9)
        cert = certify_representation(mdp, inst.model, inst.policy, "w", "local")
        assert cert.satisfied
        assert any("excluded" in n and "5" in n for n in cert.notes)

    @pytest.mark.parametrize("kind", ["w", "tv"])
    def test_random_instances(self, kind):
        for seed in range(40):
            inst = lipschitz_instance(seed, perturbation=0.1)
            for mode in ("global", "local"):
                assert certify_representation(inst.mdp, inst.model, inst.policy, kind, mode).satisfied


class TestSuboptimality:
    def test_exact_model(self):
        inst = lipschitz_instance(8, perturbation=0.0)
        cert = certify_suboptimality(inst.mdp, inst.model)
        assert cert.lhs <= 1e-9 and cert.rhs <= 1e-9

    def test_reward_only_error(self):
        inst = lipschitz_instance(9, perturbation=0.0)
        eps = 0.2
        bump = np.random.default_rng(1).choice([-eps, eps], size=inst.model.reward.shape)
        cert = certify_suboptimality(inst.mdp, with_reward(inst.model, inst.model.reward + bump))
        assert cert.rhs == pytest.approx(2 * eps / (1 - 0.9), abs=1e-12)
        assert cert.satisfied


class TestLipschitzValue:
    def test_single_point(self):
        model = LatentModel(MetricSpace.euclidean([[0.0, 0.0]]), [0], np.array([[1.0, 2.0]]),
                            transition=np.array([[0, 0]]))
        cert = certify_lipschitz_value(model, 0.9, Policy.uniform(1, 2))
        assert all(p.lhs == 0.0 for p in cert.parts) and cert.satisfied

    def test_two_absorbing_points(self):
        cert = certify_lipschitz_value(absorbing_latent(), 0.5)
        opt = cert.parts[0]
        assert opt.lhs == pytest.approx(2.0, abs=1e-12) and opt.rhs == pytest.approx(2.0, abs=1e-12)
        assert cert.satisfied

    def test_expanding_model_rejected(self):
        space = MetricSpace.euclidean([0.0, 0.1, 1.0])
        model = LatentModel(space, [0, 1, 2], np.zeros((3, 1)), transition=np.array([[0], [2], [2]]))
        with pytest.raises(AssumptionError):
            certify_lipschitz_value(model, 0.9)


class TestBisimChain:
    def test_exact_model(self):
        inst = lipschitz_instance(10, perturbation=0.0)
        cert = certify_bisim_chain(inst.mdp, inst.model)
        assert cert.satisfied
        emb = next(p for p in cert.parts if p.name == "bisim_embedding_gap")
        assert emb.lhs <= 1e-9 and emb.rhs <= 1e-9

    def test_two_absorbing_closed_form(self):
        delta, gamma = 0.25, 0.5
        mdp = absorbing_pair(gamma)
        model = absorbing_latent((1.0 + delta, 0.0))
        parts = {p.name: p for p in certify_bisim_chain(mdp, model).parts}
        # K_R = 1 + delta, K_P = 1, so C = 1 + delta
        a = parts["bisim_latent_lipschitz"]
        assert a.lhs == pytest.approx(0.0, abs=1e-9) and a.rhs == 0.0
        b = parts["bisim_embedding_gap"]
        assert b.lhs == pytest.approx(delta, abs=1e-9) and b.rhs == pytest.approx(delta, abs=1e-12)
        c = parts["bisim_state_bound"]
        assert c.lhs == pytest.approx(0.0, abs=1e-9)  # diagonal; the off-diagonal pair gives -delta
        assert c.rhs == pytest.approx(2 * delta, abs=1e-12)

    def test_joined_mdp_blocks(self):
        inst = lipschitz_instance(12)
        J = joined_mdp(inst.mdp, inst.model)
        n = inst.mdp.n_states
        assert np.array_equal(J.transition[:n, :, :n], inst.mdp.transition)
        assert np.all(J.transition[:n, :, n:] == 0) and np.all(J.transition[n:, :, :n] == 0)

    def test_random_instances(self):
        for seed in range(30):
            inst = lipschitz_instance(seed, perturbation=[0.02, 0.1, 0.2][seed % 3])
            assert certify_bisim_chain(inst.mdp, inst.model).satisfied


class TestConstruction:
    def test_exact_model_constant_policy(self):
        inst = lipschitz_instance(13, perturbation=0.0)
        pi = Policy.constant([0.3, 0.7], inst.mdp.n_states)
        out = construct_deep_policy(inst.mdp, inst.model, pi, 0.5)
        assert out.sup_gap <= 1e-12 and out.eps <= 1e-12
        assert np.allclose(out.g, 0.5 * 0 + np.array([0.3, 0.7]), atol=1e-12)
        assert out.as_policy().probs.shape == (inst.model.n_latent, 2)

    def test_exact_model_lipschitz_policy(self):
        for seed in range(10):
            inst = lipschitz_instance(seed, perturbation=0.0)
            rng = np.random.default_rng(seed)
            res = bisim_metric(inst.mdp, 1e-12)
            pi, K = lipschitz_bisim_policy(rng, res.metric.d, 2, 1.0)
            out = construct_deep_policy(inst.mdp, inst.model, pi, K, res)
            assert out.sup_gap <= 1e-9
            assert out.certificate.satisfied

    def test_rejects_non_lipschitz_policy(self):
        inst = lipschitz_instance(14, perturbation=0.0)
        pi = Policy(np.random.default_rng(0).dirichlet(np.ones(2), size=inst.mdp.n_states))
        with pytest.raises(PolicyNotLipschitzError) as err:
            construct_deep_policy(inst.mdp, inst.model, pi, 1e-6)
        assert len(err.value.pair) == 2

    def test_perturbed_gap_within_half_eps(self):
        for seed in range(30):
            inst = lipschitz_instance(seed, perturbation=0.1)
            rng = np.random.default_rng(seed + 1)
            res = bisim_metric(inst.mdp, 1e-12)
            pi, K = lipschitz_bisim_policy(rng, res.metric.d, 2, float(rng.uniform(0.1, 1.0)))
            out = construct_deep_policy(inst.mdp, inst.model, pi, K, res)
            assert K <= 1
            assert out.sup_gap <= out.eps / 2 + 1e-9
            assert out.lipschitz_measured <= out.lipschitz_bound + 1e-9

    def test_non_stochastic_rows_flagged(self):
        for seed in range(30):
            inst = lipschitz_instance(seed, n_actions=3, perturbation=0.2)
            rng = np.random.default_rng(seed)
            res = bisim_metric(inst.mdp, 1e-12)
            pi, K = lipschitz_bisim_policy(rng, res.metric.d, 3, 2.0)
            out = construct_deep_policy(inst.mdp, inst.model, pi, K, res)
            bad = [z for z in range(inst.model.n_latent)
                   if np.any(out.g[z] < -1e-12) or abs(out.g[z].sum() - 1) > 1e-9]
            assert sorted(out.nonstochastic_rows) == bad
            if bad:
                with pytest.raises(InvalidInputError):
                    out.as_policy()
            else:
                assert out.as_policy().probs.shape == (inst.model.n_latent, 3)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), perturbation=st.sampled_from([0.0, 0.01, 0.05, 0.2]),
       kind=st.sampled_from(["wasserstein", "tv"]))
def test_every_certificate_holds(seed, perturbation, kind):
    inst = lipschitz_instance(seed, perturbation=perturbation)
    for cert in certify_instance(inst.mdp, inst.model, inst.policy, kind):
        assert cert.satisfied, str(cert)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), perturbation=st.sampled_from([0.0, 0.05, 0.2]))
def test_energy_certificates_hold_on_the_line(seed, perturbation):
    inst = lipschitz_instance(seed, perturbation=perturbation, latent_dim=1)
    for cert in certify_instance(inst.mdp, inst.model, inst.policy, "energy"):
        assert cert.satisfied, str(cert)
