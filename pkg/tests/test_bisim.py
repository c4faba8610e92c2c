import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepmdp_lab.bisim import (
    PseudometricTable,
    bisim_metric,
    bisim_operator_step,
    bisim_partition,
    value_bisim_bound_check,
)
from deepmdp_lab.envs import planted_bisimulation, random_mdp, ringworld
from deepmdp_lab.mdp_core import FiniteMdp, InvalidInputError
from oracles import naive_bisimulation, pair_w1_by_vertices, same_partition


def absorbing_pair(r0=1.0, r1=0.0, gamma=0.9):
    P = np.zeros((2, 1, 2))
    P[0, 0, 0] = P[1, 0, 1] = 1.0
    return FiniteMdp(P, np.array([[r0], [r1]]), gamma)


def copies(n, seed=0):
    rng = np.random.default_rng(seed)
    row = rng.dirichlet(np.ones(n), size=2)
    return FiniteMdp(np.tile(row, (n, 1, 1)), np.tile(rng.uniform(size=2), (n, 1)), 0.9)


class TestOperator:
    def test_zero_input_gives_reward_term(self):
        mdp = random_mdp(np.random.default_rng(0), 5, 3, 0.8)
        out = bisim_operator_step(mdp, np.zeros((5, 5))).d
        dr = np.abs(mdp.reward[:, None, :] - mdp.reward[None, :, :]).max(-1)
        assert np.allclose(out, 0.2 * dr, atol=1e-15)

    def test_identical_rows(self):
        mdp = copies(4)
        d = np.random.default_rng(1).uniform(size=(4, 4))
        d = d + d.T
        np.fill_diagonal(d, 0)
        assert np.all(bisim_operator_step(mdp, d).d == 0)

    def test_absorbing_pair_one_step(self):
        out = bisim_operator_step(absorbing_pair(), np.zeros((2, 2))).d
        assert out[0, 1] == pytest.approx(0.1, abs=1e-15)

    def test_matches_vertex_enumeration(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            mdp = random_mdp(rng, 4, 2, 0.7)
            d = bisim_metric(mdp).metric.d * rng.uniform(0.5, 1.5)
            out = bisim_operator_step(mdp, d).d
            for i in range(4):
                for j in range(4):
                    ref = max((1 - 0.7) * abs(mdp.reward[i, a] - mdp.reward[j, a])
                              + 0.7 * pair_w1_by_vertices(mdp.transition[i, a], mdp.transition[j, a], d)
                              for a in range(2))
                    assert out[i, j] == pytest.approx(ref, abs=1e-9)


class TestMetric:
    def test_identical_states(self):
        assert np.all(bisim_metric(copies(5)).metric.d == 0)

    @pytest.mark.parametrize("gamma", [0.1, 0.5, 0.9])
    def test_absorbing_pair_fixed_point(self, gamma):
        res = bisim_metric(absorbing_pair(gamma=gamma), tol=1e-12)
        assert res.metric.d[0, 1] == pytest.approx(1.0, abs=1e-10)

    def test_kernel_matches_partition_oracle(self):
        for seed in range(20):
            mdp, planted = planted_bisimulation(seed, 3, 6, 2)
            res = bisim_metric(mdp)
            oracle = naive_bisimulation(mdp.transition, mdp.reward)
            assert same_partition(res.metric.kernel(10 * 1e-9).block_of, oracle)
            assert same_partition(bisim_partition(mdp).block_of, oracle)
            # planted classes are always inside the coarsest bisimulation
            assert all(len(set(oracle[planted == b])) == 1 for b in set(planted))

    def test_result_is_a_pseudometric(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            res = bisim_metric(random_mdp(rng, 6, 2, 0.9))
            assert res.metric.triangle_violation() <= 1e-9
            assert res.residual <= 1e-9

    def test_iteration_cap(self):
        with pytest.raises(RuntimeError):
            bisim_metric(random_mdp(np.random.default_rng(4), 4, 2, 0.99), tol=1e-12, max_iterations=3)

    def test_invalid_table(self):
        with pytest.raises(InvalidInputError):
            PseudometricTable(np.array([[0.0, 1.0], [2.0, 0.0]]))


class TestPartition:
    def test_identical_states(self):
        assert bisim_partition(copies(5)).n_blocks == 1

    def test_distinct_rewards(self):
        mdp = random_mdp(np.random.default_rng(5), 6, 2, 0.9)
        assert bisim_partition(mdp).n_blocks == 6

    def test_four_track_ring(self):
        world = ringworld(6, 4, 0.9, warp=0.5)
        part = bisim_partition(world.mdp)
        assert part.n_blocks == 6
        for s in range(world.n_states):
            t, p = world.track_phase(s)
            assert part.block_of[s] == part.block_of[world.state_index(0, p)]


class TestValueBound:
    def test_identical_states(self):
        mdp = copies(3)
        cert = value_bisim_bound_check(mdp, bisim_metric(mdp))
        assert cert.lhs == pytest.approx(0, abs=1e-12) and cert.rhs == pytest.approx(0, abs=1e-12)

    def test_absorbing_pair_closed_form(self):
        mdp = absorbing_pair(gamma=0.5)
        res = bisim_metric(mdp, tol=1e-12)
        cert = value_bisim_bound_check(mdp, res)
        assert cert.lhs == pytest.approx(2.0, abs=1e-9)
        assert cert.rhs == pytest.approx(2.0, abs=1e-9)
        assert cert.satisfied

    def test_random_instances(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            mdp = random_mdp(rng, 5, 2, float(rng.uniform(0.3, 0.95)))
            assert value_bisim_bound_check(mdp, bisim_metric(mdp)).satisfied


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_contraction_every_iterate(seed):
    rng = np.random.default_rng(seed)
    gamma = float(rng.uniform(0.2, 0.95))
    mdp = random_mdp(rng, int(rng.integers(2, 7)), int(rng.integers(1, 4)), gamma)
    ch = bisim_metric(mdp, tol=1e-10).changes
    assert np.all(ch[1:] <= gamma * ch[:-1] + 1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_operator_monotone(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, 5, 2, 0.9)
    base = bisim_metric(mdp).metric.d
    lo = base * rng.uniform(0.2, 1.0)
    hi = lo + base * rng.uniform(0.0, 1.0)
    assert np.all(bisim_operator_step(mdp, lo).d <= bisim_operator_step(mdp, hi).d + 1e-12)
