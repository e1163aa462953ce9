import math

import numpy as np
import pytest

import pacbandits as pb
from conftest import random_context_matrix


def nonsep_instance_from_gaps(gap_vec: np.ndarray) -> pb.Instance:
    """Single-context wrapper so the grid oracle can score a raw gap vector."""
    mu = (gap_vec.max() - np.asarray(gap_vec, dtype=float))[None, :]
    return pb.Instance(kind=pb.NON_SEPARATOR,
                       a=np.ones((1, gap_vec.shape[0])), mu=mu)


class TestDBernoulli:
    def test_frozen_values(self):
        assert pb.d_bernoulli(0.1) == pytest.approx(0.8 * math.log(9.0), abs=1e-15)
        assert pb.d_bernoulli(0.01) == pytest.approx(0.98 * math.log(99.0), abs=1e-15)

    def test_symmetry_and_zero(self):
        assert pb.d_bernoulli(0.5) == 0.0
        assert pb.d_bernoulli(0.3) == pytest.approx(pb.d_bernoulli(0.7), abs=1e-15)

    def test_domain(self):
        for bad in (0.0, 1.0, -0.1, 2.0):
            with pytest.raises(ValueError):
                pb.d_bernoulli(bad)


class TestNonsepObjective:
    def test_hand_value_two_arms(self):
        assert pb.nonsep_objective(np.array([0.5, 0.5]),
                                   np.array([0.0, 1.0])) == pytest.approx(1 / 8)

    def test_zero_weight_gives_zero(self):
        assert pb.nonsep_objective(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0
        assert pb.nonsep_objective(np.array([0.0, 1.0]), np.array([0.0, 1.0])) == 0.0

    def test_min_over_challengers(self):
        w = np.array([0.4, 0.3, 0.3])
        g = np.array([0.0, 1.0, 2.0])
        per_arm = [0.5 * g[i] ** 2 * w[0] * w[i] / (w[0] + w[i]) for i in (1, 2)]
        assert pb.nonsep_objective(w, g) == pytest.approx(min(per_arm))


class TestNonsepRoot:
    def test_two_arm_root_closed_form(self):
        for d in (0.25, 1.0, 3.0):
            g = np.array([0.0, d])
            root = pb.solve_nonsep_root(g)
            assert root == pytest.approx(2.0 / d ** 2, rel=1e-12)

    def test_three_arm_unit_gaps_root(self):
        root = pb.solve_nonsep_root(np.array([0.0, 1.0, 1.0]))
        assert root == pytest.approx(1.0 + math.sqrt(2.0), rel=1e-12)

    def test_residual_and_bracket(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            n = int(rng.integers(2, 5))
            g = np.zeros(n)
            g[1:] = rng.uniform(0.1, 3.0, n - 1)
            root = pb.solve_nonsep_root(g)
            lo, hi = pb.nonsep_root_bracket(g)
            dmin2 = g[g > 0].min() ** 2
            assert lo == pytest.approx(2.0 / dmin2, rel=1e-12)
            assert hi == pytest.approx((1.0 + math.sqrt(n - 1)) / dmin2, rel=1e-12)
            assert lo - 1e-12 <= root <= hi + 1e-12
            assert abs(pb.nonsep_root_residual(g, root)) <= 1e-12

    def test_gap_validation(self):
        with pytest.raises(ValueError):
            pb.solve_nonsep_root(np.array([0.0, 0.0, 1.0]))  # tied best
        with pytest.raises(ValueError):
            pb.solve_nonsep_root(np.array([0.5, 1.0]))  # no zero gap


class TestNonsepWeights:
    def test_two_arms_always_half_half(self):
        for d in (0.2, 1.0, 5.0):
            np.testing.assert_allclose(
                pb.solve_nonsep_weights(np.array([0.0, d])), [0.5, 0.5],
                atol=1e-12)

    def test_three_arm_frozen(self):
        w = pb.solve_nonsep_weights(np.array([0.0, 1.0, 1.0]))
        np.testing.assert_allclose(
            w, [0.41421356237309515, 0.2928932188134525, 0.2928932188134525],
            atol=1e-10)

    def test_scale_invariance(self):
        g = np.array([0.0, 0.7, 1.9, 2.4])
        np.testing.assert_allclose(pb.solve_nonsep_weights(g),
                                   pb.solve_nonsep_weights(3.7 * g), atol=1e-10)

    def test_permutation_equivariance(self):
        g = np.array([0.0, 0.7, 1.9])
        perm = np.array([2, 0, 1])
        w = pb.solve_nonsep_weights(g)
        w_perm = pb.solve_nonsep_weights(g[perm])
        np.testing.assert_allclose(w_perm, w[perm], atol=1e-12)

    def test_equalization_at_one_half(self):
        # before normalization every challenger's transport term equals 1/2
        g = np.array([0.0, 0.5, 1.1, 2.0])
        root = pb.solve_nonsep_root(g)
        u = root / (root * g[1:] ** 2 - 1.0)
        terms = 0.5 * g[1:] ** 2 * (root * u) / (root + u)
        np.testing.assert_allclose(terms, 0.5, atol=1e-10)

    def test_normalized_objective_terms_equal(self):
        g = np.array([0.0, 0.5, 1.1, 2.0])
        w = pb.solve_nonsep_weights(g)
        obj = pb.nonsep_objective(w, g)
        terms = [0.5 * g[i] ** 2 * w[0] * w[i] / (w[0] + w[i])
                 for i in range(1, 4)]
        np.testing.assert_allclose(terms, obj, rtol=1e-9)

    def test_characteristic_time_two_arm_unit_gap(self):
        inst = nonsep_instance_from_gaps(np.array([0.0, 1.0]))
        ct = pb.characteristic_time(inst)
        assert ct.t_star == pytest.approx(8.0, rel=1e-12)
        np.testing.assert_allclose(ct.weights, [0.5, 0.5], atol=1e-12)


class TestGridOracleNonsep:
    def test_two_arm_exact_on_grid(self):
        inst = nonsep_instance_from_gaps(np.array([0.0, 1.0]))
        ref = pb.grid_oracle(inst, 1 / 200)
        assert ref.objective == pytest.approx(1 / 8, abs=1e-15)

    def test_refinement_monotone(self):
        inst = nonsep_instance_from_gaps(np.array([0.0, 0.8, 1.3]))
        coarse = pb.grid_oracle(inst, 1 / 50).objective
        fine = pb.grid_oracle(inst, 1 / 200).objective
        true_obj = pb.nonsep_objective(
            pb.solve_nonsep_weights(np.array([0.0, 0.8, 1.3])),
            np.array([0.0, 0.8, 1.3]))
        assert coarse <= fine + 1e-15
        assert fine <= true_obj + 1e-12

    def test_resolution_validation(self):
        inst = nonsep_instance_from_gaps(np.array([0.0, 1.0]))
        with pytest.raises(ValueError):
            pb.grid_oracle(inst, 0.7)
        with pytest.raises(ValueError):
            pb.grid_oracle(inst, 0.0)


class TestSepObjective:
    def test_anchor_uniform_value(self, anchor_instance):
        val = pb.sep_objective(np.full(3, 1 / 3), anchor_instance)
        assert val == pytest.approx(1 / 300, rel=1e-12)

    def test_positively_homogeneous(self, anchor_instance):
        w = np.array([0.2, 0.5, 0.3])
        assert pb.sep_objective(2.0 * w, anchor_instance) == pytest.approx(
            2.0 * pb.sep_objective(w, anchor_instance), rel=1e-12)

    def test_rejects_nonsep_instance(self, easy_nonsep):
        with pytest.raises(ValueError):
            pb.sep_objective(np.array([0.5, 0.5]), easy_nonsep)


class TestSepSolver:
    def test_anchor_vertex_optimum(self, anchor_instance):
        sol = pb.solve_sep_weights(anchor_instance)
        assert sol.converged
        np.testing.assert_allclose(sol.wz, [0.10, 0.45, 0.45], atol=1e-6)
        assert sol.objective == pytest.approx(0.0045, rel=1e-6)
        # certified mixture maps onto the weights through A
        np.testing.assert_allclose(anchor_instance.a @ sol.pi, sol.wz, atol=1e-8)
        assert sol.pi.min() >= -1e-12
        assert sol.pi.sum() == pytest.approx(1.0, abs=1e-9)

    def test_anchor_characteristic_time(self, anchor_instance):
        ct = pb.characteristic_time(anchor_instance)
        assert ct.t_star == pytest.approx(2000.0 / 9.0, rel=1e-6)
        assert ct.t_star * pb.d_bernoulli(0.01) == pytest.approx(1000.71, rel=1e-3)

    def test_anchor_grid_agrees_exactly(self, anchor_instance):
        # the optimum sits on a vertex, which the mixture grid contains
        ref = pb.grid_oracle(anchor_instance, 1 / 200)
        assert ref.objective == pytest.approx(0.0045, rel=1e-12)

    def test_random_instances_match_grid(self):
        rng = np.random.default_rng(20)
        cons = pb.GenConstraints(n=3, k=3)
        for stream in range(3):
            inst = pb.gen_random_instance(cons, pb.SEPARATOR,
                                          pb.RngStream(21, stream))
            sol = pb.solve_sep_weights(inst)
            ref = pb.grid_oracle(inst, 1 / 200)
            assert sol.objective == pytest.approx(ref.objective, abs=1e-3)

    def test_solution_beats_every_grid_node(self, anchor_instance):
        # maximizer property: no coarse grid point does better
        sol = pb.solve_sep_weights(anchor_instance)
        ref = pb.grid_oracle(anchor_instance, 1 / 40)
        assert sol.objective >= ref.objective - 1e-9
