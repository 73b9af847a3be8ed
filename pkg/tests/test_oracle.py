import numpy as np
import pytest

from spheremap import (
    FactorGraph,
    FactorSpec,
    ModelTooLargeError,
    OracleLimit,
    SimplexQP,
    brute_force_map,
    evaluate_logpot,
    pgd_qp_oracle,
)
from helpers import random_factor_graph, random_labeling, random_psd_operator, support_enumeration_qp


class TestBruteForceMap:
    def test_single_binary_variable(self):
        g = FactorGraph((2,), (np.array([0.0, 1.0]),))
        lab, lp = brute_force_map(g)
        assert lab == [1]
        assert lp == 1.0

    def test_pairwise_preference(self):
        table = np.zeros(4)
        table[1] = 5.0  # configuration (0, 1)
        g = FactorGraph((2, 2), (np.zeros(2), np.zeros(2)), (FactorSpec((0, 1), table),))
        lab, lp = brute_force_map(g)
        assert lab == [0, 1]
        assert lp == 5.0

    def test_too_large_model(self):
        g = FactorGraph((2,) * 30, tuple(np.zeros(2) for _ in range(30)))
        with pytest.raises(ModelTooLargeError):
            brute_force_map(g)

    def test_limit_configurable(self):
        g = FactorGraph((2, 2), (np.zeros(2), np.zeros(2)))
        with pytest.raises(ModelTooLargeError):
            brute_force_map(g, OracleLimit(3))
        lab, _ = brute_force_map(g, OracleLimit(4))
        assert lab == [0, 0]

    def test_ties_break_lexicographically(self):
        g = FactorGraph((2, 2), (np.zeros(2), np.zeros(2)))
        lab, lp = brute_force_map(g)
        assert lab == [0, 0]
        assert lp == 0.0

    def test_dominates_random_labelings(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            g = random_factor_graph(rng, max_vars=5)
            _, best = brute_force_map(g)
            for _ in range(100):
                lab = random_labeling(rng, g)
                assert best >= evaluate_logpot(g, lab) - 1e-12

    def test_optimum_matches_production_evaluator(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            g = random_factor_graph(rng, max_vars=4)
            lab, lp = brute_force_map(g)
            assert abs(lp - evaluate_logpot(g, lab)) < 1e-12

    def test_invalid_limit(self):
        with pytest.raises(ValueError):
            OracleLimit(0)


class TestPgdOracle:
    def test_identity_barycenter(self):
        prob = SimplexQP(3, lambda v: v.copy(), np.zeros(3))
        out = pgd_qp_oracle(prob, 10**4)
        np.testing.assert_allclose(out, np.full(3, 1 / 3), atol=1e-10)

    def test_linear_reaches_vertex(self):
        prob = SimplexQP(3, lambda v: np.zeros_like(v), np.array([1.0, -2.0, 0.5]))
        out = pgd_qp_oracle(prob, 10**4)
        np.testing.assert_allclose(out, [0.0, 1.0, 0.0], atol=1e-12)

    def test_matches_support_enumeration(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            n = int(rng.integers(2, 5))
            q, apply_q = random_psd_operator(rng, n)
            c = rng.uniform(-2, 2, n)
            out = pgd_qp_oracle(SimplexQP(n, apply_q, c), 10**6)
            _, ref_f = support_enumeration_qp(q, c)
            f = 0.5 * out @ q @ out + c @ out
            assert f <= ref_f + 1e-9

    def test_on_simplex(self):
        rng = np.random.default_rng(3)
        q, apply_q = random_psd_operator(rng, 5)
        out = pgd_qp_oracle(SimplexQP(5, apply_q, rng.uniform(-1, 1, 5)), 1000)
        assert abs(out.sum() - 1.0) <= 1e-9
        assert out.min() >= -1e-12

    def test_rejects_bad_horizon(self):
        with pytest.raises(ValueError):
            pgd_qp_oracle(SimplexQP(2, lambda v: v, np.zeros(2)), 0)
