import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose
from scipy import stats

from corlmc.tails import (
    GROUPS, TailBoundaryError, gof_deltas, husler_reiss_stdf, lambda_pareto_within, lambda_within,
    marshall_olkin_copula, nugget_pareto, rho12, rho_N_calibration, rho_n_table,
    stable_tail_exponential, stable_tail_numeric, stable_tail_pareto, tail_weighted_rho,
)

ASYM = (1.4, 0.5, 0.8, 0.4)


def hr_reference(x1, x2, lam):
    return (x1 * stats.norm.cdf(lam / 2 + math.log(x1 / x2) / lam)
            + x2 * stats.norm.cdf(lam / 2 + math.log(x2 / x1) / lam))


class TestLambdaWithin:
    def test_perfect_correlation(self):
        assert lambda_within(1.0, 0.7) == 1.0

    def test_no_factor(self):
        assert lambda_within(0.3, 0.0) == 0.0

    def test_value(self):
        assert_allclose(lambda_within(0.5, 1.0), 0.61708, atol=1e-5)
        assert_allclose(lambda_within(0.5, 1.0), 2 * stats.norm.cdf(-0.5), rtol=1e-14)

    @given(st.floats(-1, 1), st.floats(0, 10))
    def test_range(self, rho, a):
        assert 0.0 <= lambda_within(rho, a) <= 1.0


class TestStableTailExponential:
    def test_no_dependence_branch(self):
        # delta1 = 0.5, delta2 = 3
        assert stable_tail_exponential(1, 1, (0.5, 1.0, 0.9, 0.3), 0.4) == 2

    def test_boundary_rejected(self):
        with pytest.raises(TailBoundaryError):
            stable_tail_exponential(1, 1, (0.8, 0.8, 0.9, 0.3), 0.4)

    @pytest.mark.parametrize("x1, x2", [(1, 1), (0.5, 2), (3, 0.2)])
    def test_common_only_is_husler_reiss(self, x1, x2):
        L = (1.2, 0.0, 0.9, 0.0)
        lam = math.sqrt(1.2 ** 2 - 2 * 0.4 * 1.2 * 0.9 + 0.9 ** 2) / (1.2 * 0.9)
        assert_allclose(stable_tail_exponential(x1, x2, L, 0.4), hr_reference(x1, x2, lam), atol=1e-12)

    @pytest.mark.parametrize("lam", [0.3, 1.0, 4.0])
    def test_husler_reiss_function(self, lam):
        for x1, x2 in [(1, 1), (0.2, 3), (5, 0.5)]:
            assert_allclose(husler_reiss_stdf(x1, x2, lam), hr_reference(x1, x2, lam), rtol=1e-13)

    def test_small_specific_loadings_approach_husler_reiss(self):
        base = stable_tail_exponential(1.3, 0.7, (1.2, 0.0, 0.9, 0.0), 0.4)
        near = stable_tail_exponential(1.3, 0.7, (1.2, 1e-5, 0.9, 1e-5), 0.4)
        assert abs(near - base) < 1e-9

    def test_numeric_limit(self):
        exact = stable_tail_exponential(1, 1, ASYM, 0.3)
        assert abs(stable_tail_numeric(1, 1, ASYM, 0.3, 1e6) - exact) <= 0.01 * exact

    def test_numeric_thresholds_agree(self):
        a = stable_tail_numeric(1, 2, ASYM, 0.3, 1e6)
        b = stable_tail_numeric(1, 2, ASYM, 0.3, 1e6, thresholds="exact")
        assert_allclose(a, b, rtol=1e-4)

    @pytest.mark.parametrize("loadings, symmetric", [
        ((1.0, 0.5, 0.8, 0.4), True),
        ((1.4, 0.5, 0.8, 0.4), False),
        ((0.9, 0.3, 0.9, 0.3), True),
    ])
    def test_permutation_symmetry(self, loadings, symmetric):
        a = stable_tail_exponential(1.0, 2.0, loadings, 0.3)
        b = stable_tail_exponential(2.0, 1.0, loadings, 0.3)
        assert (abs(a - b) < 1e-12) == symmetric

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.05, 10), st.floats(0.05, 10),
           st.sampled_from([ASYM, (1.0, 0.2, 2.0, 0.5), (1.2, 0.0, 0.9, 0.3), (0.7, 0.0, 0.6, 0.0)]),
           st.floats(-0.9, 0.9))
    def test_bounds_and_homogeneity(self, x1, x2, loadings, rho):
        ell = stable_tail_exponential(x1, x2, loadings, rho)
        assert max(x1, x2) - 1e-12 <= ell <= x1 + x2 + 1e-12
        for t in (0.5, 2.0, 10.0):
            assert_allclose(stable_tail_exponential(t * x1, t * x2, loadings, rho), t * ell, rtol=1e-10)

    def test_rho12(self):
        assert_allclose(rho12(1.0, 1.0, 1.0), 0.0, atol=1e-15)
        assert_allclose(rho12(1.0, 2.0, 0.0), math.sqrt(5) / 2)


class TestPareto:
    def test_equal_loadings(self):
        assert_allclose(stable_tail_pareto(1, 1, (1.0, 1.0, 2.0, 2.0), 3), 1.5)

    def test_no_specific_factor(self):
        assert stable_tail_pareto(1.5, 0.5, (1.0, 0.0, 2.0, 0.0), 3) == 1.5

    @settings(max_examples=50)
    @given(st.floats(0.1, 3), st.floats(0, 3), st.floats(0.1, 3), st.floats(0, 3), st.floats(1.1, 8))
    def test_marshall_olkin_identity(self, a10, a1, a20, a2, k):
        L = (a10, a1, a20, a2)
        t1 = lambda_pareto_within(a10, a1, k)
        t2 = lambda_pareto_within(a20, a2, k)
        assert abs(2 - stable_tail_pareto(1, 1, L, k) - min(t1, t2)) <= 1e-12
        x1, x2 = 0.7, 1.9
        ell = stable_tail_pareto(x1, x2, L, k)
        assert max(x1, x2) - 1e-12 <= ell <= x1 + x2
        # extreme-value copula with this tail function
        u1, u2 = math.exp(-x1), math.exp(-x2)
        assert_allclose(marshall_olkin_copula(u1, u2, t1, t2), math.exp(-ell), rtol=1e-12)

    def test_lambda(self):
        assert lambda_pareto_within(1.0, 0.0, 3) == 1.0
        for k in (1.5, 3, 10):
            assert lambda_pareto_within(2.0, 2.0, k) == 0.5

    def test_lambda_invalid(self):
        with pytest.raises(ValueError):
            lambda_pareto_within(0.0, 1.0, 3)
        with pytest.raises(ValueError):
            lambda_pareto_within(1.0, 1.0, 1.0)

    def test_nugget(self):
        assert nugget_pareto(1.0, 0.0, 3) == 0.0
        assert_allclose(nugget_pareto(1.0, 1.0, 3), 0.3)
        assert nugget_pareto(1.0, 1.0, 10) > nugget_pareto(1.0, 1.0, 100) > 0
        with pytest.raises(ValueError):
            nugget_pareto(1.0, 1.0, 2.0)


class TestTailWeighted:
    def test_comonotone(self):
        u = (np.arange(1000) + 0.5) / 1000
        for tail in "LU":
            assert_allclose(tail_weighted_rho(u, u, tail).value, 1.0, rtol=1e-12)

    def test_small_sample(self):
        with pytest.raises(ValueError):
            tail_weighted_rho(np.full(10, 0.3), np.full(10, 0.3))

    def test_unstable_flag(self):
        u = np.random.default_rng(0).uniform(size=(60, 2))
        assert tail_weighted_rho(u[:, 0], 1 - u[:, 0], "L").unstable

    @pytest.mark.slow
    def test_independent(self):
        u = np.random.default_rng(1).uniform(size=(1_000_000, 2))
        for tail in "LU":
            assert abs(tail_weighted_rho(u[:, 0], u[:, 1], tail).value) <= 0.01

    @pytest.mark.slow
    def test_normal_copula_reflection(self):
        x = np.random.default_rng(2).multivariate_normal([0, 0], [[1, 0.6], [0.6, 1]], size=1_000_000)
        u = stats.norm.cdf(x)
        lo = tail_weighted_rho(u[:, 0], u[:, 1], "L").value
        hi = tail_weighted_rho(u[:, 0], u[:, 1], "U").value
        assert abs(lo - hi) <= 0.02


@pytest.mark.slow
class TestCalibration:
    def test_independence(self):
        assert abs(rho_N_calibration(0.0)) <= 0.01

    def test_near_comonotone(self):
        assert abs(rho_N_calibration(0.99) - 1.0) <= 0.05

    def test_monotone(self):
        vals = rho_N_calibration(np.arange(0, 0.95, 0.1))
        assert np.all(np.diff(vals) > 0)

    def test_table_deterministic(self):
        grid, vals = rho_n_table()
        assert np.all(np.diff(grid) > 0)
        assert rho_n_table() is rho_n_table()


@pytest.fixture(scope="module")
def scores():
    rng = np.random.default_rng(4)
    n = 3
    cov = np.full((2 * n, 2 * n), 0.4) + 0.6 * np.eye(2 * n)
    a = stats.norm.cdf(rng.multivariate_normal(np.zeros(2 * n), cov, size=3000))
    cov2 = np.full((2 * n, 2 * n), 0.6) + 0.4 * np.eye(2 * n)
    b = stats.norm.cdf(rng.multivariate_normal(np.zeros(2 * n), cov2, size=3000))
    return n, a, b


class TestGof:
    def test_identical_inputs(self, scores):
        n, a, _ = scores
        res = gof_deltas(a, a, n)
        for g in GROUPS:
            assert all(v == 0.0 for v in vars(res.deltas[g]).values())

    def test_antisymmetry(self, scores):
        n, a, b = scores
        ab = gof_deltas(a, b, n).deltas
        ba = gof_deltas(b, a, n).deltas
        for g in GROUPS:
            assert_allclose([ab[g].d_rho, ab[g].d_L, ab[g].d_U],
                            [-ba[g].d_rho, -ba[g].d_L, -ba[g].d_U], rtol=1e-14)
            assert_allclose([ab[g].abs_rho, ab[g].abs_L, ab[g].abs_U],
                            [ba[g].abs_rho, ba[g].abs_L, ba[g].abs_U], rtol=1e-14)

    def test_abs_dominates_signed(self, scores):
        n, a, b = scores
        for d in gof_deltas(a, b, n).deltas.values():
            assert d.abs_rho >= abs(d.d_rho) and d.abs_L >= abs(d.d_L) and d.abs_U >= abs(d.d_U)

    def test_weaker_data_gives_negative_delta(self, scores):
        n, a, b = scores
        assert all(d.d_rho < 0 for d in gof_deltas(a, b, n).deltas.values())

    def test_group_average_by_hand(self, scores):
        n, a, b = scores
        sa = stats.spearmanr(a).statistic
        sb = stats.spearmanr(b).statistic
        diff = (sa - sb)[:n, n:]
        assert_allclose(gof_deltas(a, b, n).deltas["cross"].d_rho, diff.mean(), rtol=1e-10)
        within = (sa - sb)[:n, :n]
        np.fill_diagonal(within, 0.0)
        assert_allclose(gof_deltas(a, b, n).deltas["variable 1"].abs_rho, np.abs(within).sum() / n ** 2,
                        rtol=1e-10)

    def test_raw_data_equals_scores(self, scores):
        n, a, b = scores
        x = stats.norm.ppf(a) * 2 + 5
        assert gof_deltas(x, b, n).deltas == gof_deltas(a, b, n).deltas

    def test_mismatched_designs(self, scores):
        n, a, b = scores
        with pytest.raises(ValueError):
            gof_deltas(a, b[:, :4], n)
