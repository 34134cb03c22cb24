import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose
from scipy import integrate, stats

from corlmc.margins import (
    EPS_SING, FactorLoadings, SingularLoadingsError, VariableLoadings, factor_diff_pdf,
    marginal_cdf, marginal_cdf_terms, marginal_logpdf, marginal_pdf, marginal_quantile,
    marginal_sf, xi,
)

# loadings in (a0U, aU, a0L, aL) order
EXAMPLE = VariableLoadings(1.1, 0.9, 0.7, 1.1)
loading = st.floats(0.0, 2.5)
loadings4 = st.tuples(loading, loading, loading, loading)


def sample_margin(load, size, rng):
    a0U, aU, a0L, aL = load
    e = rng.standard_exponential(size=(4, size))
    return rng.standard_normal(size) + a0U * e[0] + aU * e[1] - a0L * e[2] - aL * e[3]


def mp_xi(z, aL, aU, a0L, a0U):
    mpmath.mp.dps = 40
    z, aL, aU, a0L, a0U = (mpmath.mpf(v) for v in (z, aL, aU, a0L, a0U))
    phi = mpmath.ncdf(z - 1 / aU)
    return aU ** 3 * mpmath.exp(0.5 / aU ** 2 - z / aU) * phi / ((a0L + aU) * (aL + aU) * (a0U - aU))


class TestXi:
    def test_zero_upper_loading(self):
        assert xi(0.3, 1.0, 0.0, 0.5, 0.7) == 0.0

    def test_singular_gap(self):
        with pytest.raises(SingularLoadingsError):
            xi(0.0, 1.0, 0.8, 0.5, 0.8)

    @pytest.mark.parametrize("args", [
        (1.0, 1.1, 0.9, 0.7, 1.1),
        (-2.0, 0.3, 1.4, 0.2, 0.5),
        (4.5, 0.0, 0.6, 1.0, 2.0),
    ])
    def test_matches_high_precision(self, args):
        assert_allclose(xi(*args), float(mp_xi(*args)), rtol=1e-12)


class TestCdf:
    def test_gaussian_reduction(self):
        z = np.linspace(-5, 5, 21)
        assert marginal_cdf(0.0, (0, 0, 0, 0)) == 0.5
        assert_allclose(marginal_cdf(z, (0, 0, 0, 0)), stats.norm.cdf(z), rtol=1e-14)

    def test_limits(self):
        assert marginal_cdf(np.inf, EXAMPLE) == 1.0
        assert marginal_cdf(-np.inf, EXAMPLE) == 0.0

    def test_literal_formula_agrees(self):
        z = np.linspace(-4, 4, 17)
        assert_allclose(marginal_cdf(z, EXAMPLE), marginal_cdf_terms(z, EXAMPLE), atol=1e-13)

    def test_monte_carlo(self, rng):
        x = np.sort(sample_margin(EXAMPLE, 2_000_000, rng))
        z = np.array([-2.0, 0.0, 2.0])
        ecdf = np.searchsorted(x, z, side="right") / x.size
        assert np.max(np.abs(ecdf - marginal_cdf(z, EXAMPLE))) <= 3e-3

    @settings(max_examples=60, deadline=None)
    @given(loadings4)
    def test_monotone_on_grid(self, load):
        F = marginal_cdf(np.linspace(-15, 25, 1000), load)
        assert np.all(np.diff(F) >= 0)

    @settings(max_examples=60, deadline=None)
    @given(loadings4, st.floats(-8, 8))
    def test_reflection(self, load, z):
        a0U, aU, a0L, aL = load
        flipped = (a0L, aL, a0U, aU)
        assert_allclose(marginal_cdf(z, load), marginal_sf(-z, flipped), atol=1e-14)

    def test_near_singular_is_continuous(self):
        near = marginal_cdf(0.4, (0.9 + 0.5 * EPS_SING, 0.9, 0.7, 0.3))
        far = marginal_cdf(0.4, (0.9 + 1e-3, 0.9, 0.7, 0.3))
        assert abs(near - far) < 1e-3

    def test_sf_far_tail(self):
        # the upper tail is dominated by the largest upper scale
        load = (1.2, 0.4, 0.3, 0.3)
        z = 60.0
        ratio = marginal_sf(z + 1.2, load) / marginal_sf(z, load)
        assert_allclose(ratio, np.exp(-1.0), rtol=1e-6)


class TestPdf:
    def test_gaussian(self):
        z = np.linspace(-6, 6, 13)
        assert_allclose(marginal_pdf(z, (0, 0, 0, 0)), stats.norm.pdf(z), rtol=1e-14)

    def test_integrates_to_one(self):
        val, _ = integrate.quad(lambda z: marginal_pdf(z, EXAMPLE), -40, 40, limit=200, epsabs=1e-12)
        assert_allclose(val, 1.0, atol=1e-6)

    @pytest.mark.parametrize("z", [-3.0, 0.3, 2.5])
    def test_finite_difference(self, z):
        h = 1e-5
        fd = (marginal_cdf(z + h, EXAMPLE) - marginal_cdf(z - h, EXAMPLE)) / (2 * h)
        assert_allclose(marginal_pdf(z, EXAMPLE), fd, rtol=1e-6)

    @settings(max_examples=60, deadline=None)
    @given(loadings4, st.floats(-50, 50))
    def test_positive(self, load, z):
        assert np.isfinite(marginal_logpdf(z, load))
        assert marginal_pdf(z, load) >= 0


class TestQuantile:
    def test_gaussian(self):
        assert_allclose(marginal_quantile(0.975, (0, 0, 0, 0)), stats.norm.ppf(0.975), atol=1e-8)

    def test_roundtrip(self):
        u = np.linspace(0.01, 0.99, 99)
        z = marginal_quantile(u, EXAMPLE)
        assert_allclose(marginal_cdf(z, EXAMPLE), u, atol=1e-10)
        assert np.all(np.diff(z) > 0)

    def test_heavy_upper_above_gaussian(self):
        assert marginal_quantile(0.999, (1.5, 1.0, 0.1, 0.1)) > stats.norm.ppf(0.999)

    @pytest.mark.parametrize("u", [0.0, 1.0, -0.1, np.nan])
    def test_rejects_outside(self, u):
        with pytest.raises(ValueError):
            marginal_quantile(u, EXAMPLE)

    @settings(max_examples=40, deadline=None)
    @given(loadings4, st.floats(1e-6, 1 - 1e-6))
    def test_roundtrip_property(self, load, u):
        z = marginal_quantile(u, load)
        assert abs(marginal_cdf(z, load) - u) <= 1e-10


class TestFactorDiff:
    def test_symmetric_origin(self):
        assert factor_diff_pdf(0.0, 1.0, 1.0) == 0.5

    def test_one_sided(self):
        v = np.array([-2.0, -0.1, 0.0, 0.5, 3.0])
        expected = np.where(v < 0, 0.0, np.exp(-v / 0.8) / 0.8)
        assert_allclose(factor_diff_pdf(v, 0.8, 0.0), expected, rtol=1e-15)

    def test_integrates_to_one(self):
        val = (integrate.quad(lambda v: factor_diff_pdf(v, 0.9, 1.1), -np.inf, 0)[0]
               + integrate.quad(lambda v: factor_diff_pdf(v, 0.9, 1.1), 0, np.inf)[0])
        assert_allclose(val, 1.0, atol=1e-10)

    def test_point_mass_rejected(self):
        with pytest.raises(ValueError):
            factor_diff_pdf(0.0, 0.0, 0.0)


class TestFactorLoadings:
    def test_packed_roundtrip(self):
        L = FactorLoadings.from_vectors((1.1, 0.9, 0.9, 0.8), (0.7, 1.1, 0.7, 0.4))
        assert L.variable(1) == VariableLoadings(0.9, 0.8, 0.7, 0.4)
        u, l = L.to_vectors()
        assert_allclose(u, (1.1, 0.9, 0.9, 0.8))
        assert_allclose(l, (0.7, 1.1, 0.7, 0.4))

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            FactorLoadings.from_vectors((1.0, -0.1, 0, 0), (0, 0, 0, 0))
