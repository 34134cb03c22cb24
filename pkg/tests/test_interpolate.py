import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import integrate, stats

from corlmc.gaussian import CovarianceSpec, SpatialDesign
from corlmc.interpolate import (
    MarginalModel, PredictionRequest, back_transform, conditional_cdf, conditional_density,
    conditional_summaries, extended_sigma, predict_median, tanh_rule,
)
from corlmc.margins import FactorLoadings

THETA = (0.9, 0.5, 1.3)
SPEC = CovarianceSpec.two_factor(THETA)
ONE_FACTOR = FactorLoadings.from_vectors((1.1, 0.9, 0.9, 0.0), (0.7, 1.1, 0.7, 0.0))
DESIGN = SpatialDesign.from_coords([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
U_OBS = np.array([0.81, 0.62, 0.35, 0.93, 0.44, 0.71, 0.18, 0.55])
NEW = (0.4, 0.7)


def two_factor_cov(points_a, vars_a, points_b, vars_b):
    """Correlation of (Z_0 + Z_i*)/sqrt 2 with exponential kernels, written out."""
    d = np.linalg.norm(points_a[:, None, :] - points_b[None, :, :], axis=-1)
    same = vars_a[:, None] == vars_b[None, :]
    own = np.where(vars_a[:, None] == 0, np.exp(-THETA[1] * d), np.exp(-THETA[2] * d))
    return 0.5 * np.exp(-THETA[0] * d) + np.where(same, 0.5 * own, 0.0)


def kriging(target, u_obs=U_OBS, new=NEW):
    pts = np.vstack([DESIGN.coords, DESIGN.coords])
    var = np.repeat([0, 1], 4)
    s0 = np.array([new])
    c_oo = two_factor_cov(pts, var, pts, var)
    c_to = two_factor_cov(s0, np.array([target]), pts, var)[0]
    coef = np.linalg.solve(c_oo, c_to)
    z = stats.norm.ppf(u_obs)
    return coef @ z, math.sqrt(1.0 - c_to @ coef)


@pytest.fixture(scope="module")
def gaussian_requests():
    return [PredictionRequest(FactorLoadings.zeros(), SPEC, DESIGN, U_OBS, NEW, target=t) for t in (0, 1)]


@pytest.fixture(scope="module")
def factor_request():
    return PredictionRequest(ONE_FACTOR, SPEC, DESIGN, U_OBS, NEW, target=0)


class TestTanhRule:
    def test_integrates_polynomials(self):
        u, w = tanh_rule()
        assert np.all((u > 0) & (u < 1))
        for k in range(4):
            assert_allclose(w @ u ** k, 1.0 / (k + 1), atol=1e-7)

    def test_endpoint_singularity(self):
        u, w = tanh_rule()
        assert_allclose(w @ (1 / np.sqrt(u)), 2.0, rtol=1e-5)


class TestGaussianSubmodel:
    @pytest.mark.parametrize("target", [0, 1])
    def test_cdf_is_kriging(self, gaussian_requests, target):
        req = gaussian_requests[target]
        m, s = kriging(target)
        u0 = np.array([0.05, 0.3, 0.5, 0.77, 0.96])
        ref = stats.norm.cdf((stats.norm.ppf(u0) - m) / s)
        assert_allclose(conditional_cdf(req, u0), ref, atol=1e-6)

    @pytest.mark.parametrize("target", [0, 1])
    def test_median_is_kriging(self, gaussian_requests, target):
        m, _ = kriging(target)
        _, median = conditional_summaries(gaussian_requests[target])
        assert_allclose(stats.norm.ppf(median), m, atol=1e-6)

    def test_density_is_ratio_of_normals(self, gaussian_requests):
        m, s = kriging(0)
        u0 = 0.4
        z0 = stats.norm.ppf(u0)
        ref = stats.norm.pdf(z0, m, s) / stats.norm.pdf(z0)
        assert_allclose(conditional_density(gaussian_requests[0], u0), ref, rtol=1e-9)


@pytest.fixture(scope="module")
def independent_request():
    spec = CovarianceSpec.eq6([0.0, 0.0], (1e3, 1e3, 1e3))
    return PredictionRequest(FactorLoadings.zeros(), spec, DESIGN, U_OBS, NEW)


class TestIndependence:
    def test_cdf_identity(self, independent_request):
        req = independent_request
        u0 = np.linspace(0.01, 0.99, 9)
        assert_allclose(conditional_cdf(req, u0), u0, atol=1e-8)

    def test_summaries(self, independent_request):
        mean, median = conditional_summaries(independent_request)
        assert_allclose([mean, median], [0.5, 0.5], atol=1e-8)


class TestFactorModel:
    def test_limits(self, factor_request):
        assert conditional_cdf(factor_request, 1.0) == 1.0
        assert conditional_cdf(factor_request, 0.0) == 0.0

    def test_monotone(self, factor_request):
        F = conditional_cdf(factor_request, np.linspace(0.001, 0.999, 60))
        # rounding noise far below any reported digit is allowed
        assert np.all(np.diff(F) >= -1e-15)

    def test_total_mass(self, factor_request):
        assert abs(factor_request.law().total - 1.0) <= 1e-4

    def test_density_integrates_to_one(self, factor_request):
        val, _ = integrate.quad(lambda u: conditional_density(factor_request, u), 0, 1,
                                limit=200, epsabs=1e-9)
        assert_allclose(val, 1.0, atol=1e-4)

    def test_median_roundtrip(self, factor_request):
        _, median = conditional_summaries(factor_request)
        assert abs(conditional_cdf(factor_request, median) - 0.5) <= 1e-8

    def test_mean_against_quadrature(self, factor_request):
        mean, _ = conditional_summaries(factor_request)
        ref, _ = integrate.quad(lambda u: u * conditional_density(factor_request, u), 0, 1,
                                limit=200, epsabs=1e-10)
        assert_allclose(mean, ref, atol=1e-6)

    def test_near_site(self):
        req = PredictionRequest(ONE_FACTOR, SPEC, DESIGN, U_OBS, (1e-3, 0.0), target=0)
        _, median = conditional_summaries(req)
        assert abs(median - U_OBS[0]) < 0.05

    def test_symmetric_loadings(self):
        L = FactorLoadings.from_vectors((0.8, 0.6, 0.8, 0.0), (0.8, 0.6, 0.8, 0.0))
        req = PredictionRequest(L, SPEC, DESIGN, np.full(8, 0.5), NEW, target=0)
        mean, median = conditional_summaries(req)
        assert abs(mean - median) <= 0.01

    @pytest.mark.slow
    def test_both_specific_factors(self):
        L = FactorLoadings.from_vectors((1.1, 0.9, 0.9, 0.8), (0.7, 1.1, 0.7, 0.4))
        small = SpatialDesign.from_coords([[0.0, 0.0], [1.0, 0.0]])
        req = PredictionRequest(L, SPEC, small, U_OBS[[0, 1, 4, 5]], (0.5, 0.5), target=1)
        law = req.law()
        assert abs(law.total - 1.0) <= 1e-4
        assert abs(law.cdf(law.median()) - 0.5) <= 1e-8


class TestRequest:
    def test_coincident_location(self):
        with pytest.raises(ValueError):
            PredictionRequest(ONE_FACTOR, SPEC, DESIGN, U_OBS, (1.0, 0.0))

    @pytest.mark.parametrize("bad", [0.0, 1.0, 1.2])
    def test_scores_inside(self, bad):
        u = U_OBS.copy()
        u[2] = bad
        with pytest.raises(ValueError):
            PredictionRequest(ONE_FACTOR, SPEC, DESIGN, u, NEW)

    def test_target(self):
        with pytest.raises(ValueError):
            PredictionRequest(ONE_FACTOR, SPEC, DESIGN, U_OBS, NEW, target=2)

    def test_extended_sigma_layout(self):
        sigma, sizes, pos = extended_sigma(DESIGN, SPEC, NEW, 1)
        assert sizes == (4, 5) and pos == 8
        pts = np.vstack([DESIGN.coords, DESIGN.coords, [NEW]])
        var = np.array([0] * 4 + [1] * 5)
        assert_allclose(sigma.matrix, two_factor_cov(pts, var, pts, var), atol=1e-15)


class TestBackTransform:
    def test_identity(self):
        assert back_transform(0.3, MarginalModel.identity()) == 0.3

    def test_type7(self):
        assert back_transform(0.5, MarginalModel(sample=[4.0, 1.0, 3.0, 2.0])) == 2.5
        assert_allclose(back_transform([0.0, 1 / 3, 1.0], MarginalModel(sample=[1, 2, 3, 4])), [1, 2, 4])

    def test_monotone(self):
        G = MarginalModel(sample=np.random.default_rng(0).normal(size=50))
        assert np.all(np.diff(back_transform(np.linspace(0, 1, 101), G)) >= 0)

    def test_parametric(self):
        G = MarginalModel(ppf=stats.norm(10, 2).ppf)
        assert_allclose(back_transform(0.975, G), 10 + 2 * stats.norm.ppf(0.975))

    def test_empty_sample(self):
        with pytest.raises(ValueError):
            MarginalModel(sample=[])

    def test_exactly_one_source(self):
        with pytest.raises(ValueError):
            MarginalModel()

    def test_predict_median(self, gaussian_requests):
        req = PredictionRequest(FactorLoadings.zeros(), SPEC, DESIGN, U_OBS, NEW,
                                G_hat=MarginalModel(ppf=stats.norm.ppf))
        assert_allclose(predict_median(req), kriging(0)[0], atol=1e-6)
        with pytest.raises(ValueError):
            predict_median(gaussian_requests[0])
