import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats

from corlmc.density import (
    CopulaModel, JointDensity, WStarDensity, copula_logdensity, gaussian_copula_logdensity,
    joint_logpdf, wstar_logpdf,
)
from corlmc.gaussian import CorrelationMatrix, CovarianceSpec, SpatialDesign, build_sigma_z, mvn_logpdf
from corlmc.margins import FactorLoadings
from corlmc.quadrature import gauss_legendre

import oracles

RHO_HALF = CovarianceSpec.two_factor((1.0, 1.0, 1.0))  # cross-correlation 0.5 at one site


def common_only(u0, l0):
    """Loadings with common factors ``u0 = (a10U, a20U)``, ``l0 = (a10L, a20L)``."""
    z = np.zeros(2)
    return FactorLoadings(np.asarray(u0, float), z, np.asarray(l0, float), z)


class TestWStar:
    def test_no_common_factor_is_gaussian(self, rng):
        design = SpatialDesign.line(3, spacing=0.4)
        spec = CovarianceSpec.two_factor((0.7, 0.3, 0.9))
        w = rng.normal(size=6)
        L = FactorLoadings.from_vectors((0, 0.5, 0, 0.3), (0, 0.2, 0, 0.0))
        # same formula through the sufficient statistics, so equal up to rounding
        assert_allclose(wstar_logpdf(w, design, spec, L), mvn_logpdf(w, build_sigma_z(design, spec)),
                        rtol=1e-14)

    @pytest.mark.parametrize("w", [(0.4, -0.2), (2.5, 1.0), (-1.5, -2.0)])
    def test_single_site_brute_force(self, pair_design, w):
        L = common_only((1.1, 0.9), (0.7, 0.7))
        cov = build_sigma_z(pair_design, RHO_HALF).matrix
        assert_allclose(cov[0, 1], 0.5)
        ref = oracles.wstar_density(w, cov, (1.1, 0.9), (0.7, 0.7))
        assert_allclose(math.exp(wstar_logpdf(np.array(w), pair_design, RHO_HALF, L)), ref, rtol=1e-6)

    def test_two_sites_brute_force(self):
        design = SpatialDesign.line(2, spacing=0.6)
        spec = CovarianceSpec.two_factor((0.9, 0.4, 1.3))
        L = common_only((0.8, 1.2), (0.5, 0.3))
        cov = build_sigma_z(design, spec).matrix
        w = np.array([0.3, 0.9, -0.4, 1.5])
        ref = oracles.wstar_density(w, cov, (0.8, 1.2), (0.5, 0.3))
        assert_allclose(math.exp(wstar_logpdf(w, design, spec, L)), ref, rtol=1e-6)

    @pytest.mark.parametrize("u0, l0", [((1.1, 0.9), (0.0, 0.0)), ((0.0, 0.0), (0.6, 1.3))])
    def test_one_sided_brute_force(self, pair_design, u0, l0):
        cov = build_sigma_z(pair_design, RHO_HALF).matrix
        w = np.array([0.7, -0.3])
        ref = oracles.wstar_density(w, cov, u0, l0)
        assert_allclose(math.exp(wstar_logpdf(w, pair_design, RHO_HALF, common_only(u0, l0))),
                        ref, rtol=1e-6)

    def test_normalization(self, pair_design):
        L = common_only((1.1, 0.9), (0.7, 0.7))
        x, wt = gauss_legendre(200).unit_interval()
        x = -12 + 24 * x
        wt = 24 * wt
        X, Y = np.meshgrid(x, x, indexing="ij")
        pts = np.column_stack([X.ravel(), Y.ravel()])
        dens = np.exp(wstar_logpdf(pts, pair_design, RHO_HALF, L)).reshape(X.shape)
        assert_allclose(wt @ dens @ wt, 1.0, atol=1e-4)

    def test_rho_star_sign(self, pair_design):
        # same-sign common loadings give a positive correlation in the orthant integral
        sigma = build_sigma_z(pair_design, RHO_HALF)
        ws = WStarDensity(sigma, (1, 1), (1.0, 0.2), (0.3, 1.0))
        assert ws.rho_star == pytest.approx(ws.c12 / math.sqrt(ws.c11 * ws.c22))


class TestJoint:
    @pytest.mark.parametrize("w", [(0.0, 0.0), (1.0, -1.0), (2.0, 2.0)])
    def test_one_factor_against_reference(self, pair_design, recovery_spec, w):
        L = FactorLoadings.from_vectors((1.1, 0.9, 0.9, 0.0), (0.7, 1.1, 0.7, 0.0))
        cov = build_sigma_z(pair_design, recovery_spec).matrix
        ref = oracles.joint_density_one_factor(w, cov, (1.1, 0.9), (0.7, 0.7), 0.9, 1.1)
        got = math.exp(joint_logpdf([w[0]], [w[1]], pair_design, recovery_spec, L))
        assert_allclose(got, ref, rtol=1e-5)

    def test_empty_convolution(self, rng):
        design = SpatialDesign.line(3, spacing=0.5)
        spec = CovarianceSpec.two_factor((1.0, 0.5, 2.0))
        L = common_only((1.0, 0.6), (0.4, 0.8))
        w = rng.normal(size=(4, 6))
        assert_allclose(joint_logpdf(w[:, :3], w[:, 3:], design, spec, L),
                        wstar_logpdf(w, design, spec, L), rtol=0, atol=0)

    def test_node_convergence(self, recovery_spec):
        design = SpatialDesign.grid(2)
        L = FactorLoadings.from_vectors((1.1, 0.9, 0.9, 0.0), (0.7, 1.1, 0.7, 0.0))
        w = np.random.default_rng(7).normal(scale=1.5, size=(50, 8))
        sigma = build_sigma_z(design, recovery_spec)
        vals = [JointDensity(sigma, (4, 4), L, nodes=k).logpdf(w) for k in (20, 30, 40)]
        assert np.max(np.abs(vals[1] - vals[0])) <= 1e-6
        assert np.max(np.abs(vals[2] - vals[1])) <= 1e-6

    def test_two_factor_node_convergence(self, recovery_spec, recovery_loadings):
        design = SpatialDesign.line(2, spacing=0.5)
        sigma = build_sigma_z(design, recovery_spec)
        w = np.random.default_rng(8).normal(scale=1.5, size=(6, 4))
        a = JointDensity(sigma, (2, 2), recovery_loadings, nodes=20).logpdf(w)
        b = JointDensity(sigma, (2, 2), recovery_loadings, nodes=30).logpdf(w)
        assert_allclose(a, b, atol=1e-6)

    def test_halfline_route_agrees_for_one_site(self, pair_design, recovery_spec):
        L = FactorLoadings.from_vectors((1.1, 0.9, 0.9, 0.0), (0.7, 1.1, 0.7, 0.0))
        sigma = build_sigma_z(pair_design, recovery_spec)
        w = np.array([[0.0, 0.0], [1.0, -1.0], [2.0, 2.0]])
        a = JointDensity(sigma, (1, 1), L).logpdf(w)
        b = JointDensity(sigma, (1, 1), L, nodes=60, method="halfline").logpdf(w)
        assert_allclose(a, b, atol=1e-6)

    def test_exchangeability(self, recovery_spec, recovery_loadings):
        rng = np.random.default_rng(3)
        coords = rng.uniform(0, 1, size=(3, 2))
        perm = np.array([2, 0, 1])
        w = rng.normal(size=6)
        L = FactorLoadings.from_vectors((1.1, 0.9, 0.9, 0.0), (0.7, 1.1, 0.7, 0.0))
        a = joint_logpdf(w[:3], w[3:], SpatialDesign.from_coords(coords), recovery_spec, L)
        b = joint_logpdf(w[:3][perm], w[3:][perm], SpatialDesign.from_coords(coords[perm]),
                         recovery_spec, L)
        assert_allclose(a, b, atol=1e-12)

    def test_unequal_blocks(self):
        # a 1 + 2 split matches the brute-force common-factor density
        cov = np.array([[1.0, 0.4, 0.3], [0.4, 1.0, 0.6], [0.3, 0.6, 1.0]])
        ws = WStarDensity(CorrelationMatrix(cov), (1, 2), (0.9, 0.5), (0.4, 0.8))
        w = np.array([0.2, -0.5, 1.1])
        bU = np.array([0.9, 0.5, 0.5])
        bL = np.array([0.4, 0.8, 0.8])
        from scipy import integrate
        prec = np.linalg.inv(cov)
        c = -0.5 * (3 * math.log(2 * math.pi) + np.linalg.slogdet(cov)[1])
        ref, _ = integrate.dblquad(
            lambda y, x: math.exp(c - 0.5 * (w - x * bU + y * bL) @ prec @ (w - x * bU + y * bL) - x - y),
            0, 60, 0, 60, epsrel=1e-10)
        assert_allclose(math.exp(ws.logpdf(w)), ref, rtol=1e-6)


class TestCopula:
    def test_independence(self, rng):
        design = SpatialDesign.line(1)
        spec = CovarianceSpec.eq6([0.0, 0.0], (1.0, 1.0, 1.0))
        u = rng.uniform(0.01, 0.99, size=2)
        assert_allclose(copula_logdensity(u[:1], u[1:], design, spec, FactorLoadings.zeros()), 0.0,
                        atol=1e-14)

    def test_gaussian_closed_form(self, rng):
        design = SpatialDesign.grid(2)
        spec = CovarianceSpec.two_factor((0.75, 0.1, 0.4))
        u = rng.uniform(0.001, 0.999, size=(5, 8))
        model = CopulaModel(design, spec, FactorLoadings.zeros())
        assert_allclose(model.logpdf(u), gaussian_copula_logdensity(u, model.sigma), atol=1e-8)

    def test_invariant_to_monotone_transform(self, rng):
        from corlmc.data import ReplicateMatrix, uniform_scores
        design = SpatialDesign.line(2)
        x = rng.normal(size=(30, 4))
        a = uniform_scores(ReplicateMatrix(x, 2, 2)).values
        b = uniform_scores(ReplicateMatrix(np.exp(3 * x) + 1, 2, 2)).values
        model = CopulaModel(design, CovarianceSpec.two_factor((1.0, 0.5, 0.8)),
                            FactorLoadings.from_vectors((0.8, 0.5, 0.6, 0), (0.4, 0.3, 0.5, 0)))
        assert_allclose(model.logpdf(a), model.logpdf(b), rtol=0, atol=0)

    @pytest.mark.parametrize("u", [0.0, 1.0])
    def test_boundary_scores_rejected(self, pair_design, recovery_spec, recovery_loadings, u):
        with pytest.raises(ValueError):
            copula_logdensity([u], [0.5], pair_design, recovery_spec, recovery_loadings)

    def test_requires_bivariate(self):
        with pytest.raises(ValueError):
            CopulaModel(SpatialDesign.line(2, p=3), CovarianceSpec.two_factor((1, 1, 1, 1), p=3),
                        FactorLoadings.zeros(3))

    def test_stats_shortcut_matches_direct(self, rng, recovery_spec):
        # the statistics route must equal the Gaussian density when nothing is convolved
        design = SpatialDesign.line(2)
        sigma = build_sigma_z(design, recovery_spec)
        jd = JointDensity(sigma, (2, 2), FactorLoadings.zeros())
        w = rng.normal(size=(3, 4))
        assert_allclose(jd.logpdf(w), stats.multivariate_normal(np.zeros(4), sigma.matrix).logpdf(w),
                        rtol=1e-12)
