"""Joint and copula densities of the bivariate (``p = 2``) model.

Everything is computed from three sufficient statistics of an observation
``w`` (stacked variable-major, block sizes ``n1`` and ``n2``)::

    q  = w' P w,   s1 = e1' P w,   s2 = e2' P w,        P = Sigma_Z^{-1}

where ``e_i`` is the indicator of block ``i``.  Shifting block ``i`` by a
scalar ``v`` updates the statistics in closed form, so the convolution over
the idiosyncratic factors is a cheap, fully vectorized loop over quadrature
nodes.

Density of ``W* = Z + bU*E0U - bL*E0L`` (common factors only): integrating
the Gaussian density over the two unit-exponential factors ``x = E0U`` and
``y = E0L`` gives a truncated bivariate Gaussian integral with precision
``[[c11, -c12], [-c12, c22]]`` and linear term ``(c1, c2)``, hence a
bivariate normal CDF with correlation ``+c12 / sqrt(c11 c22)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfcx, log_ndtr, logsumexp, ndtri

from .gaussian import (LOG_2PI, CorrelationMatrix, CovarianceSpec, SpatialDesign,
                       build_sigma_z, mills_ratio, log_bvn_cdf)
from .margins import FactorLoadings, marginal_logpdf, marginal_quantile
from .quadrature import DEFAULT_NODES, gauss_legendre, integrate_log_concave

# closed form is abandoned for the 1-D integral route when the two common
# loading vectors are this close to proportional (1 - rho*^2 below it) ...
PROPORTIONAL_TOL = 1e-6
# ... or, pointwise, when the exponent would cancel against a log-CDF this large
EXPONENT_LIMIT = 1e3
# inner rule size used while the outer rule searches for its mode and ends
SEARCH_NODES = 8


class DegenerateDensityError(ValueError):
    """The common-factor quadratic form is degenerate for these loadings."""


class QuadratureError(FloatingPointError):
    """The convolution produced a non-finite value."""


@dataclass(frozen=True)
class WStarTerms:
    """Intermediate quantities of the common-factor density at one point."""

    c1: float
    c2: float
    c11: float
    c22: float
    c12: float
    c_delta: float
    s1: float
    s2: float
    s11: float
    s22: float
    s12: float
    log_K_w: float
    rho_star: float


def _as_block_sizes(sizes, m):
    n1, n2 = (int(s) for s in sizes)
    if n1 < 1 or n2 < 1 or n1 + n2 != m:
        raise ValueError(f"block sizes {sizes} do not match dimension {m}")
    return n1, n2


class WStarDensity:
    """Density of ``Z + bU E0U - bL E0L`` for a two-block Gaussian ``Z``.

    Parameters
    ----------
    sigma
        Correlation matrix of ``Z``.
    sizes
        Block sizes ``(n1, n2)``; blocks need not be equal.
    upper0, lower0
        Common-factor loadings ``(a10, a20)`` of the upper and lower factor.
    """

    def __init__(self, sigma: CorrelationMatrix, sizes, upper0, lower0):
        self.sigma = sigma
        m = sigma.size
        self.n1, self.n2 = _as_block_sizes(sizes, m)
        self.m = m
        self.bU = np.asarray(upper0, dtype=float)
        self.bL = np.asarray(lower0, dtype=float)
        if self.bU.shape != (2,) or self.bL.shape != (2,):
            raise ValueError("common loadings must be pairs (variable 1, variable 2)")
        e1 = np.zeros(m)
        e1[: self.n1] = 1.0
        e2 = 1.0 - e1
        Pe = sigma.solve(np.column_stack([e1, e2]))
        self._Pe = Pe  # columns P e1, P e2
        self.s11 = float(e1 @ Pe[:, 0])
        self.s22 = float(e2 @ Pe[:, 1])
        self.s12 = float(0.5 * (e1 @ Pe[:, 1] + e2 @ Pe[:, 0]))
        S = np.array([[self.s11, self.s12], [self.s12, self.s22]])
        self.S = S
        self.c11 = float(self.bU @ S @ self.bU)
        self.c22 = float(self.bL @ S @ self.bL)
        self.c12 = float(self.bU @ S @ self.bL)
        self.c_delta = self.c11 * self.c22 - self.c12 ** 2
        self.has_upper = bool(np.any(self.bU > 0))
        self.has_lower = bool(np.any(self.bL > 0))
        self.base_const = -0.5 * (m * LOG_2PI + sigma.logdet)
        self.rho_star = 0.0
        self.route = "gaussian"
        if self.has_upper and self.has_lower:
            scale = self.c11 * self.c22
            if self.c_delta < -1e-10 * scale:
                raise DegenerateDensityError(
                    f"c_delta = {self.c_delta:.3e} < 0 for upper loadings "
                    f"{tuple(self.bU)} and lower loadings {tuple(self.bL)}")
            self.rho_star = float(np.clip(self.c12 / math.sqrt(scale), -1.0, 1.0))
            if 1.0 - self.rho_star ** 2 < PROPORTIONAL_TOL:
                self.route = "integral"
            else:
                self.route = "closed"
        elif self.has_upper:
            self.route = "upper"
        elif self.has_lower:
            self.route = "lower"

    # statistics -----------------------------------------------------------
    def stats(self, w):
        """``(q, s1, s2)`` for each row of ``w``."""
        w = np.atleast_2d(np.asarray(w, dtype=float))
        if w.shape[-1] != self.m:
            raise ValueError(f"w has dimension {w.shape[-1]}, expected {self.m}")
        Pw = self.sigma.solve(w.T)
        q = np.sum(w.T * Pw, axis=0)
        s1 = Pw[: self.n1].sum(axis=0)
        s2 = Pw[self.n1:].sum(axis=0)
        return q, s1, s2

    def shift(self, q, s1, s2, v1=0.0, v2=0.0):
        """Statistics of ``w - (v1 e1 + v2 e2)``."""
        q = (q - 2.0 * (v1 * s1 + v2 * s2)
             + v1 * v1 * self.s11 + 2.0 * v1 * v2 * self.s12 + v2 * v2 * self.s22)
        return q, s1 - v1 * self.s11 - v2 * self.s12, s2 - v1 * self.s12 - v2 * self.s22

    def _linear(self, s1, s2):
        c1 = self.bU[0] * s1 + self.bU[1] * s2 - 1.0
        c2 = -(self.bL[0] * s1 + self.bL[1] * s2) - 1.0
        return c1, c2

    # density ----------------------------------------------------------------
    def logpdf_stats(self, q, s1, s2, grad: bool = False):
        """Log density from the sufficient statistics (broadcasting).

        With ``grad=True`` also returns the partial derivatives with respect
        to ``s1`` and ``s2`` (the partial with respect to ``q`` is ``-1/2``).
        """
        q, s1, s2 = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (q, s1, s2)))
        base = self.base_const - 0.5 * q
        c1, c2 = self._linear(s1, s2)
        if not grad:
            return base + self.orthant(c1, c2)
        L, ex, ey = self.orthant(c1, c2, grad=True)
        g1 = ex * self.bU[0] - ey * self.bL[0]
        g2 = ex * self.bU[1] - ey * self.bL[1]
        return base + L, g1, g2

    def shift_derivative(self, s_shifted, g1, g2, block: int):
        """``d/dv`` of the log density along a shift of ``block`` by ``v``."""
        col = self.S[:, block]
        return s_shifted - (col[0] * g1 + col[1] * g2)

    def orthant(self, c1, c2, grad: bool = False):
        """``log int_{x,y>0} exp(c1 x + c2 y - (c11 x^2 - 2 c12 x y + c22 y^2)/2)``.

        Terms for an absent factor are dropped.  With ``grad=True`` also
        returns the means of ``x`` and ``y`` under the normalized integrand,
        which are the partial derivatives with respect to ``c1`` and ``c2``.
        """
        c1 = np.asarray(c1, dtype=float)
        c2 = np.asarray(c2, dtype=float)
        zero = np.zeros(np.broadcast(c1, c2).shape)
        route = self.route
        if route == "gaussian":
            return (zero, zero, zero) if grad else zero
        if route == "upper":
            L, ex = _halfline_gauss(c1, self.c11)
            return (L, ex, zero) if grad else L
        if route == "lower":
            L, ey = _halfline_gauss(c2, self.c22)
            return (L, zero, ey) if grad else L
        if route == "integral":
            return self._orthant_integral(c1, c2, grad)
        return self._orthant_closed(c1, c2, grad)

    def _orthant_closed(self, c1, c2, grad):
        c11, c22, c12, cd, r = self.c11, self.c22, self.c12, self.c_delta, self.rho_star
        c1, c2 = np.broadcast_arrays(c1, c2)
        expo = (c1 * c1 * c22 + 2.0 * c1 * c2 * c12 + c2 * c2 * c11) / (2.0 * cd)
        sx = math.sqrt(c22 / cd)
        sy = math.sqrt(c11 / cd)
        mx = (c1 * c22 + c2 * c12) / cd
        my = (c1 * c12 + c2 * c11) / cd
        h = mx / sx
        k = my / sy
        L = np.empty(c1.shape)
        ex = np.empty(c1.shape)
        ey = np.empty(c1.shape)
        far = np.abs(expo) > EXPONENT_LIMIT
        near = ~far
        if near.any():
            hn, kn = h[near], k[near]
            logP = log_bvn_cdf(hn, kn, r)
            L[near] = LOG_2PI - 0.5 * math.log(cd) + expo[near] + logP
            if grad:
                s = math.sqrt(1.0 - r * r)
                a = np.exp(-0.5 * hn * hn - 0.5 * LOG_2PI + log_ndtr((kn - r * hn) / s) - logP)
                b = np.exp(-0.5 * kn * kn - 0.5 * LOG_2PI + log_ndtr((hn - r * kn) / s) - logP)
                ex[near] = mx[near] + sx * (a + r * b)
                ey[near] = my[near] + sy * (b + r * a)
        if far.any():
            res = self._orthant_integral(c1[far], c2[far], grad)
            if grad:
                L[far], ex[far], ey[far] = res
            else:
                L[far] = res
        return (L, ex, ey) if grad else L

    def _orthant_integral(self, c1, c2, grad):
        """Same integral with one variable done analytically and the other by
        log-concave quadrature; used near proportional loadings."""
        c11, c22, c12 = self.c11, self.c22, self.c12
        swap = c22 > c11
        if swap:
            c1, c2, c11, c22 = c2, c1, c22, c11
        c1, c2 = np.broadcast_arrays(np.asarray(c1, dtype=float), np.asarray(c2, dtype=float))
        cd = max(c11 * c22 - c12 * c12, 0.0)
        rt = math.sqrt(c11)
        slope = c2 + c1 * c12 / c11
        curv = cd / c11
        const = 0.5 * math.log(2.0 * math.pi / c11)

        def fg(y):
            g = (c1 + c12 * y) / rt
            # g^2/2 + log Phi(g) = log(erfcx(-g/sqrt 2)/2) is kept whole for g < 0
            neg = np.minimum(g, 0.0)
            lo = c2 * y - 0.5 * c22 * y * y + np.log(0.5 * erfcx(-neg / math.sqrt(2.0)))
            hi = slope * y - 0.5 * curv * y * y + 0.5 * c1 * c1 / c11 + log_ndtr(g)
            val = np.where(g < 0, lo, hi) + const
            return val, slope - curv * y + (c12 / rt) * mills_ratio(g)

        # curvature of the y-integrand lies in [cd/c11, c22]
        out = integrate_log_concave(fg, 0.0, np.inf, np.zeros(c1.shape),
                                    np.full(c1.shape, 1.0 / math.sqrt(c22)),
                                    return_nodes=grad)
        if not grad:
            return out
        L, y, terms = out
        p = np.exp(terms - L)
        g = (c1 + c12 * y) / rt
        ey = np.sum(p * y, axis=0)
        ex = np.sum(p * (g + mills_ratio(g)), axis=0) / rt
        return (L, ey, ex) if swap else (L, ex, ey)

    def logpdf(self, w):
        out = self.logpdf_stats(*self.stats(w))
        return float(out[0]) if np.ndim(w) == 1 else out

    def context(self, w) -> WStarTerms:
        """All intermediate constants at a single point ``w``."""
        q, s1, s2 = (float(a[0]) for a in self.stats(w))
        c1, c2 = self._linear(s1, s2)
        return WStarTerms(
            c1=c1, c2=c2, c11=self.c11, c22=self.c22, c12=self.c12,
            c_delta=self.c_delta, s1=s1, s2=s2, s11=self.s11, s22=self.s22,
            s12=self.s12, log_K_w=self.base_const + LOG_2PI - 0.5 * q
            - 0.5 * math.log(self.c_delta) if self.c_delta > 0 else -math.inf,
            rho_star=self.rho_star)


def _halfline_gauss(c, cc):
    """``log int_0^inf exp(c x - cc x^2 / 2) dx`` and the mean of ``x``."""
    rt = math.sqrt(cc)
    g = np.asarray(c, dtype=float) / rt
    return 0.5 * math.log(2.0 * math.pi / cc) + _half_sq_log_ndtr(g), (g + mills_ratio(g)) / rt


def _half_sq_log_ndtr(g):
    """``g^2/2 + log Phi(g)`` without cancellation for negative ``g``."""
    neg = np.minimum(g, 0.0)
    return np.where(g < 0, np.log(0.5 * erfcx(-neg / math.sqrt(2.0))), 0.5 * g * g + log_ndtr(g))


def _factor_arm(aU: float, aL: float):
    """Support, kink and log-density pieces of ``V = aU E1 - aL E2``."""
    lower = -np.inf if aL > 0 else 0.0
    upper = np.inf if aU > 0 else 0.0
    kink = 0.0 if (aU > 0 and aL > 0) else None
    norm = math.log(aU + aL)
    inv_u = 1.0 / aU if aU > 0 else 0.0
    inv_l = 1.0 / aL if aL > 0 else 0.0

    def log_pdf(v):
        return np.where(v > 0, -v * inv_u, v * inv_l) - norm

    def dlog_pdf(v):
        # right derivative at the kink; left derivative when there is no right arm
        return np.where((v >= 0) & (aU > 0), -inv_u, inv_l)

    return lower, upper, kink, log_pdf, dlog_pdf


class JointDensity:
    """Density of the full bivariate model: ``W*`` convolved with the
    idiosyncratic differences ``V_i = a_iU E_iU - a_iL E_iL``.

    Parameters
    ----------
    sigma, sizes
        Correlation matrix of ``Z`` and the two block sizes.
    loadings
        Factor loadings for ``p = 2``.
    nodes
        Gauss-Legendre points per quadrature piece.
    method
        ``"adaptive"`` (default) places the rule around the mass of the
        log-concave convolution integrand, found from its analytic
        derivative.  ``"halfline"`` uses the fixed map ``v = a t/(1-t)`` on
        each half-line with scale equal to the loading; it is accurate for
        few locations but degrades as the integrand sharpens with ``n``.
    """

    def __init__(self, sigma: CorrelationMatrix, sizes, loadings: FactorLoadings,
                 nodes: int = DEFAULT_NODES, method: str = "adaptive"):
        if loadings.p != 2:
            raise ValueError("the joint density is available for p = 2 only")
        if method not in ("adaptive", "halfline"):
            raise ValueError(f"unknown quadrature method {method!r}")
        self.loadings = loadings
        self.nodes = int(nodes)
        self.method = method
        self.wstar = WStarDensity(sigma, sizes, loadings.upper0, loadings.lower0)
        self.m = self.wstar.m
        self.active = [bool(loadings.upper[i] > 0 or loadings.lower[i] > 0) for i in range(2)]

    # adaptive -------------------------------------------------------------
    def _conv_1d(self, q, s1, s2, block, want_nodes=False, nodes=None):
        ws = self.wstar
        aU, aL = float(self.loadings.upper[block]), float(self.loadings.lower[block])
        lower, upper, kink, log_pdf, dlog_pdf = _factor_arm(aU, aL)
        key = "v1" if block == 0 else "v2"

        def fg(v):
            qq, t1, t2 = ws.shift(q, s1, s2, **{key: v})
            lf, g1, g2 = ws.logpdf_stats(qq, t1, t2, grad=True)
            d = ws.shift_derivative(t1 if block == 0 else t2, g1, g2, block)
            return lf + log_pdf(v), d + dlog_pdf(v)

        shape = np.broadcast(q, s1, s2).shape
        scale = np.full(shape, 1.0 / math.sqrt(ws.S[block, block]))
        return integrate_log_concave(fg, lower, upper, np.zeros(shape), scale, kink=kink,
                                     nodes=nodes or self.nodes, grading=(), return_nodes=want_nodes)

    def _conv_2d(self, q, s1, s2):
        ws = self.wstar
        aU, aL = float(self.loadings.upper[0]), float(self.loadings.lower[0])
        lower, upper, kink, log_pdf, dlog_pdf = _factor_arm(aU, aL)

        def make(nodes):
            def fg(v1):
                qq, t1, t2 = ws.shift(q, s1, s2, v1=v1)
                inner, v2, terms = self._conv_1d(qq, t1, t2, 1, want_nodes=True, nodes=nodes)
                # d/dv1 of the inner log-integral: posterior mean of the v1-partial
                q3, u1, u2 = ws.shift(qq, t1, t2, v2=v2)
                _, g1, g2 = ws.logpdf_stats(q3, u1, u2, grad=True)
                part = ws.shift_derivative(u1, g1, g2, 0)
                wts = np.exp(terms - inner)
                return inner + log_pdf(v1), np.sum(wts * part, axis=0) + dlog_pdf(v1)
            return fg

        shape = np.broadcast(q, s1, s2).shape
        scale = np.full(shape, 1.0 / math.sqrt(ws.S[0, 0]))
        # the outer mode and ends only need a rough inner integral
        return integrate_log_concave(make(None), lower, upper, np.zeros(shape), scale, kink=kink,
                                     nodes=self.nodes, grading=(),
                                     fg_search=make(min(self.nodes, SEARCH_NODES)))

    # fixed half-line map --------------------------------------------------
    def _halfline_arms(self, block):
        aU, aL = float(self.loadings.upper[block]), float(self.loadings.lower[block])
        rule = gauss_legendre(self.nodes)
        norm = math.log(aU + aL)
        vs, lws = [], []
        for a, sign in ((aU, 1.0), (aL, -1.0)):
            if a > 0:
                v, logw = rule.half_line(a)
                vs.append(sign * v)
                lws.append(logw - v / a - norm)
        return np.concatenate(vs), np.concatenate(lws)

    def _conv_halfline(self, q, s1, s2):
        ws = self.wstar
        if self.active[0] and self.active[1]:
            v1, lw1 = self._halfline_arms(0)
            v2, lw2 = self._halfline_arms(1)
            V1 = np.repeat(v1, v2.size)
            V2 = np.tile(v2, v1.size)
            lw = (lw1[:, None] + lw2[None, :]).ravel()
            shifted = ws.shift(q, s1, s2, v1=V1[:, None], v2=V2[:, None])
        else:
            block = 0 if self.active[0] else 1
            v, lw = self._halfline_arms(block)
            key = "v1" if block == 0 else "v2"
            shifted = ws.shift(q, s1, s2, **{key: v[:, None]})
        return logsumexp(ws.logpdf_stats(*shifted) + lw[:, None], axis=0)

    # public ---------------------------------------------------------------
    def logpdf_stats(self, q, s1, s2):
        q, s1, s2 = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (q, s1, s2))
        if not any(self.active):
            out = self.wstar.logpdf_stats(q, s1, s2)
        elif self.method == "halfline":
            out = self._conv_halfline(q, s1, s2)
        elif self.active[0] and self.active[1]:
            out = self._conv_2d(q, s1, s2)
        else:
            out = self._conv_1d(q, s1, s2, 0 if self.active[0] else 1)
        if not np.all(np.isfinite(out)):
            bad = np.flatnonzero(~np.isfinite(out))
            raise QuadratureError(
                f"joint density is not finite at {bad.size} point(s); first at index "
                f"{bad[0]} with q={q.ravel()[bad[0]]:.6g}, s1={s1.ravel()[bad[0]]:.6g}, "
                f"s2={s2.ravel()[bad[0]]:.6g} ({self.method} rule, {self.nodes} nodes)")
        return out

    def logpdf(self, w):
        w = np.asarray(w, dtype=float)
        out = self.logpdf_stats(*self.wstar.stats(w))
        return float(out[0]) if w.ndim == 1 else out


def _sigma_for(design: SpatialDesign, spec: CovarianceSpec, sigma=None) -> CorrelationMatrix:
    if design.p != 2:
        raise ValueError(f"the density is implemented for p = 2, design has p = {design.p}")
    return build_sigma_z(design, spec) if sigma is None else sigma


class CopulaModel:
    """Copula density of the bivariate model on a fixed design.

    Bundles the correlation matrix, the joint density and the marginal
    quantile functions so that repeated evaluations (a likelihood, a
    conditional law) share the set-up cost.

    Parameters
    ----------
    design, spec, loadings
        Locations, Gaussian LMC structure and factor loadings (``p = 2``).
    nodes, method
        Passed to :class:`JointDensity`.
    sigma
        Optional precomputed ``build_sigma_z(design, spec)``.
    """

    def __init__(self, design: SpatialDesign, spec: CovarianceSpec, loadings: FactorLoadings,
                 nodes: int = DEFAULT_NODES, method: str = "adaptive",
                 sigma: CorrelationMatrix | None = None):
        if loadings.p != 2:
            raise ValueError("loadings must describe p = 2 variables")
        self.design = design
        self.spec = spec
        self.loadings = loadings
        self.sigma = _sigma_for(design, spec, sigma)
        n = design.n
        self.sizes = (n, n)
        self.joint = JointDensity(self.sigma, self.sizes, loadings, nodes=nodes, method=method)
        self._margins = [loadings.variable(i) for i in range(2)]

    def quantiles(self, u):
        """Marginal quantiles of a score array ``(..., 2n)``; each distinct
        score of a variable is inverted once."""
        u = np.asarray(u, dtype=float)
        if np.any(~(u > 0) | ~(u < 1)):
            raise ValueError("copula arguments must lie strictly inside (0, 1)")
        z = np.empty(u.shape)
        n = self.design.n
        for i, load in enumerate(self._margins):
            block = u[..., i * n:(i + 1) * n]
            vals, inv = np.unique(block, return_inverse=True)
            z[..., i * n:(i + 1) * n] = marginal_quantile(vals, load)[inv.reshape(block.shape)]
        return z

    def marginal_logpdf_sum(self, z):
        z = np.atleast_2d(z)
        n = self.design.n
        return sum(np.sum(marginal_logpdf(z[:, i * n:(i + 1) * n], load), axis=1)
                   for i, load in enumerate(self._margins))

    def logpdf_z(self, z):
        """Copula log density at the quantile vector(s) ``z``."""
        z = np.atleast_2d(z)
        return self.joint.logpdf(z) - self.marginal_logpdf_sum(z)

    def logpdf(self, u):
        """Copula log density of each row of ``u`` (or of a single vector)."""
        u = np.asarray(u, dtype=float)
        out = self.logpdf_z(self.quantiles(np.atleast_2d(u)))
        return float(out[0]) if u.ndim == 1 else out


def _stack(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[-1] != b.shape[-1]:
        raise ValueError("both variables must be observed at the same locations")
    return np.concatenate([a, b], axis=-1)


def wstar_logpdf(w, design: SpatialDesign, spec: CovarianceSpec, loadings: FactorLoadings):
    """Log density of the common-factor part ``W*`` at the stacked vector ``w``.

    Only the common loadings ``(a10U, a20U)`` and ``(a10L, a20L)`` are used.
    """
    sigma = _sigma_for(design, spec)
    ws = WStarDensity(sigma, (design.n, design.n), loadings.upper0, loadings.lower0)
    return ws.logpdf(w)


def joint_logpdf(w1, w2, design: SpatialDesign, spec: CovarianceSpec,
                 loadings: FactorLoadings, nodes: int = DEFAULT_NODES):
    """Joint log density of ``(W_1, W_2)`` observed at the design locations."""
    sigma = _sigma_for(design, spec)
    jd = JointDensity(sigma, (design.n, design.n), loadings, nodes=nodes)
    return jd.logpdf(_stack(w1, w2))


def copula_logdensity(u1, u2, design: SpatialDesign, spec: CovarianceSpec,
                      loadings: FactorLoadings, nodes: int = DEFAULT_NODES):
    """Copula log density at scores ``u1`` (variable 1) and ``u2`` (variable 2)."""
    return CopulaModel(design, spec, loadings, nodes=nodes).logpdf(_stack(u1, u2))


def gaussian_copula_logdensity(u, sigma: CorrelationMatrix):
    """Closed-form Gaussian copula log density ``(z'(I - P)z - log det)/2``."""
    u = np.asarray(u, dtype=float)
    z = np.atleast_2d(ndtri(u))
    out = 0.5 * (np.sum(z * z, axis=1) - sigma.quad_form(z) - sigma.logdet)
    return float(out[0]) if u.ndim == 1 else out
