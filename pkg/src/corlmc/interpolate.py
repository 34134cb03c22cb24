"""Conditional copula of one variable at a new location.

Given scores of both variables at the ``n`` design locations, the law of
variable ``i`` at an extra site has density

    c_{n+1}(u_obs, u0) / c_n(u_obs)

where ``c_{n+1}`` is the copula of the design extended by the new site for
variable ``i`` only.  Leaving the other variable's new coordinate out of the
extended design is the same as integrating it out (setting its score to 1),
but avoids evaluating a quantile at 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .density import CopulaModel, JointDensity
from .gaussian import CorrelationMatrix, CovarianceSpec, SpatialDesign
from .margins import FactorLoadings, marginal_cdf, marginal_logpdf, marginal_quantile

# tanh rule on (0, 1): u = (1 + tanh t)/2 on an equispaced t grid
TANH_POINTS = 64
TANH_HALF_WIDTH = 13.0
# log-density drop treated as negligible mass when placing panels
PANEL_DROP = 40.0
PANEL_NODES = 16
ZOOM_POINTS = 17
# convolution nodes; the fully active two-factor density is costly at 30
INTERP_NODES = 20
MEDIAN_TOL = 1e-8


class ConditionalLawError(FloatingPointError):
    pass


def tanh_rule(points: int = TANH_POINTS, half_width: float = TANH_HALF_WIDTH):
    """Nodes and weights on (0, 1) clustered at both endpoints.

    Trapezoid rule in ``t`` after ``u = (1 + tanh t)/2``; the Jacobian
    ``sech(t)^2 / 2`` decays like ``2 exp(-2|t|)``, so integrable endpoint
    spikes are resolved.
    """
    t = np.linspace(-half_width, half_width, points)
    h = t[1] - t[0]
    u = expit(2.0 * t)
    w = h * 2.0 * u * expit(-2.0 * t)
    return u, w


# marginal back-transform -----------------------------------------------------

@dataclass(frozen=True)
class MarginalModel:
    """Marginal distribution ``G_i`` used to return to the data scale.

    Either an empirical sample (type-7 interpolated quantiles) or a
    user-supplied inverse CDF.
    """

    sample: np.ndarray | None = None
    ppf: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if (self.sample is None) == (self.ppf is None):
            raise ValueError("give exactly one of an empirical sample or a ppf")
        if self.sample is not None:
            s = np.sort(np.asarray(self.sample, dtype=float).ravel())
            if s.size == 0:
                raise ValueError("empirical margin needs at least one training value")
            if not np.all(np.isfinite(s)):
                raise ValueError("training values must be finite")
            object.__setattr__(self, "sample", s)

    @classmethod
    def identity(cls) -> "MarginalModel":
        return cls(ppf=lambda u: np.asarray(u, dtype=float))

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if np.any((u < 0) | (u > 1)):
            raise ValueError("probabilities must lie in [0, 1]")
        if self.sample is not None:
            return np.quantile(self.sample, u, method="linear")
        return self.ppf(u)


def back_transform(u, G_hat: MarginalModel):
    """Map a probability (e.g. a predicted median score) to the data scale."""
    out = G_hat(u)
    return float(out) if np.ndim(out) == 0 else out


# request ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PredictionRequest:
    """Inputs of a pointwise prediction.

    Parameters
    ----------
    loadings, spec
        Fitted model (see :meth:`from_fit`).
    design
        The ``n`` observed locations.
    u
        Scores ``(u_1, u_2)`` stacked variable-major, length ``2n``.
    new_location
        Coordinates of the prediction site.
    target
        Variable to predict (0 or 1).
    G_hat
        Optional marginal model for :func:`back_transform`.
    """

    loadings: FactorLoadings
    spec: CovarianceSpec
    design: SpatialDesign
    u: np.ndarray
    new_location: np.ndarray
    target: int = 0
    G_hat: MarginalModel | None = None
    nodes: int = INTERP_NODES
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if self.design.p != 2 or self.loadings.p != 2:
            raise ValueError("prediction is implemented for p = 2")
        u = np.asarray(self.u, dtype=float).ravel()
        if u.size != self.design.dim:
            raise ValueError(f"expected {self.design.dim} scores, got {u.size}")
        if np.any(~(u > 0) | ~(u < 1)):
            raise ValueError("scores must lie strictly inside (0, 1)")
        object.__setattr__(self, "u", u)
        s0 = np.asarray(self.new_location, dtype=float).ravel()
        coords = self.design.coords
        if s0.size != coords.shape[1]:
            raise ValueError("new location has the wrong dimension")
        if np.any(np.all(coords == s0, axis=1)):
            raise ValueError("new location coincides with an observed location")
        object.__setattr__(self, "new_location", s0)
        if self.target not in (0, 1):
            raise ValueError("target must be 0 or 1")

    @classmethod
    def from_fit(cls, fit, design, u, new_location, target=0, G_hat=None, nodes=INTERP_NODES):
        return cls(fit.loadings, fit.spec, design, u, new_location, target, G_hat, nodes)

    def law(self) -> "ConditionalLaw":
        if "law" not in self._cache:
            self._cache["law"] = ConditionalLaw(self)
        return self._cache["law"]


def extended_sigma(design: SpatialDesign, spec: CovarianceSpec, new_location, target: int):
    """Correlation of ``Z`` over the design plus one site for ``target``.

    The new site is appended to the target's block, so the stacked order stays
    variable-major with block sizes ``(n+1, n)`` or ``(n, n+1)``.
    """
    n = design.n
    coords = design.coords
    var = np.repeat(np.arange(2), n)
    sites = np.tile(coords, (2, 1))
    pos = (target + 1) * n
    var = np.insert(var, pos, target)
    sites = np.insert(sites, pos, new_location, axis=0)
    sizes = (n + 1, n) if target == 0 else (n, n + 1)
    return CorrelationMatrix(spec.correlation(var, sites)), sizes, pos


class ConditionalLaw:
    """Tabulated conditional law of the target score at the new site.

    Work happens on the target's quantile scale ``z0``.  A pilot pass on the
    tanh rule locates the mode; composite Gauss-Legendre panels are then
    laid out geometrically around it until the log density has dropped by
    :data:`PANEL_DROP`.
    """

    def __init__(self, req: PredictionRequest):
        self.req = req
        L = req.loadings
        self.margin = L.variable(req.target)
        base = CopulaModel(req.design, req.spec, L, nodes=req.nodes)
        self.z_obs = base.quantiles(req.u)
        self.log_denom = float(base.joint.logpdf(self.z_obs))
        sigma, sizes, self.pos = extended_sigma(req.design, req.spec, req.new_location, req.target)
        self.joint = JointDensity(sigma, sizes, L, nodes=req.nodes)
        if not np.isfinite(self.log_denom):
            raise ConditionalLawError("observed-data density is not finite")
        self._build()

    # log density of Z0 | observed, on the quantile scale
    def log_density_z(self, z0):
        z0 = np.atleast_1d(np.asarray(z0, dtype=float))
        w = np.repeat(self.z_obs[None, :], z0.size, axis=0)
        w = np.insert(w, self.pos, z0, axis=1)
        return self.joint.logpdf(w) - self.log_denom

    def _build(self):
        u_p, _ = tanh_rule()
        z_p = marginal_quantile(u_p, self.margin)
        lp = self.log_density_z(z_p)
        if not np.any(np.isfinite(lp)):
            raise ConditionalLawError(
                f"conditional density underflows at every pilot node (log c_n = {self.log_denom:.6g})")
        k = int(np.nanargmax(lp))
        zmin, zmax = float(z_p[0]), float(z_p[-1])
        # zoom between the pilot neighbours of the best node
        zoom = np.linspace(z_p[max(k - 1, 0)], z_p[min(k + 1, z_p.size - 1)], ZOOM_POINTS)
        lz = self.log_density_z(zoom)
        j = int(np.nanargmax(lz))
        mode, peak = float(zoom[j]), float(lz[j])
        width = 1.0
        if 0 < j < ZOOM_POINTS - 1:
            h = zoom[1] - zoom[0]
            curv = -(lz[j + 1] - 2.0 * lz[j] + lz[j - 1]) / (h * h)
            if curv > 0:
                # a parabola through the three best points
                mode = mode + 0.5 * h * (lz[j + 1] - lz[j - 1]) / (h * h * curv)
                width = 1.0 / math.sqrt(curv)
        width = min(max(width, 1e-6), 10.0)
        self.mode, self.width = mode, width
        # geometric ladder of panel edges, cut where the density is negligible
        edges = [mode]
        for sign, cap in ((1.0, zmax), (-1.0, zmin)):
            ladder = []
            step = 0.5 * width
            while sign * (cap - (mode + sign * step)) > 0 and len(ladder) < 64:
                ladder.append(mode + sign * step)
                step *= 2.0
            ladder.append(cap)
            ladder = np.array(ladder)
            keep = ladder
            if ladder.size > 1:
                low = np.flatnonzero(self.log_density_z(ladder[:-1]) < peak - PANEL_DROP)
                if low.size:
                    keep = ladder[:low[0] + 1]
            edges.extend(keep.tolist())
        self.edges = np.unique(np.clip(edges, zmin, zmax))
        g, gw = np.polynomial.legendre.leggauss(PANEL_NODES)
        lo, hi = self.edges[:-1, None], self.edges[1:, None]
        half = 0.5 * (hi - lo)
        self.nodes = (half * g + 0.5 * (lo + hi)).ravel()
        self.weights = (half * gw).ravel()
        self.dens = np.exp(self.log_density_z(self.nodes))
        f = self.dens.reshape(-1, PANEL_NODES)
        # Legendre coefficients on each panel, then their antiderivative from -1
        P = np.polynomial.legendre.legvander(g, PANEL_NODES - 1)
        coef = (f * gw) @ P * (np.arange(PANEL_NODES) + 0.5)
        self._anti = np.polynomial.legendre.legint(coef.T, lbnd=-1) * half[:, 0]
        panel_mass = (self.weights.reshape(f.shape) * f).sum(axis=1)
        self.cum = np.concatenate([[0.0], np.cumsum(panel_mass)])
        self.total = float(self.cum[-1])

    # public API on the score scale -------------------------------------------
    def density(self, u0):
        """Conditional density of the target score (ratio of copula densities)."""
        u0 = np.asarray(u0, dtype=float)
        z0 = marginal_quantile(np.atleast_1d(u0), self.margin)
        out = np.exp(self.log_density_z(z0) - marginal_logpdf(z0, self.margin))
        return float(out[0]) if u0.ndim == 0 else out

    def _partial(self, j: int, z0: float) -> float:
        lo, hi = self.edges[j], self.edges[j + 1]
        x = (2.0 * z0 - lo - hi) / (hi - lo)
        return float(self.cum[j] + np.polynomial.legendre.legval(x, self._anti[:, j]))

    def cdf_z(self, z0: float) -> float:
        e = self.edges
        if z0 <= e[0]:
            return 0.0
        if z0 >= e[-1]:
            return min(self.total, 1.0)
        j = int(np.searchsorted(e, z0, side="right")) - 1
        return min(max(self._partial(j, z0), 0.0), 1.0)

    def cdf(self, u0):
        u0 = np.asarray(u0, dtype=float)
        if np.any((u0 < 0) | (u0 > 1)):
            raise ValueError("u0 must lie in [0, 1]")
        flat = []
        for v in np.atleast_1d(u0).ravel():
            if v <= 0:
                flat.append(0.0)
            elif v >= 1:
                flat.append(1.0)
            else:
                flat.append(self.cdf_z(float(marginal_quantile(v, self.margin))))
        out = np.array(flat).reshape(np.shape(u0))
        return float(out) if out.ndim == 0 else out

    def mean(self) -> float:
        """Conditional expectation of the target score."""
        return float(np.sum(self.weights * self.dens * marginal_cdf(self.nodes, self.margin)))

    def median(self, eps: float = 1e-12) -> float:
        """Score ``q`` with ``cdf(q) = 0.5``, by Brent's method on the panel
        containing it."""
        if not self.cum[0] < 0.5 < self.cum[-1]:
            raise ConditionalLawError(
                f"median is not bracketed by the tabulated support (mass {self.total:.6g})")
        j = int(np.searchsorted(self.cum, 0.5, side="right")) - 1
        z = brentq(lambda t: self._partial(j, t) - 0.5, self.edges[j], self.edges[j + 1],
                   xtol=1e-13, rtol=4 * np.finfo(float).eps)
        q = float(marginal_cdf(z, self.margin))
        if not eps < q < 1 - eps:
            raise ConditionalLawError(f"median score {q:.3g} is not inside ({eps}, {1 - eps})")
        return q


def conditional_cdf(req: PredictionRequest, u0):
    """``P(U0 <= u0 | observed scores)`` for the target variable."""
    return req.law().cdf(u0)


def conditional_density(req: PredictionRequest, u0):
    return req.law().density(u0)


def conditional_summaries(req: PredictionRequest) -> tuple[float, float]:
    """Conditional mean and median of the target score."""
    law = req.law()
    return law.mean(), law.median()


def predict_median(req: PredictionRequest):
    """Conditional median mapped to the data scale through ``req.G_hat``."""
    if req.G_hat is None:
        raise ValueError("request carries no marginal model")
    return back_transform(req.law().median(), req.G_hat)
