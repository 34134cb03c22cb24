"""Pseudo log-likelihood on rank scores and maximum pseudo-likelihood fitting."""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize, stats

from .data import as_array, uniform_scores
from .density import CopulaModel, DegenerateDensityError, QuadratureError
from .gaussian import CovarianceSpec, NotPositiveDefiniteError, SpatialDesign
from .margins import FactorLoadings
from .quadrature import DEFAULT_NODES

__all__ = [
    "LOADING_NAMES", "ALPHA2_FIXED", "COMMON_ONLY", "ALL_FREE", "GAUSSIAN",
    "FitConfig", "FitResult", "LikelihoodError", "LRTest",
    "uniform_scores", "pseudo_loglik", "fit", "select_variable_order", "lr_test",
    "gaussian_start",
]

# packed order of the eight loadings of a bivariate model
LOADING_NAMES = ("a10U", "a1U", "a20U", "a2U", "a10L", "a1L", "a20L", "a2L")
ALL_FREE = (True,) * 8
ALPHA2_FIXED = (True, True, True, False, True, True, True, False)
COMMON_ONLY = (True, False, True, False, True, False, True, False)
GAUSSIAN = (False,) * 8

# replicates per likelihood work unit; fixed so the sum does not depend on threads
CHUNK = 256


class LikelihoodError(ArithmeticError):
    """The copula density failed for some replicate."""


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("CORLMC_THREADS", "1")))
    except ValueError:
        return 1


def loadings_from_packed(x: Sequence[float]) -> FactorLoadings:
    x = np.asarray(x, dtype=float)
    return FactorLoadings.from_vectors(x[:4], x[4:])


def packed_loadings(load: FactorLoadings) -> np.ndarray:
    u, l = load.to_vectors()
    return np.concatenate([u, l])


def pseudo_loglik_terms(scores, design: SpatialDesign, spec: CovarianceSpec,
                        loadings: FactorLoadings, nodes: int = DEFAULT_NODES,
                        model: CopulaModel | None = None) -> np.ndarray:
    """Copula log density of every replicate."""
    u = np.atleast_2d(as_array(scores))
    if model is None:
        model = CopulaModel(design, spec, loadings, nodes=nodes)
    z = model.quantiles(u)
    starts = range(0, u.shape[0], CHUNK)

    def one(s):
        try:
            return model.logpdf_z(z[s:s + CHUNK])
        except (QuadratureError, DegenerateDensityError, FloatingPointError) as exc:
            raise LikelihoodError(f"replicates {s}..{min(s + CHUNK, u.shape[0]) - 1}: {exc}") from exc

    workers = _threads()
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(one, starts))
    else:
        parts = [one(s) for s in starts]
    return np.concatenate(parts)


def pseudo_loglik(scores, design: SpatialDesign, spec: CovarianceSpec,
                  loadings: FactorLoadings, nodes: int = DEFAULT_NODES) -> float:
    """Sum over replicates of the copula log density at the scores."""
    # np.sum reduces pairwise in a fixed order
    return float(np.sum(pseudo_loglik_terms(scores, design, spec, loadings, nodes)))


# parameters ---------------------------------------------------------------

@dataclass(frozen=True)
class FitConfig:
    """What to estimate and how.

    Parameters
    ----------
    free
        Eight flags in :data:`LOADING_NAMES` order; fixed loadings are 0.
    covariance
        ``"two_factor"``: ``Z_i = (Z_0 + Z_i*)/sqrt(2)`` with rates
        ``theta = (theta_0, theta_1, theta_2)``.  ``"lmc"``:
        ``Z_i = rho_i Z_0 + sqrt(1 - rho_i^2) Z_i*`` with the ``rho_i`` free.
    fit_power
        Also estimate the powered-exponential exponents (logit of ``a/2``).
    power
        Exponents used when they are held fixed.
    start_loadings, start_theta, start_rho
        Optional starting values; by default free loadings start at 0.5 and
        ``theta`` (and ``rho``) come from :func:`gaussian_start`.
    restarts
        Simplex restarts from the best point after the first run.
    """

    free: tuple[bool, ...] = ALPHA2_FIXED
    covariance: str = "two_factor"
    fit_power: bool = False
    power: tuple[float, ...] = (1.0, 1.0, 1.0)
    start_loadings: tuple[float, ...] | None = None
    start_theta: tuple[float, ...] | None = None
    start_rho: tuple[float, ...] | None = None
    start_power: tuple[float, ...] | None = None
    restarts: int = 2
    max_evals: int = 3000
    tol: float = 1e-6
    step: float = 0.4
    nodes: int = DEFAULT_NODES

    def __post_init__(self):
        object.__setattr__(self, "free", tuple(bool(f) for f in self.free))
        if len(self.free) != 8:
            raise ValueError("free needs one flag per loading (8)")
        if self.covariance not in ("two_factor", "lmc"):
            raise ValueError(f"unknown covariance family {self.covariance!r}")
        if len(self.power) != 3:
            raise ValueError("need three exponents (common, variable 1, variable 2)")

    @property
    def n_free(self) -> int:
        n = sum(self.free) + 3
        if self.covariance == "lmc":
            n += 2
        if self.fit_power:
            n += 3
        return n


def make_spec(config: FitConfig, theta, rho=None, power=None) -> CovarianceSpec:
    power = config.power if power is None else power
    if config.covariance == "two_factor":
        rho = (math.sqrt(0.5), math.sqrt(0.5))
    return CovarianceSpec.eq6(rho, theta, power)


class _Params:
    """Map between an unconstrained vector and model parameters."""

    def __init__(self, config: FitConfig):
        self.config = config
        self.idx = [i for i, f in enumerate(config.free) if f]

    def pack(self, loadings, theta, rho, power):
        c = self.config
        x = [math.log(max(loadings[i], 1e-8)) for i in self.idx]
        x += [math.log(t) for t in theta]
        if c.covariance == "lmc":
            x += [math.atanh(float(np.clip(r, -0.999999, 0.999999))) for r in rho]
        if c.fit_power:
            x += [math.log(a / (2.0 - a)) for a in power]
        return np.array(x)

    def unpack(self, x):
        c = self.config
        x = np.asarray(x, dtype=float)
        k = len(self.idx)
        alpha = np.zeros(8)
        alpha[self.idx] = np.exp(x[:k])
        theta = np.exp(x[k:k + 3])
        pos = k + 3
        rho = None
        if c.covariance == "lmc":
            rho = np.tanh(x[pos:pos + 2])
            pos += 2
        power = None
        if c.fit_power:
            power = 2.0 / (1.0 + np.exp(-x[pos:pos + 3]))
        return alpha, theta, rho, power


def gaussian_start(scores, design: SpatialDesign, config: FitConfig):
    """Covariance parameters of the Gaussian submodel matched to the data.

    Spearman correlations are mapped to normal-copula correlations with
    ``2 sin(pi rho_S / 6)`` and the LMC correlation is fitted to them by
    least squares.  Returns ``(theta, rho)``.
    """
    u = as_array(scores)
    r_s = np.corrcoef(u, rowvar=False)
    target = 2.0 * np.sin(np.pi * r_s / 6.0)
    iu = np.triu_indices_from(target, k=1)
    power = config.power
    lmc = config.covariance == "lmc"

    def resid(y):
        theta = np.exp(y[:3])
        rho = np.tanh(y[3:5]) if lmc else None
        spec = make_spec(config, theta, rho, power)
        sig = spec.correlation(design.variable_index(), design.site_coords())
        return (sig - target)[iu]

    d = design.distances()
    typical = float(np.median(d[d > 0])) if np.any(d > 0) else 1.0
    y0 = np.full(3, math.log(1.0 / typical))
    if lmc:
        y0 = np.concatenate([y0, np.full(2, math.atanh(math.sqrt(0.5)))])
    sol = optimize.least_squares(resid, y0, method="lm" if resid(y0).size >= y0.size else "trf")
    theta = tuple(float(t) for t in np.clip(np.exp(sol.x[:3]), 1e-3, 1e3))
    rho = tuple(float(r) for r in np.tanh(sol.x[3:5])) if lmc else None
    return theta, rho


@dataclass
class FitResult:
    """Outcome of :func:`fit`."""

    loadings: FactorLoadings
    spec: CovarianceSpec
    theta: tuple[float, ...]
    rho: tuple[float, ...] | None
    power: tuple[float, ...]
    free: tuple[bool, ...]
    loglik: float
    start_loglik: float
    n_params: int
    evaluations: int
    iterations: int
    converged: bool
    wall_time: float
    trace: list[tuple[int, float]] = field(default_factory=list, repr=False)
    config: FitConfig | None = field(default=None, repr=False)

    @property
    def constrained(self) -> tuple[bool, ...]:
        return tuple(not f for f in self.free)

    def to_dict(self) -> dict:
        alpha_u, alpha_l = self.loadings.to_vectors()
        return {
            "alpha_U": [float(a) for a in alpha_u],
            "alpha_L": [float(a) for a in alpha_l],
            "theta": list(self.theta),
            "rho": None if self.rho is None else list(self.rho),
            "power": list(self.power),
            "constrained": {n: c for n, c in zip(LOADING_NAMES, self.constrained)},
            "loglik": self.loglik,
            "start_loglik": self.start_loglik,
            "n_params": self.n_params,
            "evaluations": self.evaluations,
            "iterations": self.iterations,
            "converged": self.converged,
            "wall_time": self.wall_time,
        }


def _simplex(x0, step):
    n = x0.size
    pts = np.tile(x0, (n + 1, 1))
    pts[1:] += step * np.eye(n)
    return pts


def fit(scores, design: SpatialDesign, config: FitConfig | None = None) -> FitResult:
    """Maximize the pseudo log-likelihood by restarted Nelder-Mead.

    Loadings, rates and exponents are optimized on log / logit scales and
    LMC weights on the ``atanh`` scale.  Fixed loadings stay exactly 0.
    The result never has a lower log-likelihood than the starting point.
    """
    config = config or FitConfig()
    if design.p != 2:
        raise ValueError("fitting is implemented for p = 2")
    u = as_array(scores)
    if u.shape[1] != design.dim:
        raise ValueError(f"scores have {u.shape[1]} columns, design needs {design.dim}")
    t0 = time.perf_counter()
    pm = _Params(config)

    theta0, rho0 = gaussian_start(u, design, config)
    if config.start_theta is not None:
        theta0 = tuple(config.start_theta)
    if config.start_rho is not None:
        rho0 = tuple(config.start_rho)
    if config.covariance == "lmc" and rho0 is None:
        rho0 = (math.sqrt(0.5),) * 2
    power0 = tuple(config.start_power or config.power)
    if config.start_loadings is not None:
        a0 = np.asarray(config.start_loadings, dtype=float)
    else:
        a0 = np.full(8, 0.5)
    a0 = np.where(config.free, a0, 0.0)
    x0 = pm.pack(a0, theta0, rho0, power0)

    trace: list[tuple[int, float]] = []
    best = {"f": math.inf, "x": x0}
    count = [0]

    def negll(x):
        count[0] += 1
        alpha, theta, rho, power = pm.unpack(x)
        try:
            spec = make_spec(config, theta, rho, power)
            val = -pseudo_loglik(u, design, spec, loadings_from_packed(alpha), config.nodes)
        except (LikelihoodError, NotPositiveDefiniteError, DegenerateDensityError, ValueError,
                FloatingPointError, np.linalg.LinAlgError):
            val = math.inf
        if not math.isfinite(val):
            val = math.inf
        if val < best["f"]:
            best["f"], best["x"] = val, np.array(x)
            trace.append((count[0], -val))
        return val

    f0 = negll(x0)
    if not math.isfinite(f0):
        raise LikelihoodError("pseudo log-likelihood is not finite at the starting point")
    x = x0
    iters = 0
    converged = False
    step = config.step
    for run in range(config.restarts + 1):
        before = best["f"]
        res = optimize.minimize(
            negll, x, method="Nelder-Mead",
            options={"initial_simplex": _simplex(x, step), "maxfev": config.max_evals,
                     "fatol": config.tol, "xatol": 1e-5, "adaptive": x.size > 4})
        iters += int(res.nit)
        x = best["x"]
        converged = bool(res.status == 0)
        if run > 0 and before - best["f"] < config.tol:
            break
        step *= 0.5

    alpha, theta, rho, power = pm.unpack(best["x"])
    power = tuple(float(a) for a in (power if power is not None else config.power))
    spec = make_spec(config, theta, rho, power)
    return FitResult(
        loadings=loadings_from_packed(alpha), spec=spec,
        theta=tuple(float(t) for t in theta),
        rho=None if rho is None else tuple(float(r) for r in rho),
        power=power, free=config.free, loglik=-best["f"], start_loglik=-f0,
        n_params=config.n_free, evaluations=count[0], iterations=iters,
        converged=converged, wall_time=time.perf_counter() - t0, trace=trace,
        config=config)


def select_variable_order(scores, design: SpatialDesign, config: FitConfig | None = None):
    """Fit both variable orders and keep the better one.

    Returns ``(result, order)`` where ``order`` is ``(0, 1)`` for the input
    order and ``(1, 0)`` when the swapped data fit strictly better.  The
    swapped result's parameters refer to the swapped variable order.
    """
    config = config or FitConfig()
    u = as_array(scores)
    n = design.n
    swapped = np.concatenate([u[:, n:], u[:, :n]], axis=1)
    fits = []
    for data in (u, swapped):
        try:
            fits.append(fit(data, design, config))
        except LikelihoodError:
            fits.append(None)
    if fits[0] is None and fits[1] is None:
        raise LikelihoodError("both variable orders failed to fit")
    if fits[0] is None:
        return fits[1], (1, 0)
    if fits[1] is not None and fits[1].loglik > fits[0].loglik:
        return fits[1], (1, 0)
    return fits[0], (0, 1)


@dataclass(frozen=True)
class LRTest:
    statistic: float
    critical: float
    df: int
    p_value: float

    @property
    def significant(self) -> bool:
        return self.statistic > self.critical


def lr_test(full, nested, df: int, level: float = 0.95, tol: float = 1e-6) -> LRTest:
    """Likelihood-ratio test of a nested fit against a full fit.

    ``full`` and ``nested`` may be :class:`FitResult` objects or plain
    log-likelihood values.
    """
    lf = float(getattr(full, "loglik", full))
    ln = float(getattr(nested, "loglik", nested))
    if df < 1:
        raise ValueError("df must be positive")
    stat = 2.0 * (lf - ln)
    if stat < -tol:
        raise ValueError(f"nested log-likelihood exceeds the full one by {-stat / 2:.3g}: "
                         "the optimizer did not reach the full model's maximum")
    stat = max(stat, 0.0)
    return LRTest(statistic=stat, critical=float(stats.chi2.ppf(level, df)), df=int(df),
                  p_value=float(stats.chi2.sf(stat, df)))
