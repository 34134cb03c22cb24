"""Normal special functions, LMC correlation matrices and MVN primitives."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import linalg
from scipy.special import erfcx, log_ndtr, ndtr, roots_legendre


LOG_2PI = math.log(2.0 * math.pi)

# diagonal jitter ladder tried before declaring a matrix non-PD
JITTER_LADDER = (0.0, 1e-12, 1e-10, 1e-8)


class NotPositiveDefiniteError(ValueError):
    """Raised when a correlation matrix cannot be factorized even after jitter."""

    def __init__(self, min_eigenvalue: float):
        super().__init__(
            f"correlation matrix is not positive definite "
            f"(smallest eigenvalue {min_eigenvalue:.3e} after jitter up to "
            f"{JITTER_LADDER[-1]:g})"
        )
        self.min_eigenvalue = min_eigenvalue


def std_normal_cdf(z):
    """Standard normal CDF; saturates at 0 and 1 for infinite input."""
    return ndtr(z)


def log_std_normal_cdf(z):
    return log_ndtr(z)


@lru_cache(maxsize=8)
def _legendre01(n: int):
    x, w = roots_legendre(n)
    return x, w


def bvn_upper(h, k, r):
    """P(X > h, Y > k) for a standard bivariate normal with correlation ``r``.

    Vectorized version of Genz's BVNU algorithm (Drezner-Wesolowsky with
    Gauss-Legendre rules of 6, 12 or 20 points), accurate to about 1e-15
    absolute.
    """
    h, k, r = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (h, k, r)))
    out = np.empty(h.shape, dtype=float)
    if out.size == 0:
        return out
    # beyond 40 standard deviations every probability here is exactly 0 or 1
    h = np.clip(h.ravel(), -40.0, 40.0)
    k = np.clip(k.ravel(), -40.0, 40.0)
    r = r.ravel()
    res = out.reshape(-1)

    ar = np.abs(r)
    small = ar < 0.925
    tp = 2.0 * math.pi

    for lo, hi, npts in ((0.0, 0.3, 6), (0.3, 0.75, 12), (0.75, 0.925, 20)):
        sel = small & (ar >= lo) & (ar < hi)
        if not sel.any():
            continue
        x, w = _legendre01(npts)
        hh, kk, rr = h[sel], k[sel], r[sel]
        hk = hh * kk
        hs = 0.5 * (hh * hh + kk * kk)
        asr = 0.5 * np.arcsin(rr)
        sn = np.sin(asr[:, None] * (1.0 + x)[None, :])
        terms = np.exp((sn * hk[:, None] - hs[:, None]) / (1.0 - sn * sn))
        bvn = terms @ w * asr / tp + ndtr(-hh) * ndtr(-kk)
        res[sel] = bvn

    big = ~small
    if big.any():
        x, w = _legendre01(20)
        x = 1.0 + x
        hh, kk, rr = h[big], k[big].copy(), r[big]
        neg = rr < 0
        kk[neg] = -kk[neg]
        hk = hh * kk
        bvn = np.zeros_like(hh)
        inner = np.abs(rr) < 1.0
        if inner.any():
            hi_, ki_, hki = hh[inner], kk[inner], hk[inner]
            as_ = 1.0 - rr[inner] ** 2
            a = np.sqrt(as_)
            bs = (hi_ - ki_) ** 2
            asr = -(bs / as_ + hki) / 2.0
            c = (4.0 - hki) / 8.0
            d = (12.0 - hki) / 80.0
            part = np.where(
                asr > -100.0,
                a * np.exp(np.maximum(asr, -100.0))
                * (1.0 - c * (bs - as_) * (1.0 - d * bs) / 3.0 + c * d * as_ * as_),
                0.0,
            )
            b = np.sqrt(bs)
            sp = math.sqrt(tp) * ndtr(-b / a)
            part = np.where(
                hki > -100.0,
                part - np.exp(-np.minimum(hki, 100.0) / 2.0) * sp * b
                * (1.0 - c * bs * (1.0 - d * bs) / 3.0),
                part,
            )
            ah = a / 2.0
            xs = (ah[:, None] * x[None, :]) ** 2
            asr2 = -(bs[:, None] / xs + hki[:, None]) / 2.0
            ok = asr2 > -100.0
            spx = 1.0 + c[:, None] * xs * (1.0 + 5.0 * d[:, None] * xs)
            rs = np.sqrt(1.0 - xs)
            ep = np.exp(-(hki[:, None] / 2.0) * xs / (1.0 + rs) ** 2) / rs
            t = np.where(ok, np.exp(np.where(ok, asr2, 0.0)) * (spx - ep), 0.0) @ w
            bvn[inner] = (ah * t - part) / tp
        pos = ~neg
        bvn[pos] = bvn[pos] + ndtr(-np.maximum(hh[pos], kk[pos]))
        if neg.any():
            hn, kn, bn = hh[neg], kk[neg], bvn[neg]
            lower = np.where(hn < 0, ndtr(kn) - ndtr(hn), ndtr(-hn) - ndtr(-kn))
            bvn[neg] = np.where(hn >= kn, -bn, lower - bn)
        res[big] = bvn

    # exact branches
    res[np.isposinf(h) | np.isposinf(k)] = 0.0
    ninf_h = np.isneginf(h)
    ninf_k = np.isneginf(k)
    res[ninf_h & ~ninf_k] = ndtr(-k[ninf_h & ~ninf_k])
    res[ninf_k & ~ninf_h] = ndtr(-h[ninf_k & ~ninf_h])
    res[ninf_h & ninf_k] = 1.0
    np.clip(res, 0.0, 1.0, out=res)
    return out


def bvn_cdf(z1, z2, rho):
    """Bivariate standard normal CDF ``P(X <= z1, Y <= z2)`` with correlation ``rho``.

    Accepts scalars or broadcastable arrays; returns a float for scalar input.
    """
    rho_arr = np.asarray(rho, dtype=float)
    if not np.all(np.isfinite(rho_arr)):
        raise ValueError("rho must be finite")
    if np.any(np.abs(rho_arr) > 1.0):
        raise ValueError("|rho| must not exceed 1")
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    out = bvn_upper(-z1, -z2, rho_arr)
    # rho = +-1 are singular; handle exactly
    one = np.broadcast_to(rho_arr, out.shape)
    if np.any(np.abs(one) == 1.0):
        a, b = np.broadcast_arrays(z1, z2)
        comon = ndtr(np.minimum(a, b))
        counter = np.maximum(ndtr(a) + ndtr(b) - 1.0, 0.0)
        out = np.where(one == 1.0, comon, np.where(one == -1.0, counter, out))
    if out.ndim == 0:
        return float(out)
    return out


# below this the direct algorithm loses relative accuracy
_LOG_BVN_DIRECT_MIN = 1e-6


_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


def tilted_normal_expectation(theta, q):
    """``E[exp(theta V) Phi(q V)]`` for standard normal ``V``.

    Completing the square gives ``exp(theta^2/2) Phi(theta q / sqrt(1 + q^2))``;
    this is the moment identity used when the joint upper tail is reduced
    to one-dimensional integrals.
    """
    theta = np.asarray(theta, dtype=float)
    q = np.asarray(q, dtype=float)
    return np.exp(0.5 * theta * theta) * ndtr(theta * q / np.sqrt(1.0 + q * q))


def mills_ratio(g):
    """``phi(g) / Phi(g)``, free of cancellation for very negative ``g``."""
    return _SQRT_2_OVER_PI / erfcx(-np.asarray(g, dtype=float) / math.sqrt(2.0))


_TAIL_DROP = 38.0
_TAIL_NODES = 12
_TAIL_PIECES = 4
# the first piece ends this many times closer than the nearest drop bound
_TAIL_FIRST = 8.0


def _log_bvn_tail(a, b, r):
    """``log int_{-inf}^a phi(x) Phi((b - r x)/s) dx`` for ``a <= b``, ``a < 0``.

    The log integrand ``l`` has ``l'(a) = d >= 0`` and
    ``1 <= -l'' <= 1 + r^2/s^2`` here, so it peaks at ``a`` and the distance
    at which it has dropped by ``D`` is bracketed in closed form.  Pieces
    graded geometrically across that bracket carry fixed Gauss-Legendre rules.
    """
    s = np.sqrt(1.0 - r * r)
    g = (b - r * a) / s
    d = np.maximum(-a - (r / s) * mills_ratio(g), 0.0)
    curv = 1.0 + (r / s) ** 2
    far = 2.0 * _TAIL_DROP / (np.sqrt(d * d + 2.0 * _TAIL_DROP) + d)
    near = 2.0 * _TAIL_DROP / (np.sqrt(d * d + 2.0 * curv * _TAIL_DROP) + d)
    first = near / _TAIL_FIRST
    ratio = (far / first) ** (1.0 / (_TAIL_PIECES - 1))
    x, w = _legendre01(_TAIL_NODES)
    x = x[:, None]
    lw = np.log(w)[:, None]
    lo = np.zeros_like(a)
    hi = first
    vals = []
    for _ in range(_TAIL_PIECES):
        half = 0.5 * (hi - lo)
        xs = a - (lo + half * (x + 1.0))
        vals.append(-0.5 * xs * xs + log_ndtr((b - r * xs) / s) + lw + np.log(half))
        lo, hi = hi, hi * ratio
    vals = np.concatenate(vals)
    # the integrand is finite at every node, so a plain max shift suffices
    top = vals.max(axis=0)
    return top + np.log(np.sum(np.exp(vals - top), axis=0)) - 0.5 * LOG_2PI


def log_bvn_cdf(z1, z2, rho):
    """``log P(X <= z1, Y <= z2)`` that stays accurate deep in the lower tail.

    Uses :func:`bvn_cdf` where the probability is not small, otherwise
    integrates ``phi(x) Phi((z2 - rho x)/sqrt(1 - rho^2))`` over
    ``x <= z1`` in log space (the integrand is log-concave).
    """
    z1, z2, rho = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (z1, z2, rho)))
    scalar = z1.ndim == 0
    z1, z2, rho = (np.atleast_1d(a) for a in (z1, z2, rho))
    lo = np.minimum(z1, z2)
    # P <= Phi(min(z1, z2)), so those points need no direct evaluation
    sure = (ndtr(lo) < _LOG_BVN_DIRECT_MIN) & (np.abs(rho) < 1.0)
    out = np.empty(z1.shape)
    rest = ~sure
    if rest.any():
        direct = np.asarray(bvn_cdf(z1[rest], z2[rest], rho[rest]), dtype=float)
        with np.errstate(divide="ignore"):
            out[rest] = np.log(direct)
        # the boundary-mode bracket below needs min(z1, z2) <= 0
        small = (direct < _LOG_BVN_DIRECT_MIN) & (np.abs(rho[rest]) < 1.0) & (lo[rest] <= 0.0)
        sure[np.flatnonzero(rest)[small]] = True
    if sure.any():
        out[sure] = _log_bvn_tail(lo[sure], np.maximum(z1, z2)[sure], rho[sure])
    comon = rho == 1.0
    if comon.any():
        out[comon] = log_ndtr(np.minimum(z1, z2)[comon])
    return float(out[0]) if scalar else out


# --------------------------------------------------------------------------
# Spatial design and LMC covariance
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Location:
    id: int
    coords: tuple[float, ...]


@dataclass(frozen=True)
class SpatialDesign:
    """``p`` variables observed at the same ordered set of locations.

    The observation vector is stacked variable-major:
    ``(W_11, ..., W_1n, W_21, ..., W_2n, ...)``.
    """

    p: int
    locations: tuple[Location, ...]

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if not self.locations:
            raise ValueError("design needs at least one location")
        ids = [loc.id for loc in self.locations]
        if len(set(ids)) != len(ids):
            raise ValueError("location ids must be unique")
        dims = {len(loc.coords) for loc in self.locations}
        if len(dims) != 1:
            raise ValueError("all locations must share the same dimension")
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("location coordinates must be finite")

    @classmethod
    def from_coords(cls, coords, p: int = 2, ids: Sequence[int] | None = None):
        coords = np.asarray(coords, dtype=float)
        if coords.ndim == 1:
            coords = coords[:, None]
        if ids is None:
            ids = range(1, coords.shape[0] + 1)
        locs = tuple(Location(int(i), tuple(float(c) for c in row))
                     for i, row in zip(ids, coords))
        return cls(p=p, locations=locs)

    @classmethod
    def line(cls, n: int, p: int = 2, spacing: float = 1.0):
        """Locations ``0, spacing, ..., (n-1)*spacing`` on a line."""
        return cls.from_coords(np.arange(n, dtype=float)[:, None] * spacing, p=p)

    @classmethod
    def grid(cls, side: int, p: int = 2, extent: float = 1.0):
        """``side x side`` regular grid on ``[0, extent]^2``."""
        g = np.linspace(0.0, extent, side)
        xx, yy = np.meshgrid(g, g, indexing="ij")
        return cls.from_coords(np.column_stack([xx.ravel(), yy.ravel()]), p=p)

    @property
    def n(self) -> int:
        return len(self.locations)

    @property
    def dim(self) -> int:
        return self.p * self.n

    @property
    def coords(self) -> np.ndarray:
        return np.array([loc.coords for loc in self.locations], dtype=float)

    @property
    def ids(self) -> list[int]:
        return [loc.id for loc in self.locations]

    def distances(self) -> np.ndarray:
        return pairwise_distances(self.coords)

    def variable_index(self) -> np.ndarray:
        """Variable label (0-based) of each entry of the stacked vector."""
        return np.repeat(np.arange(self.p), self.n)

    def site_coords(self) -> np.ndarray:
        return np.tile(self.coords, (self.p, 1))


def pairwise_distances(a, b=None) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = a if b is None else np.atleast_2d(np.asarray(b, dtype=float))
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def powered_exponential(d, theta: float, power: float = 1.0):
    """``exp(-theta * d**power)``."""
    d = np.asarray(d, dtype=float)
    return np.exp(-theta * d ** power)


@dataclass(frozen=True)
class CovarianceSpec:
    """Linear model of coregionalization with powered-exponential components.

    ``Z_i(s) = sum_k A[i, k] Z~_k(s)`` where the ``Z~_k`` are independent unit
    variance fields with correlation ``exp(-theta_k d**power_k)``.  Rows of
    ``A`` must have unit norm so that ``Z`` has unit variance.
    """

    A: np.ndarray
    theta: tuple[float, ...]
    power: tuple[float, ...]

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "theta", tuple(float(t) for t in self.theta))
        object.__setattr__(self, "power", tuple(float(a) for a in self.power))
        r = A.shape[1]
        if len(self.theta) != r or len(self.power) != r:
            raise ValueError("need one (theta, power) pair per LMC component")
        if any(not t > 0 for t in self.theta):
            raise ValueError("theta must be positive")
        if any(not 0 < a <= 2 for a in self.power):
            raise ValueError("power must lie in (0, 2]")
        norms = np.sum(A * A, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-12):
            raise ValueError(f"LMC rows must have unit norm, got {norms}")

    @property
    def p(self) -> int:
        return self.A.shape[0]

    @classmethod
    def eq6(cls, rho: Sequence[float], theta: Sequence[float],
            power: Sequence[float] | None = None):
        """``Z_i = rho_i Z_0 + sqrt(1 - rho_i^2) Z_i*``.

        ``theta`` and ``power`` are ordered ``(common, variable 1, ..., variable p)``.
        """
        rho = np.asarray(rho, dtype=float)
        if np.any(np.abs(rho) > 1):
            raise ValueError("|rho_i| must not exceed 1")
        p = rho.size
        A = np.zeros((p, p + 1))
        A[:, 0] = rho
        A[np.arange(p), np.arange(p) + 1] = np.sqrt(1.0 - rho * rho)
        if power is None:
            power = (1.0,) * (p + 1)
        return cls(A=A, theta=tuple(theta), power=tuple(power))

    @classmethod
    def two_factor(cls, theta: Sequence[float], p: int = 2):
        """Equal-weight common/own split: ``Z_i = (Z_0 + Z_i*)/sqrt(2)``, exponential kernels."""
        return cls.eq6([math.sqrt(0.5)] * p, theta)

    def correlation(self, var_a, coords_a, var_b=None, coords_b=None) -> np.ndarray:
        """Correlation between sites ``(var_a[j], coords_a[j])`` and ``(var_b[k], coords_b[k])``."""
        var_a = np.asarray(var_a, dtype=int)
        if var_b is None:
            var_b, coords_b = var_a, coords_a
        var_b = np.asarray(var_b, dtype=int)
        d = pairwise_distances(coords_a, coords_b)
        out = np.zeros(d.shape)
        for k, (th, a) in enumerate(zip(self.theta, self.power)):
            w = np.outer(self.A[var_a, k], self.A[var_b, k])
            out += w * powered_exponential(d, th, a)
        return out


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    """Dense correlation matrix with an eagerly computed Cholesky factor."""

    matrix: np.ndarray
    jitter: float = 0.0
    chol: np.ndarray = field(init=False, repr=False)
    logdet: float = field(init=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("correlation matrix must be square")
        m = 0.5 * (m + m.T)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        chol = None
        used = 0.0
        for jit in JITTER_LADDER:
            try:
                chol = linalg.cholesky(m + jit * np.eye(m.shape[0]), lower=True)
                used = jit
                break
            except linalg.LinAlgError:
                continue
        if chol is None:
            raise NotPositiveDefiniteError(float(np.linalg.eigvalsh(m)[0]))
        chol.setflags(write=False)
        object.__setattr__(self, "chol", chol)
        object.__setattr__(self, "jitter", used)
        object.__setattr__(self, "logdet", float(2.0 * np.sum(np.log(np.diag(chol)))))

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def solve(self, b) -> np.ndarray:
        return linalg.cho_solve((self.chol, True), b)

    def inverse(self) -> np.ndarray:
        return self.solve(np.eye(self.size))

    def quad_form(self, x) -> np.ndarray:
        """``x^T Sigma^{-1} x`` for each row of ``x``."""
        x = np.atleast_2d(x)
        y = linalg.solve_triangular(self.chol, x.T, lower=True)
        return np.sum(y * y, axis=0)


def build_sigma_z(design: SpatialDesign, spec: CovarianceSpec) -> CorrelationMatrix:
    """Correlation matrix of the stacked Gaussian vector for ``design``."""
    if spec.p != design.p:
        raise ValueError(f"spec has {spec.p} variables, design has {design.p}")
    var = design.variable_index()
    sites = design.site_coords()
    return CorrelationMatrix(spec.correlation(var, sites))


def mvn_logpdf(x, sigma: CorrelationMatrix):
    """Log density of ``N(0, sigma)``; ``x`` may hold one vector per row."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    if x2.shape[1] != sigma.size:
        raise ValueError(f"x has dimension {x2.shape[1]}, sigma {sigma.size}")
    out = -0.5 * (sigma.size * LOG_2PI + sigma.logdet + sigma.quad_form(x2))
    return float(out[0]) if single else out
