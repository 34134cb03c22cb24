"""Univariate margin of ``W = Z + a0U*E0U + aU*EU - a0L*E0L - aL*EL``.

``Z`` is standard normal and the four ``E`` are independent unit
exponentials.  The law of the exponential part is a signed mixture of
one-sided exponentials, so the CDF and density reduce to sums of terms
``exp(0.5/a^2 - z/a) * Phi(z - 1/a)`` evaluated at ``+z`` or ``-z``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import erfcx, log_ndtr, logsumexp, ndtr, ndtri

# two loadings of the same sign closer than this are treated as equal
EPS_SING = 1e-6
# relative size of the perturbation applied to such a pair
PERTURBATION = 1e-5

QUANTILE_TOL = 1e-10
# loadings below this are treated as exactly zero
TINY = 1e-10
_ZMAX = 1e150


class SingularLoadingsError(ValueError):
    """``xi`` was asked to divide by a vanishing loading gap."""


class VariableLoadings(NamedTuple):
    """Factor loadings of one variable, in the order used throughout."""

    upper0: float  # alpha_{i0}^U, common upper factor
    upper: float   # alpha_i^U, variable-specific upper factor
    lower0: float  # alpha_{i0}^L
    lower: float   # alpha_i^L


@dataclass(frozen=True)
class FactorLoadings:
    """Loadings of all ``p`` variables; each field is a length-``p`` array."""

    upper0: np.ndarray
    upper: np.ndarray
    lower0: np.ndarray
    lower: np.ndarray

    def __post_init__(self):
        arrs = [np.atleast_1d(np.asarray(getattr(self, f), dtype=float))
                for f in ("upper0", "upper", "lower0", "lower")]
        if len({a.size for a in arrs}) != 1:
            raise ValueError("all loading vectors need the same length")
        for name, a in zip(("upper0", "upper", "lower0", "lower"), arrs):
            if np.any(~np.isfinite(a)) or np.any(a < 0):
                raise ValueError(f"loadings must be finite and nonnegative ({name}={a})")
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def p(self) -> int:
        return self.upper0.size

    @classmethod
    def from_vectors(cls, alpha_u: Sequence[float], alpha_l: Sequence[float]):
        """Build from the packed form ``(a10, a1, a20, a2, ...)`` per tail."""
        u = np.asarray(alpha_u, dtype=float).reshape(-1, 2)
        l = np.asarray(alpha_l, dtype=float).reshape(-1, 2)
        return cls(u[:, 0], u[:, 1], l[:, 0], l[:, 1])

    @classmethod
    def zeros(cls, p: int = 2):
        z = np.zeros(p)
        return cls(z, z, z, z)

    def to_vectors(self):
        alpha_u = np.column_stack([self.upper0, self.upper]).ravel()
        alpha_l = np.column_stack([self.lower0, self.lower]).ravel()
        return alpha_u, alpha_l

    def variable(self, i: int) -> VariableLoadings:
        return VariableLoadings(float(self.upper0[i]), float(self.upper[i]),
                                float(self.lower0[i]), float(self.lower[i]))

    def swapped(self):
        """Reverse the variable order."""
        return FactorLoadings(self.upper0[::-1], self.upper[::-1],
                              self.lower0[::-1], self.lower[::-1])

    def reflected(self):
        """Loadings of ``-W``: upper and lower factors exchange roles."""
        return FactorLoadings(self.lower0, self.lower, self.upper0, self.upper)

    def is_gaussian(self) -> bool:
        return not any(np.any(a > 0) for a in (self.upper0, self.upper, self.lower0, self.lower))


def _as_loadings(load) -> VariableLoadings:
    if isinstance(load, VariableLoadings):
        return load
    vals = [float(v) for v in load]
    if len(vals) != 4:
        raise ValueError("expected four loadings (a0U, aU, a0L, aL)")
    if any(v < 0 or not np.isfinite(v) for v in vals):
        raise ValueError(f"loadings must be finite and nonnegative, got {vals}")
    return VariableLoadings(*vals)


def _log_tilt(z, a):
    """``log[exp(0.5/a^2 - z/a) Phi(z - 1/a)]`` for ``a > 0``.

    Left of ``1/a`` the large exponents cancel exactly against the Gaussian
    tail, so the scaled complementary error function is used instead:
    ``-z^2/2 + log(erfcx((1/a - z)/sqrt 2) / 2)``.
    """
    z = np.asarray(z, dtype=float)
    x = z - 1.0 / a
    with np.errstate(over="ignore", invalid="ignore"):
        left = -0.5 * z * z + np.log(0.5 * erfcx(-x / np.sqrt(2.0)))
        right = 0.5 / (a * a) - z / a + log_ndtr(x)
    return np.where(x < 0, left, right)


def xi(z, aL, aU, a0L, a0U):
    """``aU^3 exp(0.5/aU^2 - z/aU) Phi(z - 1/aU) / ((a0L+aU)(aL+aU)(a0U-aU))``.

    Zero when ``aU == 0``.  Raises :class:`SingularLoadingsError` when
    ``|a0U - aU| <= EPS_SING``.
    """
    z = np.asarray(z, dtype=float)
    if aU == 0.0:
        return np.zeros_like(z) if z.ndim else 0.0
    gap = a0U - aU
    if abs(gap) <= EPS_SING:
        raise SingularLoadingsError(
            f"a0U={a0U!r} and aU={aU!r} are within {EPS_SING:g}; "
            "use the perturbed marginal (marginal_cdf) instead"
        )
    coef = aU ** 3 / ((a0L + aU) * (aL + aU) * gap)
    out = coef * np.exp(_log_tilt(z, aU))
    return float(out) if out.ndim == 0 else out


def _separate(a: float, b: float) -> tuple[float, float]:
    """Push apart a near-equal pair of same-signed loadings."""
    if a == b == 0.0 or abs(a - b) > EPS_SING:
        return a, b
    if a <= b:
        small, big = a, b
    else:
        small, big = b, a
    delta = PERTURBATION * (1.0 + big)
    if small - delta >= 0.0:
        small -= delta
    else:
        big += delta
    return (small, big) if a <= b else (big, small)


def regularize(load) -> VariableLoadings:
    """Loadings with the singular pairs ``(a0U, aU)``, ``(a0L, aL)`` separated."""
    # a factor of scale below TINY moves the CDF by less than TINY / sqrt(2 pi)
    a0U, aU, a0L, aL = (0.0 if v < TINY else v for v in _as_loadings(load))
    a0U, aU = _separate(a0U, aU)
    a0L, aL = _separate(a0L, aL)
    return VariableLoadings(a0U, aU, a0L, aL)


def _mixture(load):
    """Signed exponential components of the factor part.

    Returns ``(scales, weights, upper)`` where the density of the factor sum
    is ``sum_k weights[k] * Exp(scale_k)`` placed on the positive half-line
    when ``upper[k]`` and on the negative half-line otherwise.
    """
    a0U, aU, a0L, aL = regularize(load)
    scales, weights, upper = [], [], []
    # weight of an upper scale a: -(coefficient of xi(z; ...)) in the CDF
    for a, other_up, lows in ((aU, a0U, (a0L, aL)), (a0U, aU, (aL, a0L))):
        if a > 0:
            w = a ** 3 / ((a - other_up) * (a + lows[0]) * (a + lows[1]))
            scales.append(a)
            weights.append(w)
            upper.append(True)
    for a, other_lo, ups in ((aL, a0L, (a0U, aU)), (a0L, aL, (aU, a0U))):
        if a > 0:
            w = a ** 3 / ((a - other_lo) * (a + ups[0]) * (a + ups[1]))
            scales.append(a)
            weights.append(w)
            upper.append(False)
    return np.array(scales), np.array(weights), np.array(upper, dtype=bool)


def marginal_cdf_terms(z, load):
    """CDF written literally as ``Phi(z)`` plus the four signed ``xi`` terms.

    Kept as a cross-check of :func:`marginal_cdf`; near 1 it can lose
    monotonicity in the last bit.
    """
    a0U, aU, a0L, aL = regularize(load)
    z = np.asarray(z, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        out = (ndtr(z)
               + xi(z, aL, aU, a0L, a0U)
               - xi(-z, aU, aL, a0U, a0L)
               + xi(z, a0L, a0U, aL, aU)
               - xi(-z, a0U, a0L, aU, aL))
    out = np.where(np.isposinf(z), 1.0, np.where(np.isneginf(z), 0.0, out))
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def marginal_cdf(z, load):
    """CDF of the margin of ``W``.

    Algebraically the ``xi`` formula of :func:`marginal_cdf_terms`; each half
    is summed in log space from the tail it sits in, which keeps the result
    monotone and accurate far out.  Near-equal loading pairs are separated
    by :func:`regularize` first.
    """
    z = np.asarray(z, dtype=float)
    log_lo = _log_tail(z, load, upper_tail=False)
    log_hi = _log_tail(z, load, upper_tail=True)
    out = np.where(log_lo <= log_hi, np.exp(log_lo), -np.expm1(log_hi))
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def _log_tail(z, load, upper_tail: bool):
    """``log P(W > z)`` (upper) or ``log P(W <= z)`` (lower) without cancellation
    against 1; the Gaussian term is included as a unit-weight component."""
    # infinite z would give inf - inf inside the tilted terms
    z = np.clip(np.asarray(z, dtype=float), -_ZMAX, _ZMAX)
    scales, weights, upper = _mixture(load)
    if upper_tail:
        # P(W > z) = Phi(-z) + sum_up w M(z) - sum_low w M(-z)
        terms = [log_ndtr(-z)]
        signs = [1.0]
        for a, w, up in zip(scales, weights, upper):
            terms.append(_log_tilt(z if up else -z, a) + np.log(abs(w)))
            signs.append(np.sign(w) * (1.0 if up else -1.0))
    else:
        # P(W <= z) = Phi(z) - sum_up w M(z) + sum_low w M(-z)
        terms = [log_ndtr(z)]
        signs = [1.0]
        for a, w, up in zip(scales, weights, upper):
            terms.append(_log_tilt(z if up else -z, a) + np.log(abs(w)))
            signs.append(np.sign(w) * (-1.0 if up else 1.0))
    stack = np.stack(np.broadcast_arrays(*terms))
    b = np.array(signs).reshape((-1,) + (1,) * z.ndim)
    with np.errstate(divide="ignore", invalid="ignore"):
        val, sign = logsumexp(stack, axis=0, b=np.broadcast_to(b, stack.shape),
                              return_sign=True)
    return np.where(sign > 0, val, -np.inf)


def marginal_sf(z, load):
    """``1 - marginal_cdf``, accurate far in the upper tail."""
    out = np.exp(_log_tail(z, load, upper_tail=True))
    return float(out) if out.ndim == 0 else out


def marginal_logcdf(z, load):
    out = _log_tail(z, load, upper_tail=False)
    return float(out) if out.ndim == 0 else out


def marginal_logpdf(z, load):
    """Log density; a signed sum of ``M(+-z)/a`` terms combined in log space."""
    z = np.asarray(z, dtype=float)
    scales, weights, upper = _mixture(load)
    if scales.size == 0:
        out = -0.5 * z * z - 0.5 * np.log(2.0 * np.pi)
        return float(out) if out.ndim == 0 else out
    finite = np.isfinite(z)
    z = np.clip(z, -_ZMAX, _ZMAX)
    terms = [_log_tilt(z if up else -z, a) + np.log(abs(w) / a)
             for a, w, up in zip(scales, weights, upper)]
    stack = np.stack(np.broadcast_arrays(*terms))
    b = np.sign(weights).reshape((-1,) + (1,) * z.ndim)
    val, sign = logsumexp(stack, axis=0, b=np.broadcast_to(b, stack.shape),
                          return_sign=True)
    out = np.where((sign > 0) & finite, val, -np.inf)
    return float(out) if out.ndim == 0 else out


def marginal_pdf(z, load):
    out = np.exp(marginal_logpdf(z, load))
    return float(out) if np.ndim(out) == 0 else out


def _total_loading(load) -> float:
    return float(sum(_as_loadings(load)))


def marginal_quantile(u, load, tol: float = QUANTILE_TOL):
    """Inverse of :func:`marginal_cdf` by vectorized bisection plus Newton polish.

    The bracket starts at ``Phi^-1(u) -/+ 10 * sum(alpha)`` and is widened
    until it contains the root.
    """
    u = np.asarray(u, dtype=float)
    if np.any(~((u > 0) & (u < 1))):
        raise ValueError("quantile levels must lie strictly inside (0, 1)")
    load = regularize(load)
    flat = u.ravel()
    if not any(load):
        out = ndtri(flat)
        return float(out[0]) if u.ndim == 0 else out.reshape(u.shape)

    def resid(z):
        # compare in whichever tail keeps precision
        lower = flat <= 0.5
        with np.errstate(divide="ignore"):
            lo_val = marginal_logcdf(z, load) - np.log(flat)
            hi_val = np.log1p(-flat) - _log_tail(z, load, upper_tail=True)
        return np.where(lower, lo_val, hi_val)

    spread = 10.0 * _total_loading(load) + 1.0
    z0 = ndtri(flat)
    lo = z0 - spread
    hi = z0 + spread
    for _ in range(60):
        bad_lo = resid(lo) > 0
        bad_hi = resid(hi) < 0
        if not (bad_lo.any() or bad_hi.any()):
            break
        lo = np.where(bad_lo, lo - 2.0 * (hi - lo), lo)
        hi = np.where(bad_hi, hi + 2.0 * (hi - lo), hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        pos = resid(mid) > 0
        hi = np.where(pos, mid, hi)
        lo = np.where(pos, lo, mid)
        if np.max(hi - lo) < 1e-13 * (1.0 + np.max(np.abs(mid))):
            break
    z = 0.5 * (lo + hi)
    # one Newton step on the CDF for the last digits
    f = marginal_pdf(z, load)
    step = (marginal_cdf(z, load) - flat) / np.where(f > 0, f, np.inf)
    z_new = z - step
    z = np.where((z_new >= lo) & (z_new <= hi), z_new, z)
    return float(z[0]) if u.ndim == 0 else z.reshape(u.shape)


def factor_diff_pdf(v, aU, aL):
    """Density of ``aU*E1 - aL*E2``: ``exp(-v+/aU - (-v)+/aL)/(aU + aL)``."""
    if aU < 0 or aL < 0:
        raise ValueError("scales must be nonnegative")
    if aU + aL <= 0:
        raise ValueError("aU = aL = 0 is a point mass at 0, not a density")
    v = np.asarray(v, dtype=float)
    with np.errstate(divide="ignore"):
        pos = np.where(v >= 0, -v / aU if aU > 0 else np.where(v > 0, -np.inf, 0.0), 0.0)
        neg = np.where(v < 0, v / aL if aL > 0 else -np.inf, 0.0)
    out = np.exp(pos + neg) / (aU + aL)
    if aU == 0:
        out = np.where(v == 0, 0.0, out) if aL > 0 else out
    return float(out) if out.ndim == 0 else out
