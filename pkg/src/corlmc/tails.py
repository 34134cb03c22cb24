"""Tail dependence: closed-form limits, a numeric limit oracle, empirical
tail-weighted measures and goodness-of-fit summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.special import log_ndtr, ndtr

from .data import as_array, uniform_scores
from .gaussian import bvn_cdf, log_bvn_cdf
from .margins import FactorLoadings

GAMMA = 6.0
Q_GRID = (0.01, 0.05, 0.10)
MIN_QUADRANT = 20


class TailBoundaryError(ValueError):
    """``delta_i = 1``, where the limit formula has no case."""


def lambda_within(rho, alpha_tilde):
    """``2 Phi(-sqrt((1 - rho)/2) / alpha_tilde)``: tail coefficient of two
    locations of one variable with latent correlation ``rho``."""
    rho = np.asarray(rho, dtype=float)
    a = np.asarray(alpha_tilde, dtype=float)
    if np.any(np.abs(rho) > 1) or np.any(a < 0):
        raise ValueError("need |rho| <= 1 and alpha_tilde >= 0")
    gap = np.sqrt(np.maximum(1.0 - rho, 0.0) / 2.0)
    # a subnormal loading overflows to -inf, the correct limit
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        arg = np.where(a > 0, -gap / np.where(a > 0, a, 1.0), -np.inf)
    arg = np.where(gap == 0, 0.0, arg)
    out = 2.0 * ndtr(arg)
    return float(out) if out.ndim == 0 else out


def husler_reiss_stdf(x1, x2, lam):
    """Stable tail dependence function of the Husler-Reiss law."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    r = np.log(x1 / x2)
    return x1 * ndtr(lam / 2.0 + r / lam) + x2 * ndtr(lam / 2.0 - r / lam)


@dataclass(frozen=True)
class TailLimitContext:
    """Constants of the upper-tail limit for the cross pair ``(W_1j, W_2j)``."""

    delta1: float
    delta2: float
    delta12: float
    delta1_star: float
    delta2_star: float
    y1: float
    y2: float
    rho12: float


def _upper_pairs(loadings):
    if isinstance(loadings, FactorLoadings):
        return (float(loadings.upper0[0]), float(loadings.upper[0]),
                float(loadings.upper0[1]), float(loadings.upper[1]))
    a = [float(v) for v in loadings]
    if len(a) != 4:
        raise ValueError("expected upper loadings (a10, a1, a20, a2)")
    return tuple(a)


def rho12(a10: float, a20: float, rho_z: float) -> float:
    """``sqrt(a10^2 - 2 rho a10 a20 + a20^2) / (a10 a20)``."""
    return math.sqrt(max(a10 * a10 - 2.0 * rho_z * a10 * a20 + a20 * a20, 0.0)) / (a10 * a20)


def tail_limit_context(x1: float, x2: float, loadings, rho_z: float) -> TailLimitContext:
    a10, a1, a20, a2 = _upper_pairs(loadings)
    if a10 <= 0 or a20 <= 0:
        raise ValueError("both common upper loadings must be positive")
    d1 = a10 / a1 if a1 > 0 else math.inf
    d2 = a20 / a2 if a2 > 0 else math.inf
    d12 = d1 + d2
    for d in (d1, d2):
        if d == 1.0:
            raise TailBoundaryError("delta_i = 1 is excluded by the limit theorem")
    ds1 = ds2 = math.nan
    if min(d1, d2) > 1:
        ds1 = 1.0 / (d1 - 1.0) - 1.0 / (d12 - 1.0)
        ds2 = 1.0 / (d2 - 1.0) - 1.0 / (d12 - 1.0)
    y1 = x1 * (1.0 - 1.0 / d1)
    y2 = x2 * (1.0 - 1.0 / d2)
    return TailLimitContext(d1, d2, d12, ds1, ds2, y1, y2, rho12(a10, a20, rho_z))


def _cross_term(yi, yj, di, dstar, r):
    """``yi^di yj^(1-di) d* exp(di(di-1) r^2/2) Phi(r(1/2-di) + log(yj/yi)/r)`` in logs."""
    log = (di * math.log(yi) + (1.0 - di) * math.log(yj) + math.log(dstar)
           + 0.5 * di * (di - 1.0) * r * r + log_ndtr(r * (0.5 - di) + math.log(yj / yi) / r))
    return math.exp(log)


def stable_tail_exponential(x1: float, x2: float, loadings, rho_z: float) -> float:
    """Upper stable tail dependence function of the cross pair.

    Only the upper loadings enter (lower loadings are taken as zero).
    Returns ``x1 + x2`` when ``min(delta1, delta2) < 1``.  With no
    variable-specific upper factors the limit is Husler-Reiss.
    """
    if not (x1 > 0 and x2 > 0):
        raise ValueError("x1 and x2 must be positive")
    ctx = tail_limit_context(x1, x2, loadings, rho_z)
    if min(ctx.delta1, ctx.delta2) < 1:
        return x1 + x2
    r = ctx.rho12
    if r == 0:
        return max(x1, x2)
    if math.isinf(ctx.delta1) and math.isinf(ctx.delta2):
        return float(husler_reiss_stdf(x1, x2, r))
    d1, d2, y1, y2 = ctx.delta1, ctx.delta2, ctx.y1, ctx.y2
    # delta y / (delta - 1) = x
    out = x1 * ndtr(r / 2 + math.log(y1 / y2) / r) + x2 * ndtr(r / 2 + math.log(y2 / y1) / r)
    if math.isfinite(d2):
        out += _cross_term(y2, y1, d2, ctx.delta2_star, r)
    if math.isfinite(d1):
        out += _cross_term(y1, y2, d1, ctx.delta1_star, r)
    return float(out)


# numeric limit ------------------------------------------------------------

def _asymptotic_threshold(a0: float, a: float, x: float, n: float) -> float:
    """Marginal level exceeded with probability about ``x/n``."""
    if a == 0:
        return 0.5 / a0 + a0 * math.log(n / x)
    star = max(a0, a)
    gap = abs(a0 - a)
    if gap == 0:
        raise TailBoundaryError("equal common and specific loadings")
    return 0.5 / star + star * math.log(star / gap) - star * math.log(x) + star * math.log(n)


def stable_tail_numeric(x1: float, x2: float, loadings, rho_z: float, n: float,
                        thresholds: str = "asymptotic") -> float:
    """``l_n = n[1 - F(z1, z2)]`` by quadrature over the common factor.

    The variable-specific factors are integrated out by parts, leaving a
    one-dimensional integral of bivariate normal CDFs per term.  Thresholds
    are either the leading-order tail quantiles (``"asymptotic"``) or the
    exact marginal quantiles of ``1 - x/n`` (``"exact"``).
    """
    a10, a1, a20, a2 = _upper_pairs(loadings)
    r = float(rho_z)
    if thresholds == "asymptotic":
        z1 = _asymptotic_threshold(a10, a1, x1, n)
        z2 = _asymptotic_threshold(a20, a2, x2, n)
    elif thresholds == "exact":
        from .margins import marginal_quantile
        z1 = float(marginal_quantile(1.0 - x1 / n, (a10, a1, 0.0, 0.0)))
        z2 = float(marginal_quantile(1.0 - x2 / n, (a20, a2, 0.0, 0.0)))
    else:
        raise ValueError("thresholds must be 'asymptotic' or 'exact'")

    def union(v):
        # 1 - Phi_r(a, b) = Phi(-a) + Phi(-b) - Phi_r(-a, -b)
        a = z1 - a10 * v
        b = z2 - a20 * v
        return (ndtr(-a) + ndtr(-b) - bvn_cdf(-a, -b, r)) * math.exp(-v)

    terms = [union]
    if a2 > 0:
        def t1(v):
            lg = (log_bvn_cdf(z1 - a10 * v - r / a2, z2 - a20 * v - 1.0 / a2, r)
                  + (a20 / a2 - 1.0) * v + 0.5 / a2 ** 2 - z2 / a2)
            return math.exp(lg)
        terms.append(t1)
    if a1 > 0:
        def t2(v):
            lg = (log_bvn_cdf(z1 - a10 * v - 1.0 / a1, z2 - a20 * v - r / a1, r)
                  + (a10 / a1 - 1.0) * v + 0.5 / a1 ** 2 - z1 / a1)
            return math.exp(lg)
        terms.append(t2)
    if a1 > 0 and a2 > 0:
        rs2 = (a1 * a1 + 2.0 * r * a1 * a2 + a2 * a2) / (a1 * a2) ** 2

        def t12(v):
            lg = (log_bvn_cdf(z1 - a10 * v - 1.0 / a1 - r / a2,
                              z2 - a20 * v - r / a1 - 1.0 / a2, r)
                  + (a10 / a1 + a20 / a2 - 1.0) * v + 0.5 * rs2 - z1 / a1 - z2 / a2)
            return -math.exp(lg)
        terms.append(t12)

    # mass sits near the level where the common factor reaches the thresholds
    centre = max(z1 / a10 if a10 > 0 else 0.0, z2 / a20 if a20 > 0 else 0.0)
    brk = sorted({0.0, *[c for c in (z1 / a10, z2 / a20, centre) if c > 0]})
    total = 0.0
    for f in terms:
        edges = brk + [brk[-1] + 60.0]
        part = 0.0
        for lo, hi in zip(edges[:-1], edges[1:]):
            val, _ = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=1e-11, limit=400)
            part += val
        val, _ = integrate.quad(f, edges[-1], np.inf, epsabs=0.0, epsrel=1e-11, limit=200)
        total += part + val
    return n * total


# Pareto factors ------------------------------------------------------------

def _pareto_theta_star(a0: float, a1: float, k: float) -> float:
    if not a0 > 0:
        raise ValueError("the common loading must be positive")
    if not k > 1:
        raise ValueError("Pareto shape k must exceed 1")
    return 1.0 / (1.0 + (a1 / a0) ** k)


def stable_tail_pareto(x1: float, x2: float, loadings, k: float) -> float:
    """``x1 + x2 - min(t1* x1, t2* x2)`` with ``ti* = 1/(1 + (ai/ai0)^k)``."""
    a10, a1, a20, a2 = _upper_pairs(loadings)
    t1 = _pareto_theta_star(a10, a1, k)
    t2 = _pareto_theta_star(a20, a2, k)
    return float(x1 + x2 - min(t1 * x1, t2 * x2))


def marshall_olkin_copula(u1, u2, t1: float, t2: float):
    """``u1 u2 min(u1^-t1, u2^-t2)``."""
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    return u1 * u2 * np.minimum(u1 ** -t1, u2 ** -t2)


def lambda_pareto_within(alpha0: float, alpha1: float, k: float) -> float:
    """Upper tail coefficient ``1/(1 + (alpha1/alpha0)^k)`` with Pareto noise."""
    return _pareto_theta_star(alpha0, alpha1, k)


def nugget_pareto(alpha0: float, alpha1: float, k: float) -> float:
    """Share of variance from location-specific Pareto noise (``k > 2``)."""
    if not k > 2:
        raise ValueError("the nugget needs finite variance: k > 2")
    return alpha1 ** 2 / ((k - 1.0) ** 2 * (1.0 - 2.0 / k) + alpha0 ** 2 + alpha1 ** 2)


# tail-weighted measures ----------------------------------------------------

def _tail_transform(u, tail: str, gamma: float):
    u = np.asarray(u, dtype=float)
    if tail == "L":
        inside = u < 0.5
        t = 1.0 - 2.0 * u
    elif tail == "U":
        inside = u > 0.5
        t = 2.0 * u - 1.0
    else:
        raise ValueError("tail must be 'L' or 'U'")
    return np.where(inside, t, 0.0) ** gamma, inside


def tail_weighted_matrix(u, tail: str, gamma: float = GAMMA, return_counts: bool = False):
    """Tail-weighted correlations between all column pairs of ``u``.

    For a pair, the columns are mapped by ``(1 - 2u)^gamma`` (``L``) or
    ``(2u - 1)^gamma`` (``U``) and correlated over the replicates in the
    joint tail quadrant.
    """
    u = np.asarray(u, dtype=float)
    a, inside = _tail_transform(u, tail, gamma)
    m = inside.astype(float)
    cnt = m.T @ m
    sx = a.T @ m            # [j, k]: sum of a_j over the joint quadrant of (j, k)
    sxx = (a * a).T @ m
    sxy = a.T @ a
    with np.errstate(invalid="ignore", divide="ignore"):
        mx = sx / cnt
        my = sx.T / cnt
        cov = sxy / cnt - mx * my
        vx = sxx / cnt - mx * mx
        vy = sxx.T / cnt - my * my
        out = cov / np.sqrt(vx * vy)
    out = np.where(cnt >= 2, out, np.nan)
    return (out, cnt) if return_counts else out


@dataclass(frozen=True)
class TailWeighted:
    value: float
    count: int
    unstable: bool


def tail_weighted_rho(u1, u2, tail: str = "L", gamma: float = GAMMA):
    """Tail-weighted dependence of two score columns (value, quadrant count, flag)."""
    u = np.column_stack([np.asarray(u1, dtype=float), np.asarray(u2, dtype=float)])
    if u.shape[0] < 50:
        raise ValueError("tail-weighted measures need N >= 50")
    mat, cnt = tail_weighted_matrix(u, tail, gamma, return_counts=True)
    count = int(cnt[0, 1])
    return TailWeighted(float(mat[0, 1]), count, count < MIN_QUADRANT)


RHO_N_GRID = np.round(np.concatenate([np.arange(-0.95, 0.951, 0.05), [-0.99, 0.99]]), 10)
RHO_N_SAMPLES = 1_000_000
RHO_N_SEED = 20160317


def rho_n_table(samples: int = RHO_N_SAMPLES, gamma: float = GAMMA, seed: int = RHO_N_SEED):
    """``(spearman grid, tail-weighted value)`` for normal copulas.

    Each grid point uses its own Philox stream; the value averages the
    lower and upper measures, which agree for the normal copula.
    """
    return _rho_n_table(int(samples), float(gamma), int(seed))


@lru_cache(maxsize=None)
def _rho_n_table(samples: int, gamma: float, seed: int):
    grid = np.sort(RHO_N_GRID)
    vals = np.empty(grid.size)
    for i, rs in enumerate(grid):
        r = 2.0 * math.sin(math.pi * rs / 6.0)
        rng = np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, 0, i]))
        x = rng.standard_normal((samples, 2))
        x[:, 1] = r * x[:, 0] + math.sqrt(1.0 - r * r) * x[:, 1]
        u = ndtr(x)
        lo = tail_weighted_matrix(u, "L", gamma)[0, 1]
        hi = tail_weighted_matrix(u, "U", gamma)[0, 1]
        vals[i] = 0.5 * (lo + hi)
    return grid, vals


def rho_N_calibration(spearman, samples: int = RHO_N_SAMPLES, gamma: float = GAMMA):
    """Tail-weighted measure of the normal copula with the given Spearman rho."""
    s = np.asarray(spearman, dtype=float)
    if np.any(np.abs(s) >= 1):
        raise ValueError("|spearman| must be below 1")
    grid, vals = rho_n_table(samples, gamma)
    out = np.interp(s, grid, vals)
    return float(out) if out.ndim == 0 else out


# goodness of fit -----------------------------------------------------------

GROUPS = ("variable 1", "variable 2", "cross")


@dataclass
class GroupDelta:
    d_rho: float
    abs_rho: float
    d_L: float
    abs_L: float
    d_U: float
    abs_U: float


@dataclass
class TailSummary:
    """Pairwise dependence summaries of two score sets and their differences."""

    spearman: tuple[np.ndarray, np.ndarray]
    rho_L: tuple[np.ndarray, np.ndarray]
    rho_U: tuple[np.ndarray, np.ndarray]
    deltas: dict[str, GroupDelta]
    n: int
    p: int

    def table(self):
        rows = []
        for g in GROUPS:
            d = self.deltas[g]
            rows.append((g, d.d_rho, d.abs_rho, d.d_L, d.abs_L, d.d_U, d.abs_U))
        return rows


def _group_blocks(n: int):
    return {"variable 1": (slice(0, n), slice(0, n)),
            "variable 2": (slice(n, 2 * n), slice(n, 2 * n)),
            "cross": (slice(0, n), slice(n, 2 * n))}


def dependence_matrices(u, gamma: float = GAMMA):
    """Spearman and lower/upper tail-weighted matrices; columns are re-ranked,
    so raw data and scores give the same result."""
    u = uniform_scores(np.asarray(u, dtype=float))
    s = np.corrcoef(u, rowvar=False)
    return s, tail_weighted_matrix(u, "L", gamma), tail_weighted_matrix(u, "U", gamma)


def gof_deltas(data_scores, model_scores, n: int, p: int = 2, gamma: float = GAMMA) -> TailSummary:
    """Signed and absolute mean differences (data minus model) of Spearman's
    rho and the tail-weighted measures, per group of location pairs.

    Each group averages over all ``n^2`` ordered location pairs ``(j1, j2)``;
    within a variable the diagonal contributes zero.
    """
    a = as_array(data_scores)
    b = as_array(model_scores)
    if p != 2:
        raise ValueError("groups are defined for p = 2")
    if a.shape[1] != p * n or b.shape[1] != p * n:
        raise ValueError("score sets do not match the design")
    mats_a = dependence_matrices(a, gamma)
    mats_b = dependence_matrices(b, gamma)
    deltas = {}
    for g, (r, c) in _group_blocks(n).items():
        vals = []
        for ma, mb in zip(mats_a, mats_b):
            diff = ma[r, c] - mb[r, c]
            if g != "cross":
                np.fill_diagonal(diff, 0.0)
            diff = np.nan_to_num(diff)
            vals += [float(diff.mean()), float(np.abs(diff).mean())]
        deltas[g] = GroupDelta(*vals)
    return TailSummary(spearman=(mats_a[0], mats_b[0]), rho_L=(mats_a[1], mats_b[1]),
                       rho_U=(mats_a[2], mats_b[2]), deltas=deltas, n=n, p=p)


@dataclass
class DependenceSummary:
    """Average Spearman rho and tail-weighted measures per group."""

    S_rho: dict[str, float]
    rho_N: dict[str, float]
    rho_L: dict[str, float]
    rho_U: dict[str, float]


def dependence_summary(u, n: int, reflect_second: bool = False, gamma: float = GAMMA,
                       samples: int = RHO_N_SAMPLES) -> DependenceSummary:
    """Group averages of pairwise measures for ``p = 2`` scores.

    Within a variable pairs ``s1 < s2`` are averaged; across variables pairs
    ``s1 <= s2``.  ``reflect_second`` replaces the second variable's scores
    by ``1 - u``.
    """
    u = np.array(as_array(u), dtype=float)
    if reflect_second:
        u[:, n:] = 1.0 - u[:, n:]
    s, lo, hi = dependence_matrices(u, gamma)
    iu = np.triu_indices(n, k=1)
    ic = np.triu_indices(n, k=0)
    out = {k: {} for k in ("S", "N", "L", "U")}
    for g, (r, c) in _group_blocks(n).items():
        idx = ic if g == "cross" else iu
        for key, mat in (("S", s), ("L", lo), ("U", hi)):
            out[key][g] = float(np.nanmean(mat[r, c][idx]))
        out["N"][g] = float(np.mean(rho_N_calibration(np.clip(s[r, c][idx], -0.999, 0.999),
                                                      samples, gamma)))
    return DependenceSummary(out["S"], out["N"], out["L"], out["U"])
