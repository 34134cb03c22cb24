"""Gauss-Legendre rules and a log-space integrator for log-concave integrands."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp, roots_legendre

DEFAULT_NODES = 30
# interior break points of each side, as fractions of the distance to the end
GRADING = (1.0 / 16.0, 0.25)


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Gauss-Legendre rule on ``[-1, 1]`` with a map to the half-line.

    The half-line map is ``v = scale * t / (1 - t)`` with ``t = (x + 1)/2``.
    """

    n: int = DEFAULT_NODES
    nodes: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need at least two nodes")
        x, w = roots_legendre(self.n)
        x.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "nodes", x)
        object.__setattr__(self, "weights", w)

    def unit_interval(self):
        """Nodes and weights on ``(0, 1)``."""
        return 0.5 * (self.nodes + 1.0), 0.5 * self.weights

    def half_line(self, scale=1.0):
        """Nodes ``v`` and log-weights for ``int_0^inf g(v) dv``.

        ``scale`` may be an array; results carry a leading node axis of
        length ``n`` followed by the shape of ``scale``.
        """
        t, w = self.unit_interval()
        scale = np.asarray(scale, dtype=float)
        shape = (-1,) + (1,) * scale.ndim
        t = t.reshape(shape)
        v = scale * t / (1.0 - t)
        logw = np.log(w).reshape(shape) + np.log(scale) - 2.0 * np.log1p(-t)
        return v, logw


@lru_cache(maxsize=16)
def gauss_legendre(n: int) -> QuadratureRule:
    return QuadratureRule(n)


def integrate_log_concave(fg, lower, upper, start, scale, kink=None,
                          drop: float = 36.0, nodes: int = 36,
                          mode_iters: int = 12, end_iters: int = 6,
                          grading=GRADING, return_nodes: bool = False,
                          fg_search=None, mode_tol: float = 0.05, end_tol: float = 0.25):
    """``log int_lower^upper exp(g(t)) dt`` for concave ``g``, vectorized.

    Parameters
    ----------
    fg
        Callable returning ``(g(t), g'(t))`` for ``t`` of any shape that
        broadcasts against the batch.  At a kink it must return the right
        derivative.
    lower, upper
        Integration limits per batch element; may be infinite.
    start
        Finite starting point inside the limits.
    scale
        Lower bound on the width of the integrand, ``1/sqrt(max |g''|)``.
        Steps of size ``g' * scale**2`` never overshoot the mode.
    kink
        Optional location of a derivative jump, split out as a piece boundary.
    drop
        Each side is covered until ``g`` has fallen this far below its maximum.
    nodes
        Gauss-Legendre points per side of the mode, shared equally by the
        graded pieces of that side (a kink adds one more piece).
    fg_search
        Optional cheaper approximation of ``fg`` used while locating the
        mode and the ends; the final rule always uses ``fg``.
    mode_tol, end_tol
        The mode search stops once the bracket is narrower than
        ``mode_tol * scale``; the end search once ``g`` is within
        ``end_tol`` of the target level.  Both only place piece boundaries.
    grading
        Interior break points of each side as fractions of the distance from
        the mode.  Grading resolves sharp peaks; smooth integrands do better
        with ``()`` and all nodes on one piece per side.

    The mode is bracketed by doubling steps and refined by bisection of
    ``g'``.  The ends are found by Newton steps on ``g - (g_max - drop)``;
    for concave ``g`` every tangent root lies beyond the true crossing, so
    the ends are conservative after the first step.
    """
    final_fg = fg
    if fg_search is not None:
        fg = fg_search
    start = np.asarray(start, dtype=float)
    batch = start.shape
    lower = np.broadcast_to(np.asarray(lower, dtype=float), batch)
    upper = np.broadcast_to(np.asarray(upper, dtype=float), batch)
    scale = np.broadcast_to(np.asarray(scale, dtype=float), batch)
    start = np.clip(start, lower, upper)

    # bracket the mode: g'(lo) > 0 >= g'(hi), or pin it to a limit
    _, d0 = fg(start)
    up = d0 > 0
    lo = np.where(up, start, lower)
    hi = np.where(up, upper, start)
    if kink is not None:
        # right derivative <= 0 at a kink with left derivative >= 0: mode at kink
        kink = np.broadcast_to(np.asarray(kink, dtype=float), batch)
        at_kink = (start == kink) & ~up
        if at_kink.any():
            eps = 1e-9 * (scale + np.abs(start))
            _, dl = fg(start - eps)
            pinned = at_kink & (dl >= 0)
            lo = np.where(pinned, start, lo)
    step = scale.copy()
    todo = np.ones(batch, dtype=bool)
    for _ in range(64):
        probe = np.where(up, np.minimum(start + step, upper), np.maximum(start - step, lower))
        todo &= np.where(up, probe < hi, probe > lo)
        if not todo.any():
            break
        _, dp = fg(probe)
        crossed = np.where(up, dp <= 0, dp > 0)
        move_hi = todo & (up == crossed)
        move_lo = todo & (up != crossed)
        hi = np.where(move_hi, probe, hi)
        lo = np.where(move_lo, probe, lo)
        todo &= ~crossed
        step = step * 2.0
    # a side still infinite means g' never changed sign: the mode is the finite end
    lo = np.where(np.isinf(lo), hi, lo)
    hi = np.where(np.isinf(hi), lo, hi)
    for _ in range(mode_iters):
        if np.all(hi - lo <= mode_tol * scale):
            break
        mid = 0.5 * (lo + hi)
        _, dm = fg(mid)
        pos = dm > 0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
    mode = 0.5 * (lo + hi)
    top, dtop = fg(mode)
    level = top - drop
    reach = scale * np.sqrt(2.0 * drop)

    def end(direction, limit):
        # a mode pinned at a limit can have a steep one-sided slope; the
        # tangent there reaches the level no later than g does
        slope0 = -direction * dtop
        with np.errstate(divide="ignore"):
            linear = np.where(slope0 > 0, drop / slope0, np.inf)
        t = mode + direction * np.minimum(reach, linear)
        t = np.minimum(t, limit) if direction > 0 else np.maximum(t, limit)
        for _ in range(end_iters):
            f, d = fg(t)
            h = f - level
            if np.all(np.abs(h) <= end_tol):
                break
            slope = -direction * d  # positive away from the mode
            dist = np.abs(t - mode)
            with np.errstate(divide="ignore", invalid="ignore"):
                newton = t + direction * h / slope
            nxt = np.where(slope > 0, newton, t + direction * np.maximum(dist, reach))
            nxt = np.where(np.isneginf(f), mode + 0.5 * (t - mode), nxt)
            nxt = np.where(np.isfinite(nxt), nxt, t)
            if direction > 0:
                t = np.minimum(np.maximum(nxt, mode), limit)
            else:
                t = np.maximum(np.minimum(nxt, mode), limit)
        return t

    right = end(1.0, upper)
    left = end(-1.0, lower)

    # geometric grading toward the mode, where the mass of a log-concave
    # integrand concentrates
    cuts = [left, mode, right]
    for frac in grading:
        cuts.append(mode + frac * (right - mode))
        cuts.append(mode - frac * (mode - left))
    if kink is not None:
        cuts.append(np.clip(kink, left, right))
    cuts = np.sort(np.stack(cuts), axis=0)
    rule = gauss_legendre(max(4, -(-nodes // (len(grading) + 1))))
    x, w = rule.nodes, rule.weights
    shape = (-1,) + (1,) * len(batch)
    x = x.reshape(shape)
    logw = np.log(w).reshape(shape)
    ts, lws = [], []
    for a, b in zip(cuts[:-1], cuts[1:]):
        half = 0.5 * (b - a)
        ts.append(a + half * (x + 1.0))
        with np.errstate(divide="ignore"):
            lws.append(logw + np.log(half))
    t_all = np.concatenate(ts, axis=0)
    lw_all = np.concatenate(lws, axis=0)
    vals, _ = final_fg(t_all)
    terms = vals + lw_all
    out = logsumexp(terms, axis=0)
    if return_nodes:
        return out, t_all, terms
    return out


def log_integral_concave(logf, dlogf, lower=0.0, drop=36.0, nodes=36):
    """``log int_lower^inf exp(logf(t)) dt`` for concave ``logf``.

    Thin wrapper around :func:`integrate_log_concave` for separate value
    and derivative callables and a unit width hint.
    """
    lower = np.asarray(lower, dtype=float)
    batch = np.shape(dlogf(lower))
    lower = np.broadcast_to(lower, batch)
    return integrate_log_concave(lambda t: (logf(t), dlogf(t)), lower, np.inf,
                                 lower, np.ones(batch), drop=drop, nodes=nodes)
