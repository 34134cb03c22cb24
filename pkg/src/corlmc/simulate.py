"""Sampling from the factor model and empirical dependence summaries."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .data import ReplicateMatrix, as_array
from .gaussian import CorrelationMatrix, CovarianceSpec, SpatialDesign, build_sigma_z
from .margins import FactorLoadings

# replicates drawn from one Philox counter block; part of the output contract
BLOCK = 4096


@dataclass(frozen=True)
class FactorLaw:
    """Law of the additive factors: ``exp``, ``pareto`` (shape ``k > 1``,
    scale 1) or ``weibull`` (shape ``0 < kappa < 1``, scale 1)."""

    kind: str = "exp"
    shape: float | None = None

    def __post_init__(self):
        if self.kind == "exp":
            if self.shape is not None:
                raise ValueError("the exponential law takes no shape")
        elif self.kind == "pareto":
            if self.shape is None or not self.shape > 1:
                raise ValueError("Pareto factors need shape k > 1")
        elif self.kind == "weibull":
            if self.shape is None or not 0 < self.shape < 1:
                raise ValueError("Weibull factors need shape 0 < kappa < 1")
        else:
            raise ValueError(f"unknown factor law {self.kind!r}")

    @classmethod
    def parse(cls, text: str) -> "FactorLaw":
        """``"exp"``, ``"pareto:3"`` or ``"weibull:0.5"``."""
        kind, _, arg = text.strip().partition(":")
        return cls(kind, float(arg) if arg else None)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.kind == "exp":
            return rng.standard_exponential(size)
        u = rng.random(size)
        # 1 - u lies in (0, 1]
        if self.kind == "pareto":
            return (1.0 - u) ** (-1.0 / self.shape)
        return (-np.log1p(-u)) ** (1.0 / self.shape)

    def __str__(self):
        return self.kind if self.shape is None else f"{self.kind}:{self.shape:g}"


@dataclass(frozen=True)
class SimulationConfig:
    design: SpatialDesign
    spec: CovarianceSpec
    loadings: FactorLoadings
    N: int
    law: FactorLaw = field(default_factory=FactorLaw)
    seed: int = 0

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be at least 1")
        if self.loadings.p != self.design.p:
            raise ValueError("loadings and design disagree on p")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")


def _block_rng(seed: int, block: int) -> np.random.Generator:
    # key = seed; each block starts at its own 2^192-spaced counter
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, 0, 0, block]))


def simulate_block(cfg: SimulationConfig, block: int, sigma: CorrelationMatrix | None = None):
    """Replicates ``block*BLOCK ...`` of the run; independent of other blocks."""
    sigma = build_sigma_z(cfg.design, cfg.spec) if sigma is None else sigma
    start = block * BLOCK
    size = min(BLOCK, cfg.N - start)
    if size <= 0:
        raise ValueError("block beyond the requested number of replicates")
    rng = _block_rng(cfg.seed, block)
    p, n = cfg.design.p, cfg.design.n
    z = rng.standard_normal((size, p * n)) @ sigma.chol.T
    # columns: E0U, E0L, E1U, E1L, ..., EpU, EpL
    e = cfg.law.sample(rng, (size, 2 + 2 * p))
    L = cfg.loadings
    shift = np.empty((size, p))
    for i in range(p):
        shift[:, i] = (L.upper0[i] * e[:, 0] - L.lower0[i] * e[:, 1]
                       + L.upper[i] * e[:, 2 + 2 * i] - L.lower[i] * e[:, 3 + 2 * i])
    return z + np.repeat(shift, n, axis=1)


def simulate(cfg: SimulationConfig, threads: int | None = None) -> ReplicateMatrix:
    """Draw ``N`` replicates of ``W = Z + factors``.

    Replicates are generated in fixed blocks of :data:`BLOCK`, each from its
    own counter-based Philox stream keyed by the seed, so the output does not
    depend on how blocks are scheduled.
    """
    sigma = build_sigma_z(cfg.design, cfg.spec)
    nblocks = -(-cfg.N // BLOCK)
    out = np.empty((cfg.N, cfg.design.dim))
    if threads is None:
        import os
        threads = int(os.environ.get("CORLMC_THREADS", "1") or 1)
    if threads > 1 and nblocks > 1:
        from concurrent.futures import ThreadPoolExecutor

        def work(b):
            out[b * BLOCK:(b + 1) * BLOCK] = simulate_block(cfg, b, sigma)

        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(work, range(nblocks)))
    else:
        for b in range(nblocks):
            out[b * BLOCK:(b + 1) * BLOCK] = simulate_block(cfg, b, sigma)
    return ReplicateMatrix(out, cfg.design.p, cfg.design.n)


def model_moments(design: SpatialDesign, spec: CovarianceSpec, loadings: FactorLoadings):
    """Correlation matrix of ``W`` from first principles (unit exponential factors).

    ``Var W_i = 1 + sum of the variable's four squared loadings``; the
    covariance adds ``a0U_i a0U_k + a0L_i a0L_k`` across variables and the
    variable-specific squares within a variable.
    """
    sigma = spec.correlation(design.variable_index(), design.site_coords())
    var = design.variable_index()
    L = loadings
    same = var[:, None] == var[None, :]
    common = np.outer(L.upper0[var], L.upper0[var]) + np.outer(L.lower0[var], L.lower0[var])
    own = (L.upper[var] ** 2 + L.lower[var] ** 2)
    cov = sigma + common + np.where(same, own[:, None] * np.ones_like(sigma), 0.0)
    sd = np.sqrt(np.diag(cov))
    return cov / np.outer(sd, sd)


# empirical summaries --------------------------------------------------------

@dataclass(frozen=True)
class DependenceCurve:
    pair: tuple[int, int]
    spearman: float
    q: tuple[float, ...]
    lambda_L: tuple[float, ...]
    lambda_U: tuple[float, ...]
    unstable: tuple[bool, ...]


def empirical_lambda(u1, u2, q: float):
    """``(lambda_L^q, lambda_U^q)`` from rank scores."""
    u1 = np.asarray(u1)
    u2 = np.asarray(u2)
    N = u1.size
    lo = np.count_nonzero((u1 <= q) & (u2 <= q)) / (N * q)
    hi = np.count_nonzero((u1 > 1.0 - q) & (u2 > 1.0 - q)) / (N * q)
    return lo, hi


def _scores(x):
    return (rankdata(x, axis=0) - 0.5) / x.shape[0]


def empirical_dependence_curves(data, pairs: Iterable[tuple[int, int]],
                                q: Sequence[float] = (0.01, 0.05, 0.10)) -> list[DependenceCurve]:
    """Spearman's rho and the tail ratios ``C(q,q)/q`` and ``C_bar(1-q,1-q)/q``.

    Columns are rank-transformed first, so raw data or scores may be passed.
    Estimates resting on fewer than five expected tail points (``qN < 5``)
    are flagged unstable and a warning is issued.
    """
    x = as_array(data)
    N = x.shape[0]
    qs = tuple(float(v) for v in q)
    if any(not 0 < v < 0.5 for v in qs):
        raise ValueError("q must lie in (0, 0.5)")
    pairs = [tuple(int(c) for c in pr) for pr in pairs]
    cols = sorted({c for pr in pairs for c in pr})
    if cols and (cols[0] < 0 or cols[-1] >= x.shape[1]):
        raise ValueError("pair references a column outside the data")
    ranked = {c: _scores(x[:, c]) for c in cols}
    unstable = tuple(v * N < 5 for v in qs)
    if any(unstable):
        warnings.warn("tail ratios at q*N < 5 are unstable", RuntimeWarning, stacklevel=2)
    out = []
    for a, b in pairs:
        ua, ub = ranked[a], ranked[b]
        rho = float(np.corrcoef(ua, ub)[0, 1])
        lams = [empirical_lambda(ua, ub, v) for v in qs]
        out.append(DependenceCurve((a, b), rho, qs, tuple(l for l, _ in lams),
                                   tuple(h for _, h in lams), unstable))
    return out
