"""Reading station series and removing serial dependence by OLS.

Each variable gets one pooled regression over all stations,

    y[s, t] = b0 + sum_k b_k t^k + sum_c g_c x_c[s] + sum_m a_m y[s, t-m] + e[s, t],

and the residuals ``e`` form the replicates: one replicate per time point
that has all lags available.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg

from .data import ReplicateMatrix


class RankDeficientError(ValueError):
    """The regression design has linearly dependent columns."""

    def __init__(self, variable, columns: Sequence[str]):
        self.variable = variable
        self.columns = tuple(columns)
        super().__init__(f"design matrix for variable {variable!r} is rank deficient; "
                         f"collinear column(s): {', '.join(self.columns)}")


@dataclass(frozen=True)
class DetrendOptions:
    """``lags`` autoregressive lags, polynomial time trend of ``trend_degree``
    and station-level ``covariates`` (names of columns in the station table).
    ``covariates`` may be given per variable as a mapping."""

    lags: int = 0
    trend_degree: int = 0
    covariates: Sequence[str] | Mapping[object, Sequence[str]] = field(default_factory=tuple)

    def __post_init__(self):
        if self.lags < 0 or self.trend_degree < 0:
            raise ValueError("lags and trend degree must be nonnegative")

    def covariates_for(self, variable) -> tuple[str, ...]:
        if isinstance(self.covariates, Mapping):
            return tuple(self.covariates.get(variable, ()))
        return tuple(self.covariates)


@dataclass(frozen=True, eq=False)
class DetrendResult:
    replicates: ReplicateMatrix
    coefficients: dict
    column_names: dict
    variables: tuple
    stations: tuple
    times: np.ndarray


def _pivoted_rank(X: np.ndarray) -> tuple[int, np.ndarray]:
    _, r, piv = linalg.qr(X, mode="economic", pivoting=True)
    d = np.abs(np.diag(r))
    tol = d.max() * max(X.shape) * np.finfo(float).eps if d.size else 0.0
    return int(np.sum(d > tol)), piv


def regress_series(y: np.ndarray, times: np.ndarray, station_covariates: np.ndarray,
                   covariate_names: Sequence[str], options: DetrendOptions, variable=0):
    """Pooled OLS for one variable.

    Parameters
    ----------
    y
        Array ``(stations, times)`` of values on a common, ordered time axis.
    times
        Time stamps used for the trend.
    station_covariates
        Array ``(stations, k)``.

    Returns
    -------
    residuals
        ``(stations, times - lags)``.
    beta, names
        Coefficients and the design column names.
    """
    y = np.asarray(y, dtype=float)
    S, T = y.shape
    lags = options.lags
    if T <= lags:
        raise ValueError(f"variable {variable!r}: {T} time points cannot support {lags} lags")
    t = np.asarray(times, dtype=float)[lags:]
    # centre and scale the trend; this leaves the fitted values unchanged
    span = np.ptp(times) or 1.0
    tc = (t - np.mean(times)) / span
    cols, names = [np.ones((S, T - lags))], ["intercept"]
    for k in range(1, options.trend_degree + 1):
        cols.append(np.broadcast_to(tc ** k, (S, T - lags)))
        names.append(f"time^{k}")
    for j, name in enumerate(covariate_names):
        cols.append(np.broadcast_to(station_covariates[:, j:j + 1], (S, T - lags)))
        names.append(name)
    for m in range(1, lags + 1):
        cols.append(y[:, lags - m:T - m])
        names.append(f"lag{m}")
    X = np.column_stack([np.asarray(c, dtype=float).ravel() for c in cols])
    target = y[:, lags:].ravel()
    rank, piv = _pivoted_rank(X)
    if rank < X.shape[1]:
        raise RankDeficientError(variable, [names[i] for i in piv[rank:]])
    beta, *_ = linalg.lstsq(X, target)
    resid = (target - X @ beta).reshape(S, T - lags)
    return resid, beta, names


def ingest_detrend(raw, options: DetrendOptions | None = None, stations=None) -> DetrendResult:
    """Turn a long table of station series into detrended replicates.

    Parameters
    ----------
    raw
        Mapping of column name to sequence (or a pandas DataFrame) with
        columns ``variable``, ``station``, ``time`` and ``value``.
    options
        Regression design.
    stations
        Optional mapping ``column name -> {station: value}`` supplying
        station-level covariates (coordinates, for example).

    Every (variable, station) series must be observed at the same time
    points; replicate ``k`` is time ``times[lags + k]``.
    """
    options = options or DetrendOptions()
    var = np.asarray(raw["variable"])
    sta = np.asarray(raw["station"])
    tim = np.asarray(raw["time"], dtype=float)
    val = np.asarray(raw["value"], dtype=float)
    if not (var.size == sta.size == tim.size == val.size) or var.size == 0:
        raise ValueError("raw table columns must be non-empty and of equal length")
    if not np.all(np.isfinite(val)):
        raise ValueError("raw values contain missing or non-finite entries")
    variables = tuple(sorted(set(var.tolist()), key=str))
    station_ids = tuple(sorted(set(sta.tolist()), key=str))
    times = np.unique(tim)
    S, T = len(station_ids), times.size
    s_index = {s: i for i, s in enumerate(station_ids)}
    blocks, coefs, names_out = [], {}, {}
    for v in variables:
        sel = var == v
        grid = np.full((S, T), np.nan)
        si = np.array([s_index[s] for s in sta[sel]])
        ti = np.searchsorted(times, tim[sel])
        if np.unique(si * T + ti).size != si.size:
            raise ValueError(f"variable {v!r}: duplicate (station, time) rows")
        grid[si, ti] = val[sel]
        if np.isnan(grid).any():
            s, t = np.argwhere(np.isnan(grid))[0]
            raise ValueError(f"variable {v!r}: no value for station {station_ids[s]!r} "
                             f"at time {times[t]:g}")
        cov_names = options.covariates_for(v)
        cov = np.empty((S, len(cov_names)))
        for j, name in enumerate(cov_names):
            if stations is None or name not in stations:
                raise ValueError(f"station covariate {name!r} is not available")
            col = stations[name]
            cov[:, j] = [float(col[s]) for s in station_ids]
        resid, beta, names = regress_series(grid, times, cov, cov_names, options, v)
        blocks.append(resid.T)
        coefs[v] = beta
        names_out[v] = names
    values = np.concatenate(blocks, axis=1)
    reps = ReplicateMatrix(values, len(variables), S, timestamps=times[options.lags:])
    return DetrendResult(reps, coefs, names_out, variables, station_ids, times[options.lags:])
