"""Command line: ``corlmc {simulate,fit,gof,taildep,interpolate,fig1}``.

Every command reads an optional JSON ``--config`` (paths inside it are
relative to the config file) and writes its results into ``--out``.
Exit status is 0 on success, 1 on a runtime or numerical failure and 2 on a
usage or configuration error; failures print one ``error: <kind>: <message>``
line on stderr.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fileio
from .data import ReplicateMatrix, as_array, uniform_scores
from .gaussian import CovarianceSpec, SpatialDesign
from .ingest import DetrendOptions, ingest_detrend
from .interpolate import MarginalModel, PredictionRequest, back_transform, conditional_summaries
from .likelihood import ALL_FREE, ALPHA2_FIXED, FitConfig, fit
from .margins import FactorLoadings
from .simulate import FactorLaw, SimulationConfig, empirical_dependence_curves, simulate
from .tails import GROUPS, Q_GRID, gof_deltas, tail_weighted_matrix

COMMANDS = ("simulate", "fit", "gof", "taildep", "interpolate", "fig1")

# the three parameter sets of the dependence illustration: five sites on a
# line at unit spacing, equal-weight two-factor Gaussian part
FIG1_MODELS = {
    1: dict(alpha_U=(1.40, 0.50, 0.80, 0.00), alpha_L=(0.80, 1.00, 0.60, 0.20), theta=(0.75, 0.10, 0.40)),
    2: dict(alpha_U=(1.20, 1.00, 0.80, 0.20), alpha_L=(1.00, 0.80, 0.60, 0.20), theta=(0.75, 0.10, 0.40)),
    3: dict(alpha_U=(1.15, 1.05, 0.75, 0.50), alpha_L=(1.10, 0.20, 0.60, 0.00), theta=(0.75, 0.10, 0.45)),
}
FIG1_SITES = 5
FIG1_N = 1_000_000
SIMULATE_N = 500
PAIR_TYPES = ("within1", "within2", "cross")


class ConfigError(ValueError):
    """Invalid or incomplete run configuration (exit status 2)."""


@dataclass
class RunConfig:
    """Everything a command needs; built from ``--config`` plus flags."""

    command: str
    out: Path
    base: Path = Path(".")
    locations: object = None
    data: str | None = None
    raw: str | None = None
    params: object = None
    N: int | None = None
    seed: int = 0
    factor: FactorLaw = field(default_factory=FactorLaw)
    q_grid: tuple[float, ...] = Q_GRID
    nodes: int | None = None
    constrain_alpha2: bool = True
    detrend: DetrendOptions = field(default_factory=DetrendOptions)
    model_replicates: int = 100_000
    new_location: tuple[float, ...] | None = None
    target: int = 1
    replicates: tuple[int, ...] = (0,)
    max_evals: int = 3000

    def path(self, value) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base / p

    def design(self) -> SpatialDesign:
        loc = self.locations
        if loc is None:
            raise ConfigError("'locations' is required")
        if isinstance(loc, dict):
            if "grid" in loc:
                g = loc["grid"]
                return SpatialDesign.grid(int(g["side"]), 2, float(g.get("extent", 1.0)))
            if "line" in loc:
                g = loc["line"]
                return SpatialDesign.line(int(g["n"]), 2, float(g.get("spacing", 1.0)))
            raise ConfigError("'locations' must be a path, {'grid': ...} or {'line': ...}")
        path = self.path(loc)
        if not path.exists():
            raise ConfigError(f"locations file {path} does not exist")
        return fileio.read_locations(path)

    def model(self) -> tuple[FactorLoadings, CovarianceSpec]:
        if self.params is None:
            raise ConfigError("'params' is required")
        if isinstance(self.params, dict):
            return fileio.params_from_dict(self.params)
        path = self.path(self.params)
        if not path.exists():
            raise ConfigError(f"parameter file {path} does not exist")
        return fileio.params_from_dict(fileio.read_json(path))

    def replicate_data(self, design: SpatialDesign) -> ReplicateMatrix:
        if self.data is not None:
            path = self.path(self.data)
            if not path.exists():
                raise ConfigError(f"data file {path} does not exist")
            return fileio.read_replicates(path, design)
        if self.raw is not None:
            return self.detrended(design)
        raise ConfigError("'data' or 'raw' is required")

    def detrended(self, design: SpatialDesign) -> ReplicateMatrix:
        import csv

        path = self.path(self.raw)
        if not path.exists():
            raise ConfigError(f"raw file {path} does not exist")
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        table = {k: [r[k] for r in rows] for k in ("variable", "station", "time", "value")}
        table["station"] = [int(s) for s in table["station"]]
        table["variable"] = [int(v) for v in table["variable"]]
        coords = design.coords
        stations = {name: {i: coords[j, k] for j, i in enumerate(design.ids)}
                    for k, name in enumerate(["x", "y", "z"][:coords.shape[1]])}
        res = ingest_detrend(table, self.detrend, stations)
        if list(res.stations) != sorted(design.ids):
            raise ConfigError("raw stations do not match the location ids")
        order = [res.stations.index(i) for i in design.ids]
        v = res.replicates.values
        cols = [b * design.n + j for b in range(res.replicates.p) for j in order]
        return ReplicateMatrix(v[:, cols], res.replicates.p, design.n, res.times)


def _parse_q(text: str) -> tuple[float, ...]:
    try:
        q = tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad q grid {text!r}")
    if not q or any(not 0 < v < 0.5 for v in q):
        raise argparse.ArgumentTypeError("q values must lie in (0, 0.5)")
    return q


def _parse_factor(text: str) -> FactorLaw:
    try:
        return FactorLaw.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _parse_seed(text: str) -> int:
    try:
        s = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed {text!r}")
    if not 0 <= s < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return s


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="corlmc", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON run configuration")
    ap.add_argument("--seed", type=_parse_seed, help="unsigned 64-bit seed")
    ap.add_argument("--out", default=".", help="output directory")
    ap.add_argument("--nodes", type=int, help="Gauss-Legendre points per quadrature piece")
    ap.add_argument("--constrain-alpha2", dest="constrain_alpha2", action="store_true", default=None,
                    help="fix a2U = a2L = 0 when fitting (default)")
    ap.add_argument("--no-constrain-alpha2", dest="constrain_alpha2", action="store_false")
    ap.add_argument("--factor", type=_parse_factor, help="exp, pareto:k or weibull:kappa")
    ap.add_argument("--q-grid", type=_parse_q, help="comma-separated tail levels")
    return ap


def load_config(args) -> RunConfig:
    raw = {}
    base = Path(".")
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            raw = fileio.read_json(path)
        except ValueError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}")
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        base = path.parent
    known = set(RunConfig.__dataclass_fields__) - {"command", "out", "base"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    kw = dict(raw)
    try:
        if "factor" in kw:
            kw["factor"] = FactorLaw.parse(kw["factor"])
        if "q_grid" in kw:
            kw["q_grid"] = tuple(float(q) for q in kw["q_grid"])
        if "detrend" in kw:
            d = dict(kw["detrend"])
            if isinstance(d.get("covariates"), dict):
                d["covariates"] = {int(k): tuple(v) for k, v in d["covariates"].items()}
            kw["detrend"] = DetrendOptions(**d)
        for key in ("new_location", "replicates"):
            if key in kw and kw[key] is not None:
                kw[key] = tuple(kw[key])
        for key in ("N", "seed", "model_replicates", "target", "max_evals"):
            if key in kw:
                kw[key] = int(kw[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc))
    cfg = RunConfig(command=args.command, out=Path(args.out), base=base, **kw)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.nodes is not None:
        cfg.nodes = args.nodes
    if args.constrain_alpha2 is not None:
        cfg.constrain_alpha2 = args.constrain_alpha2
    if args.factor is not None:
        cfg.factor = args.factor
    if args.q_grid is not None:
        cfg.q_grid = args.q_grid
    if cfg.nodes is not None and cfg.nodes < 4:
        raise ConfigError("nodes must be at least 4")
    if not 0 <= cfg.seed < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if cfg.target not in (1, 2):
        raise ConfigError("target must be variable 1 or 2")
    return cfg


# commands ---------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig) -> None:
    design = cfg.design()
    L, spec = cfg.model()
    data = simulate(SimulationConfig(design, spec, L, cfg.N or SIMULATE_N, cfg.factor, cfg.seed))
    fileio.write_locations(cfg.out / "locations.csv", design)
    fileio.write_replicates(cfg.out / "replicates.csv", data, design)


def cmd_fit(cfg: RunConfig) -> None:
    design = cfg.design()
    data = cfg.replicate_data(design)
    if cfg.raw is not None and cfg.data is None:
        fileio.write_replicates(cfg.out / "residuals.csv", data, design)
    u = uniform_scores(data)
    kw = dict(free=ALPHA2_FIXED if cfg.constrain_alpha2 else ALL_FREE, max_evals=cfg.max_evals)
    if cfg.nodes is not None:
        kw["nodes"] = cfg.nodes
    res = fit(u, design, FitConfig(**kw))
    fileio.write_json(cfg.out / "params.json", fileio.params_to_dict(res.loadings, res.spec, res))


def gof_table(u, sim_u, n: int):
    summary = gof_deltas(u, sim_u, n)
    return [(g, *(getattr(summary.deltas[g], f) for f in
                  ("d_rho", "abs_rho", "d_L", "abs_L", "d_U", "abs_U"))) for g in GROUPS]


def cmd_gof(cfg: RunConfig) -> None:
    design = cfg.design()
    u = uniform_scores(cfg.replicate_data(design))
    L, spec = cfg.model()
    sim = simulate(SimulationConfig(design, spec, L, cfg.model_replicates, cfg.factor, cfg.seed))
    rows = gof_table(as_array(u), as_array(uniform_scores(sim)), design.n)
    fileio.write_rows(cfg.out / "gof.csv",
                      ["group", "delta_rho", "abs_delta_rho", "delta_L", "abs_delta_L",
                       "delta_U", "abs_delta_U"], rows)


def _label(design: SpatialDesign, col: int) -> str:
    return f"{col // design.n + 1}:{design.ids[col % design.n]}"


def cmd_taildep(cfg: RunConfig) -> None:
    design = cfg.design()
    u = as_array(uniform_scores(cfg.replicate_data(design)))
    m = u.shape[1]
    pairs = [(a, b) for a in range(m) for b in range(a + 1, m)]
    curves = empirical_dependence_curves(u, pairs, cfg.q_grid)
    rl = tail_weighted_matrix(u, "L")
    ru = tail_weighted_matrix(u, "U")
    rows = []
    for c in curves:
        a, b = c.pair
        la, lb = _label(design, a), _label(design, b)
        rows.append((la, lb, "spearman", None, c.spearman))
        for q, lo, hi in zip(c.q, c.lambda_L, c.lambda_U):
            rows.append((la, lb, "lambda_L", q, lo))
            rows.append((la, lb, "lambda_U", q, hi))
        rows.append((la, lb, "rho_L", None, rl[a, b]))
        rows.append((la, lb, "rho_U", None, ru[a, b]))
    fileio.write_rows(cfg.out / "taildep.csv", ["column_a", "column_b", "stat", "q", "value"], rows)


def cmd_interpolate(cfg: RunConfig) -> None:
    design = cfg.design()
    data = cfg.replicate_data(design)
    u = as_array(uniform_scores(data))
    L, spec = cfg.model()
    if cfg.new_location is None:
        raise ConfigError("'new_location' is required")
    target = cfg.target - 1
    G = MarginalModel(sample=data.block(target))
    rows = []
    for r in cfg.replicates:
        if not 0 <= r < u.shape[0]:
            raise ConfigError(f"replicate {r} outside 0..{u.shape[0] - 1}")
        kw = {} if cfg.nodes is None else {"nodes": cfg.nodes}
        req = PredictionRequest(L, spec, design, u[r], np.asarray(cfg.new_location), target, G, **kw)
        mean, median = conditional_summaries(req)
        rows.append((r, cfg.target, *cfg.new_location, mean, median, back_transform(median, G)))
    coords = ["x", "y", "z"][:len(cfg.new_location)]
    fileio.write_rows(cfg.out / "interpolate.csv",
                      ["replicate", "variable", *coords, "mean_score", "median_score", "median_value"],
                      rows)


def fig1_rows(N: int = FIG1_N, seed: int = 0, q_grid=Q_GRID, factor: FactorLaw | None = None):
    """Spearman's rho and tail ratios for the three illustration models.

    Pairs are ``(W_11, W_1j)``, ``(W_21, W_2j)`` and ``(W_11, W_2j)`` with lag
    ``j - 1 = 0..4``.
    """
    design = SpatialDesign.line(FIG1_SITES, 2, 1.0)
    n = design.n
    pairs = {"within1": [(0, j) for j in range(n)],
             "within2": [(n, n + j) for j in range(n)],
             "cross": [(0, n + j) for j in range(n)]}
    rows = []
    for model, par in FIG1_MODELS.items():
        L, spec = fileio.params_from_dict(dict(par))
        data = simulate(SimulationConfig(design, spec, L, N, factor or FactorLaw(), seed))
        for kind in PAIR_TYPES:
            curves = empirical_dependence_curves(data, pairs[kind], q_grid)
            for lag, c in enumerate(curves):
                rows.append((model, kind, lag, "spearman", None, c.spearman))
                for q, lo, hi in zip(c.q, c.lambda_L, c.lambda_U):
                    rows.append((model, kind, lag, "lambda_L", q, lo))
                    rows.append((model, kind, lag, "lambda_U", q, hi))
    return rows


def fig1_svg(rows, q_grid=Q_GRID) -> str:
    """3 x 3 panel line plot (models by pair type) as a standalone SVG."""
    W, H, pad = 220, 160, 30
    colors = {"spearman": "#808080", "lambda_L": "#d62728", "lambda_U": "#2ca02c"}
    dashes = ["", "6,3", "2,2", "8,2,2,2"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{3 * W + pad}" '
           f'height="{3 * H + pad}" font-family="sans-serif" font-size="10">']
    for mi, model in enumerate(FIG1_MODELS):
        for ki, kind in enumerate(PAIR_TYPES):
            x0, y0 = pad + ki * W, pad // 2 + mi * H
            pw, ph = W - 40, H - 40
            out.append(f'<rect x="{x0}" y="{y0}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
            out.append(f'<text x="{x0 + 4}" y="{y0 + 12}">model {model}, {kind}</text>')
            sel = [r for r in rows if r[0] == model and r[1] == kind]
            lags = sorted({r[2] for r in sel})
            span = max(lags) or 1
            series = [("spearman", None)] + [(s, q) for s in ("lambda_L", "lambda_U") for q in q_grid]
            for stat, q in series:
                pts = [(r[2], r[5]) for r in sel if r[3] == stat and r[4] == q]
                if not pts:
                    continue
                coords = " ".join(f"{x0 + pw * lag / span:.2f},{y0 + ph * (1 - min(max(v, 0), 1)):.2f}"
                                  for lag, v in pts)
                dash = "" if q is None else dashes[list(q_grid).index(q) % len(dashes)]
                style = f' stroke-dasharray="{dash}"' if dash else ""
                out.append(f'<polyline points="{coords}" fill="none" stroke="{colors[stat]}"{style}/>')
            for lag in lags:
                out.append(f'<text x="{x0 + pw * lag / span - 3:.2f}" y="{y0 + ph + 12}">{lag}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cmd_fig1(cfg: RunConfig) -> None:
    rows = fig1_rows(cfg.N or FIG1_N, cfg.seed, cfg.q_grid, cfg.factor)
    fileio.write_rows(cfg.out / "fig1.csv", ["model", "pair_type", "lag", "stat", "q", "value"], rows)
    (cfg.out / "fig1.svg").write_text(fig1_svg(rows, cfg.q_grid))


HANDLERS = {"simulate": cmd_simulate, "fit": cmd_fit, "gof": cmd_gof, "taildep": cmd_taildep,
            "interpolate": cmd_interpolate, "fig1": cmd_fig1}


def _fail(kind: str, exc: BaseException) -> None:
    msg = " ".join(str(exc).split()) or type(exc).__name__
    print(f"error: {kind}: {type(exc).__name__}: {msg}", file=sys.stderr)


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(args)
        cfg.out.mkdir(parents=True, exist_ok=True)
    except ConfigError as exc:
        _fail("config", exc)
        return 2
    except OSError as exc:
        _fail("config", exc)
        return 2
    try:
        HANDLERS[cfg.command](cfg)
    except ConfigError as exc:
        _fail("config", exc)
        return 2
    except (KeyError, TypeError) as exc:
        # malformed parameter or config documents
        _fail("config", exc)
        return 2
    except Exception as exc:  # numerical or I/O failure
        _fail("runtime", exc)
        return 1
    return 0


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
