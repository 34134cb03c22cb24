"""File formats used by the command line.

* locations: CSV ``id,x,y`` (one coordinate column per dimension)
* replicates: long CSV ``replicate,variable,location_id,value``
* parameters: one JSON document with ``loadings`` and ``spec`` objects whose
  keys are the :class:`FactorLoadings` / :class:`CovarianceSpec` fields

Floats are written with 17 significant digits so files round-trip exactly.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .data import ReplicateMatrix
from .gaussian import CovarianceSpec, SpatialDesign
from .likelihood import LOADING_NAMES
from .margins import FactorLoadings


def fmt(x) -> str:
    """17 significant digits; integers stay integers."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return f"{x:.17g}"


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON with every float at 17 significant digits; keys keep insertion order."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if obj is None:
        return "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, (bool, np.bool_, int, np.integer, float, np.floating)):
        return fmt(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        items = [pad + dumps(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj) + "\n")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


# locations ---------------------------------------------------------------------

def read_locations(path, p: int = 2) -> SpatialDesign:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0].strip().lower() != "id":
        raise ValueError(f"{path}: expected a header starting with 'id'")
    body = [r for r in rows[1:] if r]
    if not body:
        raise ValueError(f"{path}: no locations")
    ids = [int(r[0]) for r in body]
    coords = np.array([[float(v) for v in r[1:]] for r in body])
    return SpatialDesign.from_coords(coords, p=p, ids=ids)


def write_locations(path, design: SpatialDesign) -> None:
    coords = design.coords
    names = ["x", "y", "z"][:coords.shape[1]] if coords.shape[1] <= 3 else \
        [f"x{k}" for k in range(coords.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *names])
        for i, row in zip(design.ids, coords):
            w.writerow([i, *(fmt(c) for c in row)])


# replicates --------------------------------------------------------------------

def write_replicates(path, data: ReplicateMatrix, design: SpatialDesign) -> None:
    ids = design.ids
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replicate", "variable", "location_id", "value"])
        for r, row in enumerate(data.values):
            for i in range(data.p):
                for j in range(data.n):
                    w.writerow([r, i + 1, ids[j], fmt(row[i * data.n + j])])


def read_replicates(path, design: SpatialDesign) -> ReplicateMatrix:
    """Long CSV into a replicate matrix ordered as ``design``; variables are
    numbered from 1 and every (replicate, variable, location) must appear once."""
    col = {lid: j for j, lid in enumerate(design.ids)}
    n, p = design.n, design.p
    cells: dict[int, np.ndarray] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"replicate", "variable", "location_id", "value"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ValueError(f"{path}: columns must include {sorted(need)}")
        for line, rec in enumerate(reader, start=2):
            r = int(rec["replicate"])
            v = int(rec["variable"]) - 1
            lid = int(rec["location_id"])
            if not 0 <= v < p:
                raise ValueError(f"{path}:{line}: variable {v + 1} outside 1..{p}")
            if lid not in col:
                raise ValueError(f"{path}:{line}: unknown location id {lid}")
            row = cells.setdefault(r, np.full(p * n, np.nan))
            k = v * n + col[lid]
            if not np.isnan(row[k]):
                raise ValueError(f"{path}:{line}: duplicate entry")
            row[k] = float(rec["value"])
    if not cells:
        raise ValueError(f"{path}: no replicates")
    keys = sorted(cells)
    values = np.array([cells[k] for k in keys])
    if np.isnan(values).any():
        r, k = np.argwhere(np.isnan(values))[0]
        raise ValueError(f"{path}: replicate {keys[r]} misses variable {k // n + 1} "
                         f"at location {design.ids[k % n]}")
    return ReplicateMatrix(values, p, n)


# parameters ----------------------------------------------------------------------

def params_to_dict(loadings: FactorLoadings, spec: CovarianceSpec, fit=None) -> dict:
    out = {
        "loadings": {f: getattr(loadings, f).tolist() for f in ("upper0", "upper", "lower0", "lower")},
        "spec": {"A": spec.A.tolist(), "theta": list(spec.theta), "power": list(spec.power)},
    }
    if fit is not None:
        out["constraints"] = {name: c for name, c in zip(LOADING_NAMES, fit.constrained)}
        out["fit"] = {"loglik": fit.loglik, "start_loglik": fit.start_loglik,
                      "n_params": fit.n_params, "evaluations": fit.evaluations,
                      "iterations": fit.iterations, "converged": fit.converged}
    return out


def params_from_dict(d: dict) -> tuple[FactorLoadings, CovarianceSpec]:
    """Accepts the full form written by :func:`params_to_dict` or the short
    form ``{"alpha_U": [...], "alpha_L": [...], "theta": [...]}`` for the
    equal-weight two-factor covariance."""
    if "loadings" in d:
        L = FactorLoadings(**{k: np.asarray(d["loadings"][k], dtype=float)
                              for k in ("upper0", "upper", "lower0", "lower")})
    elif "alpha_U" in d and "alpha_L" in d:
        L = FactorLoadings.from_vectors(d["alpha_U"], d["alpha_L"])
    else:
        raise ValueError("parameters need 'loadings' or 'alpha_U'/'alpha_L'")
    if "spec" in d:
        s = d["spec"]
        spec = CovarianceSpec(A=np.asarray(s["A"], dtype=float), theta=tuple(s["theta"]),
                              power=tuple(s.get("power", [1.0] * len(s["theta"]))))
    elif "theta" in d:
        if "rho" in d and d["rho"] is not None:
            spec = CovarianceSpec.eq6(d["rho"], d["theta"], d.get("power"))
        else:
            spec = CovarianceSpec.eq6([math.sqrt(0.5)] * L.p, d["theta"], d.get("power"))
    else:
        raise ValueError("parameters need 'spec' or 'theta'")
    if spec.p != L.p:
        raise ValueError("loadings and covariance disagree on the number of variables")
    return L, spec


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else (v if isinstance(v, str) else fmt(v)) for v in row])
