"""Reading and writing state tables, traces and JSON reports.

State files are comma-separated with ``# key: value`` header lines::

    # model: sqcoupled
    # L: 3.141592653589793
    ...
    x,V,U_1
    0,1.16,1.35
    ...

Floats are written with 17 significant digits so a state survives a
round trip bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
import scipy

from . import __version__
from .grid import Grid
from .model import SystemModel, get_model, perturbed_model
from .stationary import StationaryState

FLOAT_FMT = "%.17g"


def versions() -> Dict[str, str]:
    return {"rdode": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def metadata(cfg_hash: str) -> dict:
    return {"config_hash": cfg_hash, "versions": versions()}


def _header_lines(meta: dict):
    for key, val in meta.items():
        if isinstance(val, dict):
            val = json.dumps(val, sort_keys=True)
        yield f"# {key}: {val}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, complex):
        return [_jsonable(obj.real), _jsonable(obj.imag)]
    return obj


def write_json(path, payload: dict, cfg_hash: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"meta": metadata(cfg_hash), **_jsonable(payload)}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def write_table(path, columns: Dict[str, np.ndarray], meta: dict, fmt: str = FLOAT_FMT) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    data = np.column_stack([np.asarray(columns[k], dtype=float) for k in names])
    with path.open("w") as fh:
        for line in _header_lines(meta):
            fh.write(line + "\n")
        fh.write(",".join(names) + "\n")
        np.savetxt(fh, data, delimiter=",", fmt=fmt)
    return path


def read_table(path) -> Tuple[dict, Dict[str, np.ndarray]]:
    path = Path(path)
    meta: dict = {}
    names = None
    with path.open() as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].partition(":")
                meta[key.strip()] = val.strip()
                continue
            names = line.strip().split(",")
            break
        if names is None:
            raise ValueError(f"{path}: no column header")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[1] != len(names):
        raise ValueError(f"{path}: {data.shape[1]} columns but {len(names)} names")
    return meta, {name: data[:, i] for i, name in enumerate(names)}


def write_state(path, state: StationaryState, grid: Grid, model_spec: str, cfg_hash: str) -> Path:
    meta = {
        "kind": "stationary-state",
        "model": model_spec,
        "L": repr(float(grid.L)),
        "M": grid.M,
        "d_ell": repr(float(state.d_ell)),
        "v_bar": "none" if state.v_bar is None else repr(float(state.v_bar)),
        "residual_f": repr(state.residual_f),
        "residual_pde": repr(state.residual_pde),
        "provenance": state.provenance,
        **metadata(cfg_hash),
    }
    cols = {"x": grid.nodes, "V": state.V}
    for i in range(state.n):
        cols[f"U_{i + 1}"] = state.U[i]
    return write_table(path, cols, meta)


def read_state(path) -> Tuple[StationaryState, Grid, SystemModel, str]:
    """Load a state file; returns the state, its grid, the model it is stationary for, and the base spec.

    Points on a continuation branch at ``d_ell != 1`` are stationary for the
    perturbed model, which is rebuilt here.
    """
    meta, cols = read_table(path)
    try:
        spec = meta["model"]
        L, M = float(meta["L"]), int(meta["M"])
        d_ell = float(meta.get("d_ell", "1.0"))
        vb = meta.get("v_bar", "none")
        v_bar = None if vb == "none" else float(vb)
    except KeyError as exc:
        raise ValueError(f"{path}: missing header field {exc}") from None
    grid = Grid(L, M)
    base = get_model(spec)
    V = cols["V"]
    if V.size != M:
        raise ValueError(f"{path}: {V.size} rows but M = {M}")
    U = np.vstack([cols[f"U_{i + 1}"] for i in range(base.n)])
    model = base
    if d_ell != 1.0:
        if v_bar is None:
            raise ValueError(f"{path}: d_ell != 1 requires v_bar")
        model = perturbed_model(base, d_ell, v_bar)
    state = StationaryState(
        U=U, V=V,
        residual_f=float(meta.get("residual_f", "nan")),
        residual_pde=float(meta.get("residual_pde", "nan")),
        provenance=meta.get("provenance", "file"),
        model_name=model.name, d_ell=d_ell, v_bar=v_bar,
    )
    return state, grid, model, spec


def write_trace(path, trace, cfg_hash: str, extra: Optional[dict] = None) -> Path:
    comps = np.asarray(trace.component_norms, dtype=float)
    cols = {"t": trace.times, "deviation": trace.deviation_norms}
    n = comps.shape[1] - 1
    for i in range(n):
        cols[f"dev_U_{i + 1}"] = comps[:, i]
    cols["dev_V"] = comps[:, n]
    meta = {"kind": "trace", **(extra or {}), **metadata(cfg_hash)}
    return write_table(path, cols, meta)
