# helpers/field_io.py
import hashlib
import json
import logging
import platform
from pathlib import Path
from typing import Any, Dict, List, Union

import numpy as np
import pandas as pd
import scipy

from helpers.field_classes import (DomainGrid, FieldValidationError, MetricField, ScalarField, SymTensorField2,
                                   VectorFieldV)
from helpers.wave_dtn import DtnMatrix

# Get a logger for this specific module
log = logging.getLogger(__name__)

COMPONENTS = ("scalar", "vec", "sym2", "metric")
FLOAT_FORMAT = "%.17g"

PathLike = Union[str, Path]


# --- JSON ---

def encode_json(data: Any) -> str:
    """Canonical JSON: sorted keys, compact separators, numpy scalars and arrays unwrapped."""
    def _default(o):
        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, Path):
            return str(o)
        raise TypeError(f"cannot encode {type(o).__name__}")

    return json.dumps(data, sort_keys=True, separators=(",", ":"), default=_default)


def content_hash(data: Any) -> str:
    return hashlib.sha256(encode_json(data).encode("utf-8")).hexdigest()


def _write_json(path: Path, data: dict):
    path.write_text(json.dumps(json.loads(encode_json(data)), indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --- Field dumps ---

def _component_array(field) -> (str, np.ndarray):
    if isinstance(field, MetricField):
        return "metric", field.g
    if isinstance(field, SymTensorField2):
        return "sym2", field.s
    if isinstance(field, VectorFieldV):
        return "vec", field.v
    if isinstance(field, ScalarField):
        return "scalar", np.asarray(field.values, dtype=float)
    raise FieldValidationError(f"cannot dump a {type(field).__name__}")


def write_field(path: PathLike, field) -> Path:
    """Raw little-endian float64 row-major `.bin` plus a `.json` sidecar describing the grid."""
    path = Path(path).with_suffix("")
    path.parent.mkdir(parents=True, exist_ok=True)
    components, arr = _component_array(field)
    grid = field.grid
    header = grid.header()
    header["components"] = components
    np.ascontiguousarray(arr, dtype="<f8").tofile(path.with_suffix(".bin"))
    _write_json(path.with_suffix(".json"), header)
    log.debug(f"Wrote {components} field to {path}.bin")
    return path.with_suffix(".bin")


def read_field(path: PathLike):
    path = Path(path).with_suffix("")
    header = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    components = header.get("components")
    if components not in COMPONENTS:
        raise FieldValidationError(f"unknown component kind '{components}' in {path}.json")
    grid = DomainGrid(shape=tuple(header["shape"]), spacing=tuple(header["spacing"]), origin=tuple(header["origin"]),
                      shape_kind=header["shape_kind"], radius=header["radius"],
                      collar_width=header["collar_width"], center=tuple(header["center"]))
    d = grid.dim
    trailing = {"scalar": (), "vec": (d,), "sym2": (d, d), "metric": (d, d)}[components]
    arr = np.fromfile(path.with_suffix(".bin"), dtype="<f8")
    expected = int(np.prod(grid.shape + trailing))
    if arr.size != expected:
        raise FieldValidationError(f"{path}.bin holds {arr.size} values, header implies {expected}")
    arr = arr.reshape(grid.shape + trailing)
    if components == "metric":
        return MetricField(grid, arr, enforce_collar=False)
    if components == "sym2":
        return SymTensorField2(grid, arr)
    if components == "vec":
        return VectorFieldV(grid, arr, zero_on_boundary=False)
    return ScalarField(grid, arr)


def write_dtn(path: PathLike, dtn: DtnMatrix) -> Path:
    """JSON header (basis labels, Γ^♮ nodes, dt, T) plus `.bin` traces (basis, time, node)."""
    path = Path(path).with_suffix("")
    path.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(dtn.outputs, dtype="<f8").tofile(path.with_suffix(".bin"))
    header = {
        "grid": dtn.grid.header(),
        "dt": dtn.dt,
        "T": dtn.dt * (dtn.outputs.shape[1] - 1),
        "gamma_sharp": [int(i) for i in dtn.gamma_sharp],
        "basis": list(dtn.basis_labels),
        "shape": list(dtn.outputs.shape),
    }
    _write_json(path.with_suffix(".json"), header)
    return path.with_suffix(".bin")


# --- CSV ---

def write_csv(path: PathLike, rows: Union[List[Dict], pd.DataFrame], columns: List[str] = None) -> Path:
    """Full-precision CSV with a header row; column order fixed by `columns` when given."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(rows, columns=columns)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    log.info(f"Wrote {len(frame)} rows to {path}")
    return path


def geodesic_frame(times: np.ndarray, x: np.ndarray, xi: np.ndarray) -> pd.DataFrame:
    d = x.shape[-1]
    data = {"t": times}
    data.update({f"x{k + 1}": x[:, k] for k in range(d)})
    data.update({f"xi{k + 1}": xi[:, k] for k in range(d)})
    return pd.DataFrame(data)


def sinogram_frame(sino) -> pd.DataFrame:
    b = sino.bundle
    d = b.points.shape[-1]
    data = {f"y{k + 1}": b.points[:, k] for k in range(d)}
    data.update({f"theta{k + 1}": b.directions[:, k] for k in range(d)})
    data["mu"] = b.mu
    data["value"] = sino.values
    return pd.DataFrame(data)


# --- Run manifest ---

def versions() -> dict:
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "pandas": pd.__version__}


def write_manifest(out_dir: PathLike, manifest: dict) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "manifest.json"
    _write_json(path, manifest)
    return path
