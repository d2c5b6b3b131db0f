"""Binary matrix files with key=value sidecars.

Matrix layout (little endian): ``b"WLSM"``, u32 version, u64 rows, u64 cols,
then rows*cols float64 values in column-major order.  The sidecar
``<path>.meta`` holds one ``key=value`` per line; floats are written with
``repr`` so they round-trip exactly.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .basis import SpatialBasis, WeightingMatrix
from .core_ode import Trajectory
from .errors import ConfigError

MAGIC = b"WLSM"
VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


def write_matrix(path, M):
    M = np.asarray(M, dtype="<f8")
    if M.ndim == 1:
        M = M[:, None]
    if M.ndim != 2:
        raise ConfigError("only matrices can be written")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, M.shape[0], M.shape[1]))
        fh.write(M.tobytes(order="F"))


def read_matrix(path):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if len(data) < _HEADER.size:
        raise ConfigError(f"{path}: truncated header")
    magic, version, rows, cols = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ConfigError(f"{path}: not a WLSM file")
    if version != VERSION:
        raise ConfigError(f"{path}: unsupported version {version}")
    body = data[_HEADER.size:]
    if len(body) != 8 * rows * cols:
        raise ConfigError(f"{path}: expected {rows}x{cols} values")
    return np.frombuffer(body, dtype="<f8").reshape((rows, cols), order="F").astype(float)


def meta_path(path):
    return Path(str(path) + ".meta")


def _fmt(value):
    if isinstance(value, (list, tuple, np.ndarray)):
        return ",".join(_fmt(v) for v in np.asarray(value).ravel().tolist())
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_meta(path, meta):
    lines = []
    for key, value in meta.items():
        text = _fmt(value)
        if "\n" in text or "=" in key:
            raise ConfigError(f"metadata entry {key!r} cannot be written")
        lines.append(f"{key}={text}")
    meta_path(path).write_text("\n".join(lines) + "\n")


def read_meta(path):
    p = meta_path(path)
    if not p.exists():
        return {}
    out = {}
    for line in p.read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{p}: malformed line {line!r}")
        out[key.strip()] = value.strip()
    return out


def parse_floats(text):
    return np.array([float(v) for v in text.split(",")]) if text else np.empty(0)


def save_trajectory(path, traj, **meta):
    """States are stored one snapshot per column; the grid goes to the sidecar."""
    write_matrix(path, traj.states.T)
    info = {"kind": "trajectory"}
    info.update({k: v for k, v in traj.meta.items() if k != "grid"})
    info.update(meta)
    info["grid"] = traj.times
    write_meta(path, info)


def load_trajectory(path):
    X = read_matrix(path)
    meta = read_meta(path)
    if "grid" not in meta:
        raise ConfigError(f"{path}: trajectory sidecar has no grid")
    times = parse_floats(meta.pop("grid"))
    return Trajectory(times, X.T, meta)


def save_basis(path, basis, **meta):
    """``[V | x_ref]`` as one N x (K+1) matrix."""
    write_matrix(path, np.column_stack([basis.V, basis.x_ref]))
    info = {"kind": "basis", "K": basis.K}
    if basis.energy is not None:
        info["energy"] = float(basis.energy)
    info.update(meta)
    write_meta(path, info)


def load_basis(path):
    M = read_matrix(path)
    meta = read_meta(path)
    energy = float(meta["energy"]) if "energy" in meta else None
    return SpatialBasis(M[:, :-1], M[:, -1], energy)


def save_weighting(path, weighting, **meta):
    rows = np.arange(weighting.dim) if weighting.rows is None else weighting.rows
    write_matrix(path, rows.astype(float))
    info = {"kind": "weighting", "dim": weighting.dim, "type": weighting.kind}
    info.update(meta)
    write_meta(path, info)


def load_weighting(path):
    meta = read_meta(path)
    rows = read_matrix(path)[:, 0].astype(int)
    dim = int(meta.get("dim", rows.size))
    if meta.get("type") == "Identity":
        return WeightingMatrix.identity(dim)
    return WeightingMatrix.sampling(dim, rows)
