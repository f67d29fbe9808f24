"""Binary dumps, CSV exports and configuration digests.

Field dump layout (little-endian)::

    b"CTRLFLD1"
    u32 n, u32 n_components, u32 n_t, u32 n_x, u32 role tag
    f64 T
    16 bytes config digest
    f64 payload, shape (n_t, n_x**n, n_components), row-major

Trajectory dump layout::

    b"CTRLTRJ1"
    u32 n_paths, u32 N, u32 n, u32 m, u32 n_control
    u64 seed
    f64 T
    16 bytes config digest
    f64 states (n_paths, N+1, n), unwrapped displacement (n_paths, n),
        noise (n_paths, N, m), controls (n_paths, N, n_control)

Every CSV file starts with a ``# config_digest=<hex>`` comment line.
"""

from __future__ import annotations

import csv
import hashlib
import struct
from pathlib import Path

import numpy as np

from .errors import InvalidArgument
from .fields import ControlField, ScalarField, SpaceTimeGrid
from .problem import TorusGeometry
from .sampler import TrajectoryBatch

FIELD_MAGIC = b"CTRLFLD1"
TRAJ_MAGIC = b"CTRLTRJ1"
ROLE_TAGS = {"generic": 0, "value": 1, "density": 2, "control": 3}
_TAG_ROLES = {v: k for k, v in ROLE_TAGS.items()}
_FIELD_HEAD = struct.Struct("<5Id16s")
_TRAJ_HEAD = struct.Struct("<5IQd16s")
DIGEST_BYTES = 16


def canonical_config(cfg: dict) -> str:
    """Sorted ``key=value`` lines with values normalised to strings."""
    lines = []
    for key in sorted(cfg):
        value = cfg[key]
        if isinstance(value, float):
            value = repr(value)
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def config_digest(cfg: dict) -> str:
    """Hex digest (32 characters) of the canonicalised configuration."""
    return hashlib.sha256(canonical_config(cfg).encode()).hexdigest()[: 2 * DIGEST_BYTES]


def _digest_bytes(digest: str | None) -> bytes:
    if digest is None:
        return bytes(DIGEST_BYTES)
    raw = bytes.fromhex(digest)
    if len(raw) != DIGEST_BYTES:
        raise InvalidArgument(f"digest must be {DIGEST_BYTES} bytes")
    return raw


def write_field(path, field, digest: str | None = None) -> Path:
    """Dump a scalar or control field."""
    path = Path(path)
    grid = field.grid
    if isinstance(field, ControlField):
        role, values = "control", field.values
    elif isinstance(field, ScalarField):
        role, values = field.role, field.values[..., None]
    else:
        raise InvalidArgument("can only dump scalar or control fields")
    head = _FIELD_HEAD.pack(
        grid.n, values.shape[-1], grid.n_t, grid.n_x, ROLE_TAGS[role], grid.T, _digest_bytes(digest)
    )
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(head)
        fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())
    return path


def read_field(path, geometry: TorusGeometry | None = None):
    """Load a field dump; returns ``(field, digest_hex)``."""
    data = Path(path).read_bytes()
    if data[:8] != FIELD_MAGIC:
        raise InvalidArgument(f"{path} is not a field dump")
    n, nc, n_t, n_x, tag, T, dig = _FIELD_HEAD.unpack_from(data, 8)
    payload = np.frombuffer(data, dtype="<f8", offset=8 + _FIELD_HEAD.size)
    values = payload.reshape(n_t, n_x**n, nc).astype(float)
    role = _TAG_ROLES.get(tag)
    if role is None:
        raise InvalidArgument(f"unknown role tag {tag}")
    if geometry is None:
        geometry = TorusGeometry(n, nc if role == "control" else 1, n)
    grid = SpaceTimeGrid(geometry, T, n_t, n_x)
    field = ControlField(grid, values) if role == "control" else ScalarField(grid, values[..., 0], role)
    return field, dig.hex()


def write_batch(path, batch: TrajectoryBatch, digest: str | None = None) -> Path:
    path = Path(path)
    P, N1, n = batch.states.shape
    m = batch.noise.shape[-1]
    nc = batch.controls.shape[-1]
    head = _TRAJ_HEAD.pack(P, N1 - 1, n, m, nc, batch.seed, batch.T, _digest_bytes(digest))
    with open(path, "wb") as fh:
        fh.write(TRAJ_MAGIC)
        fh.write(head)
        for arr in (batch.states, batch.unwrapped_displacement, batch.noise, batch.controls):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return path


def read_batch(path):
    """Load a trajectory dump; returns ``(batch, digest_hex)``."""
    data = Path(path).read_bytes()
    if data[:8] != TRAJ_MAGIC:
        raise InvalidArgument(f"{path} is not a trajectory dump")
    P, N, n, m, nc, seed, T, dig = _TRAJ_HEAD.unpack_from(data, 8)
    flat = np.frombuffer(data, dtype="<f8", offset=8 + _TRAJ_HEAD.size).astype(float)
    shapes = [(P, N + 1, n), (P, n), (P, N, m), (P, N, nc)]
    arrays, k = [], 0
    for s in shapes:
        size = int(np.prod(s))
        arrays.append(flat[k : k + size].reshape(s))
        k += size
    return TrajectoryBatch(T, seed, *arrays), dig.hex()


def write_csv(path, header, rows, digest: str | None = None) -> Path:
    """CSV with a digest comment line; ``None`` cells are written blank."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_digest={digest or ''}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            if isinstance(row, dict):
                row = [row.get(h) for h in header]
            w.writerow(["" if v is None else _fmt(v) for v in row])
    return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def read_csv(path):
    """Return ``(digest, header, rows)`` of a file written by :func:`write_csv`."""
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        digest = first.split("=", 1)[1] if first.startswith("# config_digest=") else None
        reader = csv.reader(fh)
        header = next(reader)
        return digest, header, list(reader)


def field_to_csv(path, field, digest: str | None = None) -> Path:
    """Long-format export: ``t, x1..xn, value`` (or ``u1..un'`` for controls)."""
    grid = field.grid
    vals = field.values if isinstance(field, ControlField) else field.values[..., None]
    nc = vals.shape[-1]
    names = ["value"] if isinstance(field, ScalarField) else [f"u{k + 1}" for k in range(nc)]
    header = ["t"] + [f"x{i + 1}" for i in range(grid.n)] + names
    t = np.repeat(grid.times, grid.n_nodes)
    x = np.tile(grid.points, (grid.n_t, 1))
    table = np.column_stack([t, x, vals.reshape(-1, nc)])
    return write_csv(path, header, table.tolist(), digest)
