"""MHDW snapshot files and ledger CSV.

Snapshot layout (all little-endian)::

    b"MHDW" | u16 major | u16 minor | u32 N | f64 L | f64 t | u32 count
    count x (u16 name length, utf-8 name)
    u32 metadata length, utf-8 JSON metadata
    count x N^3 f64 samples, x1 varying fastest

Readers refuse an unknown major version and warn on a newer minor version.
"""

from __future__ import annotations

import csv
import json
import struct
import warnings
from pathlib import Path

import numpy as np

from .energy import LEDGER_TERMS, EnergyLedger
from .spectral import Grid, ScalarField, TensorField, VectorField

MAGIC = b"MHDW"
FORMAT_MAJOR = 1
FORMAT_MINOR = 0
LEDGER_COLUMNS = ("t_a", "t_b") + LEDGER_TERMS + ("slack",)

_HEAD = struct.Struct("<4sHHIddI")


class SnapshotFormatError(ValueError):
    pass


def write_fields(path, grid: Grid, t: float, fields: dict, metadata: dict | None = None) -> None:
    """Write named real arrays of shape ``(N, N, N)`` to an MHDW file."""
    n = grid.n_per_axis
    meta = {"dealias_fraction": grid.dealias_fraction}
    meta.update(metadata or {})
    parts = [_HEAD.pack(MAGIC, FORMAT_MAJOR, FORMAT_MINOR, n, grid.box_length, float(t), len(fields))]
    for name in fields:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(blob)) + blob)
    for name, arr in fields.items():
        arr = np.asarray(arr, dtype="<f8")
        if arr.shape != (n, n, n):
            raise ValueError(f"field {name!r} has shape {arr.shape}, expected {(n, n, n)}")
        parts.append(arr.tobytes(order="F"))
    Path(path).write_bytes(b"".join(parts))


def read_fields(path):
    """Return ``(grid, t, fields, metadata)`` from an MHDW file."""
    data = Path(path).read_bytes()
    if len(data) < _HEAD.size:
        raise SnapshotFormatError("file too short for an MHDW header")
    magic, major, minor, n, box, t, count = _HEAD.unpack_from(data, 0)
    if magic != MAGIC:
        raise SnapshotFormatError(f"bad magic {magic!r}; not an MHDW snapshot")
    if major != FORMAT_MAJOR:
        raise SnapshotFormatError(f"unsupported snapshot major version {major}")
    if minor > FORMAT_MINOR:
        warnings.warn(
            f"snapshot minor version {minor} is newer than {FORMAT_MINOR}; reading known fields",
            stacklevel=2,
        )
    pos = _HEAD.size
    names = []
    try:
        for _ in range(count):
            (length,) = struct.unpack_from("<H", data, pos)
            pos += 2
            names.append(data[pos : pos + length].decode("utf-8"))
            pos += length
        (length,) = struct.unpack_from("<I", data, pos)
        pos += 4
        meta = json.loads(data[pos : pos + length].decode("utf-8"))
        pos += length
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SnapshotFormatError(f"corrupt snapshot header: {exc}") from exc
    size = n**3 * 8
    if len(data) - pos != count * size:
        raise SnapshotFormatError(
            f"payload has {len(data) - pos} bytes, expected {count * size} (truncated or padded)"
        )
    fields = {}
    for i, name in enumerate(names):
        chunk = np.frombuffer(data, dtype="<f8", count=n**3, offset=pos + i * size)
        fields[name] = chunk.reshape((n, n, n), order="F").astype(float)
    grid = Grid(n, box, meta.get("dealias_fraction", 2.0 / 3.0))
    return grid, t, fields, meta


def _components(prefix: str, f, rank: int) -> dict:
    if f is None:
        return {}
    a = f.physical
    if rank == 0:
        return {prefix: a}
    if rank == 1:
        return {f"{prefix}{i + 1}": a[i] for i in range(3)}
    return {f"{prefix}{i + 1}{j + 1}": a[i, j] for i in range(3) for j in range(3)}


def write_snapshot(state, path, metadata: dict | None = None) -> None:
    """Physical samples of every non-empty field of a :class:`SimState`."""
    grid = state.u.grid
    fields = {}
    for name, rank in (("u", 1), ("b", 1), ("p", 0), ("q", 0), ("F", 2), ("G", 2), ("v", 1), ("c", 1)):
        fields.update(_components(name, getattr(state, name), rank))
    write_fields(path, grid, state.t, fields, metadata)


def _gather(fields: dict, grid: Grid, prefix: str, rank: int):
    if rank == 0:
        return ScalarField(grid, physical=fields[prefix]) if prefix in fields else None
    if rank == 1:
        keys = [f"{prefix}{i + 1}" for i in range(3)]
        if not all(k in fields for k in keys):
            return None
        return VectorField(grid, physical=np.stack([fields[k] for k in keys]))
    keys = [[f"{prefix}{i + 1}{j + 1}" for j in range(3)] for i in range(3)]
    if not all(k in fields for row in keys for k in row):
        return None
    return TensorField(grid, physical=np.stack([np.stack([fields[k] for k in row]) for row in keys]))


def read_snapshot(path):
    from .evolution import SimState

    grid, t, fields, _ = read_fields(path)
    u, b = _gather(fields, grid, "u", 1), _gather(fields, grid, "b", 1)
    if u is None or b is None:
        raise SnapshotFormatError("snapshot lacks the u and b components")
    return SimState(
        t=t,
        u=u,
        b=b,
        p=_gather(fields, grid, "p", 0),
        q=_gather(fields, grid, "q", 0),
        F=_gather(fields, grid, "F", 2),
        G=_gather(fields, grid, "G", 2),
        v=_gather(fields, grid, "v", 1),
        c=_gather(fields, grid, "c", 1),
    )


def write_dss_generator(gen, path, n: int = 64) -> None:
    """Sample ``g`` on the cube ``[-lam, lam)^3`` (zero off the annulus) with lambda in the metadata."""
    box = 2.0 * gen.lam
    grid = Grid(n, box)
    x = np.stack(np.meshgrid(*(3 * [(np.arange(n) - n // 2) * grid.h]), indexing="ij"))
    vals = gen.g(x)
    r = np.sqrt(np.sum(x**2, axis=0))
    vals = np.where((r > 1.0) & (r < gen.lam), vals, 0.0)
    meta = {"kind": "dss_generator", "lambda": gen.lam, "support": list(gen.support), "origin_index": n // 2}
    write_fields(path, grid, 0.0, {f"g{i + 1}": vals[i] for i in range(3)}, meta)


def write_ledgers(rows, path) -> None:
    """CSV with the fixed column order and 17 significant digits per float."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LEDGER_COLUMNS)
        for row in rows:
            values = row.as_row() if isinstance(row, EnergyLedger) else list(row)
            w.writerow([format(float(v), ".17g") for v in values])


def read_ledgers(path) -> list[EnergyLedger]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if tuple(header) != LEDGER_COLUMNS:
            raise ValueError("ledger CSV header does not match the expected columns")
        out = []
        for rec in r:
            vals = [float(v) for v in rec]
            out.append(EnergyLedger(vals[0], vals[1], dict(zip(LEDGER_TERMS, vals[2:-1]))))
        return out
