"""Run outputs: diagnostics CSV, binary state snapshots, JSON manifest.

CSV: one comment line of run metadata (`# coralsim-diagnostics-v1 key=value
...`), one header line with the column names in record-field order, then one
row per record with every value printed at 17 significant digits — enough
for float64 to round-trip exactly, which the offline verifier and the
bitwise-determinism guarantees rely on.

Snapshot: raw little-endian binary — magic, version, grid dims/extents, the
scalar bookkeeping the restart needs (time, accumulators, frozen initial-data
functionals), then the n, c, m, P cell arrays and the three velocity face
arrays in axis order, all float64 C-order.  Byte-exact: write(read(x)) is
the identity.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .diagnostics import DiagnosticsRecord
from .fields import Grid, ScalarField, VectorField
from .stepping import SimState

__all__ = [
    "DiagnosticsCsvWriter",
    "write_diagnostics_row",
    "read_diagnostics_csv",
    "write_snapshot",
    "read_snapshot",
    "write_manifest",
]

_CSV_MAGIC = "coralsim-diagnostics-v1"
SNAPSHOT_MAGIC = b"CRLSNAP1"
_SNAPSHOT_VERSION = 1

# scalar state carried by a snapshot besides the arrays, in file order
_STATE_SCALARS = (
    "t", "acc_nm", "acc_grad_m", "acc_grad_c", "acc_grad_u", "sup_m_linf",
    "mass_n0", "mass_m0", "c0_linf", "c0_mass", "half_m0_sq",
    "worst_energy_rel", "last_div_l2", "last_dt",
)


class DiagnosticsCsvWriter:
    """Streams records to CSV; header and metadata exactly once per file."""

    def __init__(self, stream, meta: dict | None = None):
        self._stream = stream
        self._header_written = False
        self._meta = dict(meta or {})

    def write_row(self, rec: DiagnosticsRecord) -> None:
        if not self._header_written:
            pairs = " ".join(f"{k}={v}" for k, v in sorted(self._meta.items()))
            self._stream.write(f"# {_CSV_MAGIC} {pairs}".rstrip() + "\n")
            self._stream.write(",".join(DiagnosticsRecord.column_names()) + "\n")
            self._header_written = True
        self._stream.write(",".join(f"{v:.17g}" for v in rec.as_tuple()) + "\n")
        self._stream.flush()


def write_diagnostics_row(rec: DiagnosticsRecord, sink: DiagnosticsCsvWriter) -> None:
    sink.write_row(rec)


def read_diagnostics_csv(path) -> tuple[list[DiagnosticsRecord], dict]:
    """Read a diagnostics CSV back into records plus the metadata dict."""
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith(f"# {_CSV_MAGIC}"):
        raise ValueError(f"{path}: not a diagnostics CSV (missing magic comment)")
    meta = {}
    for pair in lines[0].split()[2:]:
        key, _, value = pair.partition("=")
        meta[key] = value
    if len(lines) < 2:
        raise ValueError(f"{path}: missing header line")
    names = tuple(lines[1].split(","))
    if names != DiagnosticsRecord.column_names():
        raise ValueError(f"{path}: column set does not match this build "
                         f"(got {len(names)} columns)")
    records = []
    for ln in lines[2:]:
        values = [float(s) for s in ln.split(",")]
        if len(values) != len(names):
            raise ValueError(f"{path}: row with {len(values)} values, "
                             f"expected {len(names)}")
        records.append(DiagnosticsRecord(*values))
    return records, meta


def write_snapshot(state: SimState, path) -> None:
    grid = state.grid
    scalars = [getattr(state, name) for name in _STATE_SCALARS]
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<I", _SNAPSHOT_VERSION))
        fh.write(struct.pack("<QQQ", *grid.dims))
        fh.write(struct.pack("<ddd", *grid.extent))
        fh.write(struct.pack("<Q", state.step_index))
        fh.write(struct.pack(f"<{len(scalars)}d", *scalars))
        for arr in (state.n.values, state.c.values, state.m.values,
                    state.P.values, *state.u.components):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(fh, nbytes: int, what: str) -> bytes:
    buf = fh.read(nbytes)
    if len(buf) != nbytes:
        raise ValueError(f"snapshot truncated while reading {what}")
    return buf


def read_snapshot(path) -> SimState:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, len(SNAPSHOT_MAGIC), "magic")
        if magic != SNAPSHOT_MAGIC:
            raise ValueError(f"{path}: bad snapshot magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != _SNAPSHOT_VERSION:
            raise ValueError(f"{path}: unsupported snapshot version {version}")
        dims = struct.unpack("<QQQ", _read_exact(fh, 24, "dims"))
        extent = struct.unpack("<ddd", _read_exact(fh, 24, "extent"))
        grid = Grid(tuple(int(d) for d in dims), extent)
        (step_index,) = struct.unpack("<Q", _read_exact(fh, 8, "step index"))
        scalars = struct.unpack(
            f"<{len(_STATE_SCALARS)}d",
            _read_exact(fh, 8 * len(_STATE_SCALARS), "state scalars"))

        def cells(what):
            n = int(np.prod(grid.dims))
            raw = _read_exact(fh, 8 * n, what)
            return np.frombuffer(raw, dtype="<f8").astype(np.float64) \
                .reshape(grid.dims)

        n_vals = cells("n")
        c_vals = cells("c")
        m_vals = cells("m")
        p_vals = cells("P")
        comps = []
        for a in range(3):
            shape = grid.face_shape(a)
            raw = _read_exact(fh, 8 * int(np.prod(shape)), f"u[{a}]")
            comps.append(np.frombuffer(raw, dtype="<f8").astype(np.float64)
                         .reshape(shape))
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after snapshot payload")

    named = dict(zip(_STATE_SCALARS, scalars))
    return SimState(
        t=named["t"], step_index=int(step_index),
        n=ScalarField(grid, n_vals), c=ScalarField(grid, c_vals),
        m=ScalarField(grid, m_vals), u=VectorField(grid, comps),
        P=ScalarField(grid, p_vals),
        **{k: named[k] for k in _STATE_SCALARS if k != "t"},
    )


def write_manifest(manifest: dict, path) -> None:
    """Atomic JSON write: temp file in the target directory, then rename."""
    directory = os.path.dirname(os.fspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".manifest.tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise
