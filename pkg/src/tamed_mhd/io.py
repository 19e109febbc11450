"""Configuration documents, binary snapshots and diagnostics CSV files.

Configs are TOML with fixed sections; every key is typed and defaulted and
unknown keys are rejected.  Snapshots store spectral coefficients:

    "STMH" | u32 version | u32 n | u32 cutoff | f64 time | f64 N |
    6 x (n^3 complex128, row-major FFT order) | u32 CRC-32 of all preceding bytes

all little-endian.
"""

from __future__ import annotations

import copy
import csv
import struct
import zlib
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from .diagnostics import CSV_COLUMNS, DiagnosticsRecord
from .integrator import InitialCondition, SimConfig
from .noise import make_family
from .operators import TamingSpec
from .spectral import GridSpec, SpectralError, StatePair


class ConfigError(ValueError):
    pass


# section -> key -> (type, default); "floats"/"ints" are lists
SCHEMA = {
    "grid": {"n": (int, 16), "cutoff": (int, -1)},
    "taming": {"N": (float, 100.0), "C_taming": (float, 2.0), "C1": (float, 2.0), "blend": (str, "quintic_hermite")},
    "noise": {"family": (str, "default"), "K": (int, 16), "amplitude": (float, 1.0 / 72.0), "h_amplitude": (float, 0.25)},
    "forcing": {"amplitude": (float, 0.5)},
    "integrator": {
        "dt": (float, 1e-3), "T": (float, 1.0), "galerkin_n": (int, -1), "blowup_guard": (float, 1e6),
        "record_every": (int, 1), "snapshot_every": (int, 0), "seed": (int, 0), "stream_id": (int, 0),
    },
    "experiment": {
        "ic_kind": (str, "random_decay"), "ic_k": ("ints", [1, 1, 0]), "ic_polarization": (int, 1),
        "ic_amplitude": (float, 1.0), "ic_field": (str, "both"), "ic_slope": (float, 2.0), "ic_seed": (int, 0),
        "paths": (int, 16), "deltas": ("floats", [1e-3, 1e-4, 1e-5]), "delta_mode": ("ints", [1, 0, 0]),
        "stop_radius": (float, -1.0), "taming_levels": ("floats", [10.0, 20.0, 40.0]),
        "dt_levels": ("floats", [4e-3, 2e-3, 1e-3]), "dt_ref": (float, 2.5e-4), "feller_t": (float, 0.5),
        "feller_deltas": ("floats", [1e-2, 1e-3, 1e-4]), "ergodic_observable": (str, "h2_sq"),
        "verify_samples": (int, 100),
    },
    "output": {"dir": (str, "out"), "csv": (bool, True), "snapshots": (bool, True)},
}


def _check_value(section, key, kind, value):
    where = f"{section}.{key}"
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if not isinstance(value, list):
        raise ConfigError(f"{where}: expected a list, got {value!r}")
    elem = int if kind == "ints" else float
    return [_check_value(section, key, elem, v) for v in value]


def parse_document(text: str) -> dict:
    """Parse and fully default a config document; the result is canonical."""
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    unknown = set(raw) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown section(s): {sorted(unknown)}")
    doc = {}
    for section, keys in SCHEMA.items():
        given = raw.get(section, {})
        if not isinstance(given, dict):
            raise ConfigError(f"{section} must be a table")
        bad = set(given) - set(keys)
        if bad:
            raise ConfigError(f"unknown key(s) in [{section}]: {sorted(bad)}")
        doc[section] = {}
        for key, (kind, default) in keys.items():
            val = given.get(key, copy.deepcopy(default))
            doc[section][key] = _check_value(section, key, kind, val)
    return doc


def serialize_document(doc: dict) -> str:
    """Canonical TOML text: schema order, every key present."""
    ordered = {s: {k: doc[s][k] for k in keys} for s, keys in SCHEMA.items()}
    return tomli_w.dumps(ordered)


def config_from_document(doc: dict) -> SimConfig:
    g = doc["grid"]
    try:
        grid = GridSpec(g["n"], None if g["cutoff"] < 0 else g["cutoff"])
    except SpectralError as exc:
        raise ConfigError(str(exc)) from exc
    t = doc["taming"]
    nz = doc["noise"]
    if nz["family"] not in ("default", "silent"):
        raise ConfigError(f"noise.family must be default or silent, got {nz['family']!r}")
    try:
        taming = TamingSpec(t["N"], t["C_taming"], t["C1"], t["blend"])
        if nz["family"] == "silent":
            family = make_family("silent", {"K": nz["K"]})
        else:
            family = make_family("default", {
                "K": nz["K"], "amplitude": nz["amplitude"], "h_amplitude": nz["h_amplitude"],
                "forcing": doc["forcing"]["amplitude"],
            }, grid)
        e = doc["experiment"]
        ic = InitialCondition(
            kind=e["ic_kind"], k=tuple(e["ic_k"]), polarization=e["ic_polarization"], amplitude=e["ic_amplitude"],
            field=e["ic_field"], slope=e["ic_slope"], seed=e["ic_seed"],
        )
        it = doc["integrator"]
        return SimConfig(
            grid=grid, taming=taming, family=family, dt=it["dt"], T=it["T"], seed=it["seed"],
            stream_id=it["stream_id"], ic=ic, galerkin_n=None if it["galerkin_n"] < 0 else it["galerkin_n"],
            blowup_guard=it["blowup_guard"], record_every=it["record_every"],
            snapshot_every=it["snapshot_every"], echo=doc,
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(text: str) -> SimConfig:
    """Config text to a SimConfig whose ``echo`` holds the defaulted document."""
    return config_from_document(parse_document(text))


def load_config(path) -> SimConfig:
    return parse_config(Path(path).read_text())


# --------------------------------------------------------------------------
# snapshots

MAGIC = b"STMH"
VERSION = 1
_HEADER = struct.Struct("<4sIIIdd")
_CRC = struct.Struct("<I")


class SnapshotError(ValueError):
    pass


class SnapshotCRCError(SnapshotError):
    pass


class SnapshotVersionError(SnapshotError):
    pass


class SnapshotGridError(SnapshotError):
    pass


def snapshot_bytes(y: StatePair, t: float, N: float) -> bytes:
    if y.coeffs.shape != (6,) + y.grid.shape:
        raise SnapshotError("snapshots hold a single unbatched state")
    head = _HEADER.pack(MAGIC, VERSION, y.grid.n, y.grid.cutoff, float(t), float(N))
    body = np.ascontiguousarray(y.coeffs, dtype="<c16").tobytes(order="C")
    payload = head + body
    return payload + _CRC.pack(zlib.crc32(payload))


def write_snapshot(path, y: StatePair, t: float, N: float):
    Path(path).write_bytes(snapshot_bytes(y, t, N))


def parse_snapshot(data: bytes, grid: GridSpec | None = None) -> tuple[StatePair, float, float]:
    if len(data) < _HEADER.size + _CRC.size:
        raise SnapshotCRCError("snapshot truncated")
    payload, (crc,) = data[:-_CRC.size], _CRC.unpack(data[-_CRC.size:])
    if zlib.crc32(payload) != crc:
        raise SnapshotCRCError("snapshot CRC mismatch")
    magic, version, n, cutoff, t, N = _HEADER.unpack_from(payload)
    if magic != MAGIC:
        raise SnapshotError(f"bad magic {magic!r}")
    if version != VERSION:
        raise SnapshotVersionError(f"unsupported snapshot version {version}")
    if grid is not None and (grid.n, grid.cutoff) != (n, cutoff):
        raise SnapshotGridError(f"snapshot grid n={n}, cutoff={cutoff} does not match n={grid.n}, cutoff={grid.cutoff}")
    file_grid = GridSpec(n, cutoff)
    expected = _HEADER.size + 6 * n**3 * 16
    if len(payload) != expected:
        raise SnapshotError(f"payload size {len(payload)} does not match grid (expected {expected})")
    coeffs = np.frombuffer(payload, dtype="<c16", offset=_HEADER.size).reshape((6, n, n, n))
    return StatePair(coeffs.astype(complex), file_grid), t, N


def read_snapshot(path, grid: GridSpec | None = None) -> tuple[StatePair, float, float]:
    """Returns (state, time, taming N); rejects CRC, version and grid mismatches."""
    return parse_snapshot(Path(path).read_bytes(), grid)


# --------------------------------------------------------------------------
# diagnostics CSV

def emit_diagnostics_csv(records, path):
    records = list(records)
    if not records:
        raise ValueError("no diagnostics records to write")
    ts = [r.t for r in records]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise ValueError("record times must be strictly increasing")
    lines = [",".join(CSV_COLUMNS)]
    for r in records:
        lines.append(",".join("%.17g" % v for v in r.as_row()))
    Path(path).write_text("\n".join(lines) + "\n")


def read_diagnostics_csv(path) -> list[DiagnosticsRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV header {header}")
        return [DiagnosticsRecord.from_row(row) for row in reader if row]
