"""Files: CSV tables, experiment configs and run manifests.

Floats are written with 17 significant digits so that every value
round-trips exactly and reruns produce byte-identical files.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .signal import GridConfig, Measurement, NoiseKind, SpikeTrain
from .solver import SolverOptions

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "config_hash",
    "format_cell",
    "format_float",
    "read_solution",
    "load_config",
    "parse_config",
    "read_csv",
    "read_measurement",
    "read_spikes",
    "write_csv",
    "write_json",
    "write_manifest",
]


class ConfigError(ValueError):
    """Invalid configuration or input file, with the offending field and line."""

    def __init__(self, message, field_path=None, line=None, source=None):
        self.field_path = field_path
        self.line = line
        self.source = source
        where = []
        if source:
            where.append(str(source))
        if line is not None:
            where.append(f"line {line}")
        if field_path:
            where.append(f"field '{field_path}'")
        prefix = ", ".join(where) + ": " if where else ""
        super().__init__(prefix + message)


def format_float(v):
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.17g}"


def format_cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    return str(v)


def write_csv(path, header, rows):
    """Write ``rows`` under ``header``; floats get 17 significant digits."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_cell(v) for v in row])
    return path


def read_csv(path, header):
    """Read a CSV whose first line must equal ``header``; returns a list of rows."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError("file not found", source=path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != list(header):
        raise ConfigError(f"expected header {','.join(header)}", line=1, source=path)
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ConfigError(f"expected {len(header)} columns, got {len(row)}", line=i, source=path)
    return rows[1:]


def _parse_rows(path, header, kinds):
    out = []
    for i, row in enumerate(read_csv(path, header), start=2):
        try:
            out.append([kind(v) for kind, v in zip(kinds, row)])
        except ValueError as exc:
            raise ConfigError(f"cannot parse row: {exc}", line=i, source=path) from None
    return out


def read_measurement(path, grid, delta):
    rows = _parse_rows(path, ["k", "y"], [int, float])
    k = np.array([r[0] for r in rows], dtype=np.int64)
    if not np.array_equal(k, grid.indices):
        raise ConfigError(
            f"sample indices must run over the window {grid.k_min}..{grid.k_max}", source=path
        )
    return Measurement(np.array([r[1] for r in rows]), delta, grid)


def read_solution(path, grid):
    rows = _parse_rows(path, ["k", "x_hat"], [int, float])
    if [r[0] for r in rows] != grid.indices.tolist():
        raise ConfigError(
            f"solution indices must run over the window {grid.k_min}..{grid.k_max}", source=path
        )
    return np.array([r[1] for r in rows])


def read_spikes(path, header=("k", "c")):
    rows = _parse_rows(path, list(header), [int, float])
    return SpikeTrain.from_pairs((k, c) for k, c in rows if c != 0)


def write_json(path, obj):
    path = Path(path)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


# config schema: section -> {key: (type, required)}
_REAL = (int, float)
_SCHEMA = {
    "kernel": {"family": (str, True), "epsilon": (_REAL, False), "samples_path": (str, False)},
    "grid": {"N": (int, True), "sigma": (_REAL, True), "k_min": (int, True), "k_max": (int, True)},
    "noise": {"delta": (_REAL, True), "kind": (str, False), "seed": (int, False)},
    "solver": {
        "feas_tol": (_REAL, False),
        "opt_tol": (_REAL, False),
        "max_iter": (int, False),
        "nonneg": (bool, False),
    },
    "analysis": {"nu": (_REAL, False), "epsilon": (_REAL, False), "r": (int, False)},
    "certify": {
        "support": (list, False),
        "signs": (list, False),
        "sigma": (_REAL, False),
        "sweep": (bool, False),
        "M_max": (int, False),
        "sign_patterns": (str, False),
        "nu_grid": (list, False),
        "resolution": (_REAL, False),
        "scan_step": (_REAL, False),
        "scan_radius": (_REAL, False),
    },
    "bench": {
        "deltas": (list, True),
        "seeds": (list, False),
        "trials": (int, False),
        "nonneg": (bool, False),
        "random_spikes": (dict, False),
    },
    "outputs": {"dir": (str, False)},
}
_RANDOM_SPIKES = {
    "count": (int, True),
    "min_gap": (int, True),
    "max_gap": (int, True),
    "amplitude": (list, False),
    "signs": (str, False),
}
_TOP = set(_SCHEMA) | {"spikes"}


@dataclass(frozen=True)
class ExperimentConfig:
    kernel: dict
    grid: GridConfig
    spikes: SpikeTrain
    noise: dict
    solver: SolverOptions
    nonneg: bool
    analysis: dict
    certify: dict
    bench: dict
    outputs: dict
    raw: dict = field(repr=False)
    source: Path | None = None

    @property
    def base_dir(self):
        return self.source.parent if self.source is not None else None

    @property
    def delta(self):
        return float(self.noise["delta"])

    @property
    def seed(self):
        return int(self.noise.get("seed", 0))


def _line_of(text, key):
    if text is None:
        return None
    needle = json.dumps(key)
    for i, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return i
    return None


def _type_ok(val, typ):
    if typ is bool:
        return isinstance(val, bool)
    if isinstance(val, bool):
        return False
    if typ is int:
        return isinstance(val, int) or (isinstance(val, float) and val.is_integer())
    return isinstance(val, typ)


def _check_section(obj, schema, path, text, source):
    if not isinstance(obj, dict):
        raise ConfigError("must be an object", path, _line_of(text, path.split(".")[-1]), source)
    for key in obj:
        if key not in schema:
            raise ConfigError("unknown key", f"{path}.{key}", _line_of(text, key), source)
    for key, (typ, required) in schema.items():
        if key not in obj:
            if required:
                raise ConfigError("missing required key", f"{path}.{key}", _line_of(text, path.split(".")[-1]), source)
            continue
        val = obj[key]
        if not _type_ok(val, typ):
            want = typ.__name__ if isinstance(typ, type) else "number"
            raise ConfigError(f"expected {want}, got {type(val).__name__}", f"{path}.{key}", _line_of(text, key), source)


def parse_config(data, text=None, source=None):
    """Validate a config mapping and build an :class:`ExperimentConfig`.

    Unknown keys, missing required keys and wrongly typed values raise
    :class:`ConfigError` naming the field and, when the text is known, its line.
    """
    if not isinstance(data, dict):
        raise ConfigError("top level must be an object", source=source)
    for key in data:
        if key not in _TOP:
            raise ConfigError("unknown key", key, _line_of(text, key), source)
    for section in ("kernel", "grid"):
        if section not in data:
            raise ConfigError("missing required section", section, source=source)
    sections = {}
    for name, schema in _SCHEMA.items():
        if name in data:
            _check_section(data[name], schema, name, text, source)
        sections[name] = dict(data.get(name, {}))
    if "random_spikes" in sections["bench"]:
        _check_section(sections["bench"]["random_spikes"], _RANDOM_SPIKES, "bench.random_spikes", text, source)

    def wrap(path, fn):
        try:
            return fn()
        except ConfigError:
            raise
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(str(exc), path, _line_of(text, path.split(".")[-1]), source) from None

    try:
        from .kernel import Family

        Family(sections["kernel"]["family"])
    except ValueError:
        raise ConfigError(
            "family must be gaussian, cauchy or tabulated", "kernel.family", _line_of(text, "family"), source
        ) from None
    grid = wrap("grid", lambda: GridConfig(**sections["grid"]))
    spikes_raw = data.get("spikes", [])
    if not isinstance(spikes_raw, list):
        raise ConfigError("must be a list", "spikes", _line_of(text, "spikes"), source)
    pairs = []
    for i, item in enumerate(spikes_raw):
        _check_section(item, {"k": (int, True), "c": (_REAL, True)}, f"spikes[{i}]", text, source)
        pairs.append((item["k"], item["c"]))
    spikes = wrap("spikes", lambda: SpikeTrain.from_pairs(pairs))
    if len({k for k, _ in pairs}) != len(pairs):
        raise ConfigError("duplicate spike index", "spikes", _line_of(text, "spikes"), source)
    wrap("spikes", lambda: spikes.check_window(grid))
    noise = sections["noise"]
    noise.setdefault("delta", 0.0)
    noise.setdefault("kind", NoiseKind.UNIFORM_SIGN.value)
    noise.setdefault("seed", 0)
    wrap("noise.kind", lambda: NoiseKind(noise["kind"]))
    if noise["delta"] < 0:
        raise ConfigError("delta must be nonnegative", "noise.delta", _line_of(text, "delta"), source)
    solver = dict(sections["solver"])
    nonneg = bool(solver.pop("nonneg", False))
    opts = wrap("solver", lambda: SolverOptions(**solver))
    bench = sections["bench"]
    if bench and not all(isinstance(d, _REAL) and d >= 0 for d in bench["deltas"]):
        raise ConfigError("deltas must be nonnegative numbers", "bench.deltas", _line_of(text, "deltas"), source)
    return ExperimentConfig(
        kernel=sections["kernel"],
        grid=grid,
        spikes=spikes,
        noise=noise,
        solver=opts,
        nonneg=nonneg,
        analysis=sections["analysis"],
        certify=sections["certify"],
        bench=bench,
        outputs=sections["outputs"],
        raw=data,
        source=Path(source) if source is not None else None,
    )


def load_config(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config file not found", source=path)
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", line=exc.lineno, source=path) from None
    return parse_config(data, text=text, source=path)


def config_hash(config):
    """SHA-256 of the canonical JSON form of the raw config."""
    blob = json.dumps(config.raw, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def write_manifest(out_dir, config, command, seed, timings, outputs):
    """Record what produced the files in ``out_dir``."""
    manifest = {
        "command": command,
        "config_sha256": config_hash(config),
        "seed": seed,
        "version": __version__,
        "timings": timings,
        "outputs": sorted(str(p) for p in outputs),
    }
    return write_json(Path(out_dir) / "manifest.json", manifest)
