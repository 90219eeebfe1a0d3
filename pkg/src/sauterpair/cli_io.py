"""Run configuration files, CSV outputs and run manifests.

Configuration files are TOML with four tables::

    [experiment]   kind, wells, profile, delta_omega_values, omega0_values, snapshot_times, frames_per_period
    [physical]     V1, V2, D, W_edge, omega0, delta_omega, Omega, t0, t1
    [numerical]    L, N_z, dt, record_interval, unitarity_tol, bin_width, p_cutoff, block_size, spectrum_N_z, c
    [output]       out_dir, workers

Every number may be written in atomic units or as a string with a unit suffix:
``"1.47c2"`` (times c^2), ``"10lambdaC"`` (times 1/c), ``"5/c2"`` (divided by c^2),
optionally with a ``pi`` factor, e.g. ``"40pi/c2"``. A list-valued axis may also be
given as ``{start = ..., stop = ..., num = ...}`` (inclusive, evenly spaced).
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import re
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .experiments import (
    PROFILES,
    ExperimentSpec,
    NumericalParams,
    PhysicalParams,
    spec_hash,
)


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending key."""


@dataclass(frozen=True)
class RunConfig:
    experiment: ExperimentSpec
    out_dir: str = "out"
    workers: int = 1
    profile: str = "desk"

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}")

    @property
    def config_hash(self) -> str:
        return spec_hash(self.experiment)


# --- value parsing ----------------------------------------------------------

_NUMBER = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_VALUE_RE = re.compile(rf"^\s*({_NUMBER})?\s*\*?\s*(pi)?\s*(c2|/c2|lambdaC|c)?\s*$")

_PHYS_REQUIRED = ("V1", "V2", "D", "W_edge", "t0", "t1")
_DRIVE_REQUIRED = ("omega0", "Omega")
_INT_KEYS = {"N_z", "block_size", "spectrum_N_z", "frames_per_period", "workers"}
_AXES = ("delta_omega_values", "omega0_values", "snapshot_times")


def parse_quantity(value, c: float, key: str = "value") -> float:
    """Resolve a number or a unit-suffixed string to atomic units."""
    if isinstance(value, bool):
        raise ConfigError(f"{key}: expected a number, got a boolean")
    if isinstance(value, (int, float)):
        out = float(value)
    elif isinstance(value, str):
        m = _VALUE_RE.match(value)
        if not m or (m.group(1) is None and m.group(2) is None):
            raise ConfigError(f"{key}: cannot parse {value!r}")
        num, pi, unit = m.groups()
        out = float(num) if num is not None else 1.0
        if pi:
            out *= math.pi
        if unit == "c2":
            out *= c * c
        elif unit == "/c2":
            out /= c * c
        elif unit == "lambdaC":
            out /= c
        elif unit == "c":
            out *= c
    else:
        raise ConfigError(f"{key}: expected a number or string, got {type(value).__name__}")
    if not math.isfinite(out):
        raise ConfigError(f"{key}: value is not finite ({value!r})")
    return out


def _parse_axis(value, c: float, key: str) -> tuple[float, ...]:
    if isinstance(value, dict):
        unknown = set(value) - {"start", "stop", "num"}
        if unknown or not {"start", "stop", "num"} <= set(value):
            raise ConfigError(f"{key}: range needs exactly start, stop, num")
        num = value["num"]
        if not isinstance(num, int) or num < 1:
            raise ConfigError(f"{key}.num must be a positive integer")
        start = parse_quantity(value["start"], c, f"{key}.start")
        stop = parse_quantity(value["stop"], c, f"{key}.stop")
        return tuple(float(v) for v in np.linspace(start, stop, num))
    if not isinstance(value, list):
        raise ConfigError(f"{key}: expected a list or a range table")
    return tuple(parse_quantity(v, c, f"{key}[{i}]") for i, v in enumerate(value))


def _check_keys(table: dict, allowed, section: str):
    if not isinstance(table, dict):
        raise ConfigError(f"[{section}] must be a table")
    for key in table:
        if key not in allowed:
            raise ConfigError(f"unknown key {section}.{key}")


def parse_config(text: str, profile: str | None = None) -> RunConfig:
    """Parse TOML text into a fully resolved :class:`RunConfig`.

    ``profile`` overrides ``experiment.profile``; explicit ``[numerical]`` keys
    override the profile defaults.
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed configuration: {exc}") from exc
    _check_keys(doc, ("experiment", "physical", "numerical", "output"), "top level")
    exp = doc.get("experiment", {})
    phys = doc.get("physical", {})
    num = doc.get("numerical", {})
    out = doc.get("output", {})
    exp_fields = [f.name for f in dataclasses.fields(ExperimentSpec) if f.name not in ("physical", "numerical")]
    _check_keys(exp, exp_fields + ["profile"], "experiment")
    _check_keys(phys, [f.name for f in dataclasses.fields(PhysicalParams)], "physical")
    _check_keys(num, [f.name for f in dataclasses.fields(NumericalParams)], "numerical")
    _check_keys(out, ("out_dir", "workers"), "output")

    prof = profile or exp.get("profile", "desk")
    if prof not in PROFILES:
        raise ConfigError(f"experiment.profile: unknown profile {prof!r}")
    base_num = PROFILES[prof]

    c = parse_quantity(num["c"], base_num.c, "numerical.c") if "c" in num else base_num.c
    num_kw = {}
    for key, value in num.items():
        if key == "c":
            num_kw[key] = c
        elif key in _INT_KEYS:
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"numerical.{key}: expected an integer")
            num_kw[key] = value
        else:
            num_kw[key] = parse_quantity(value, c, f"numerical.{key}")
    try:
        numerical = base_num.replace(**num_kw)
    except ValueError as exc:
        raise ConfigError(f"numerical: {exc}") from exc

    missing = [k for k in _PHYS_REQUIRED if k not in phys]
    phys_kw = {k: parse_quantity(v, c, f"physical.{k}") for k, v in phys.items()}
    if phys_kw.get("V2", 0.0) != 0.0 or phys_kw.get("delta_omega", 0.0) != 0.0:
        missing += [k for k in _DRIVE_REQUIRED if k not in phys]
    if missing:
        raise ConfigError(f"missing required key physical.{missing[0]}")
    phys_kw.setdefault("omega0", 0.0)
    phys_kw.setdefault("Omega", 0.0)
    phys_kw.setdefault("delta_omega", 0.0)
    try:
        physical = PhysicalParams(**phys_kw)
        physical.potential()
    except ValueError as exc:
        raise ConfigError(f"physical: {exc}") from exc

    exp_kw = {}
    for key, value in exp.items():
        if key == "profile":
            continue
        if key in _AXES:
            exp_kw[key] = _parse_axis(value, c, f"experiment.{key}")
        elif key in _INT_KEYS:
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"experiment.{key}: expected a positive integer")
            exp_kw[key] = value
        else:
            if not isinstance(value, str):
                raise ConfigError(f"experiment.{key}: expected a string")
            exp_kw[key] = value
    try:
        spec = ExperimentSpec(physical=physical, numerical=numerical, **exp_kw)
    except ValueError as exc:
        raise ConfigError(f"experiment: {exc}") from exc

    workers = out.get("workers", 1)
    if not isinstance(workers, int) or isinstance(workers, bool):
        raise ConfigError("output.workers: expected an integer")
    out_dir = out.get("out_dir", "out")
    if not isinstance(out_dir, str):
        raise ConfigError("output.out_dir: expected a string")
    return RunConfig(spec, out_dir, workers, prof)


def load_config(path, profile: str | None = None) -> RunConfig:
    return parse_config(Path(path).read_text(), profile)


# --- serialization ----------------------------------------------------------


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if not math.isfinite(v):
            raise ValueError("cannot serialize non-finite value")
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (tuple, list)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v).__name__}")


def serialize_config(config: RunConfig) -> str:
    """Resolved TOML; every number written in a.u. with round-trip precision."""
    spec = config.experiment
    lines = ["[experiment]"]
    lines.append(f"kind = {_toml_value(spec.kind)}")
    lines.append(f"profile = {_toml_value(config.profile)}")
    lines.append(f"wells = {_toml_value(spec.wells)}")
    for key in _AXES:
        lines.append(f"{key} = {_toml_value(getattr(spec, key))}")
    lines.append(f"frames_per_period = {spec.frames_per_period}")
    lines.append("")
    lines.append("[physical]")
    for k, v in dataclasses.asdict(spec.physical).items():
        lines.append(f"{k} = {_toml_value(float(v))}")
    lines.append("")
    lines.append("[numerical]")
    for k, v in dataclasses.asdict(spec.numerical).items():
        if v is None:
            continue  # TOML has no null; absence means "unset"
        lines.append(f"{k} = {_toml_value(v if k in _INT_KEYS else float(v))}")
    lines.append("")
    lines.append("[output]")
    lines.append(f"out_dir = {_toml_value(config.out_dir)}")
    lines.append(f"workers = {config.workers}")
    return "\n".join(lines) + "\n"


# --- outputs ----------------------------------------------------------------


def fmt(x) -> str:
    """17 significant digits, enough to round-trip any double."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return buf.getvalue()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write(path, data: str | bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data.encode() if isinstance(data, str) else data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class RunManifest:
    config_hash: str
    config: str  # resolved TOML
    code_version: str = __version__
    started: float = field(default_factory=time.time)
    finished: float | None = None
    checksums: dict[str, str] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    @classmethod
    def for_config(cls, config: RunConfig) -> "RunManifest":
        return cls(config.config_hash, serialize_config(config))

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return repr(o)


def write_outputs(tables: dict[str, tuple[list[str], list]], manifest: RunManifest, out_dir) -> RunManifest:
    """Write ``name -> (header, rows)`` CSV tables and then ``manifest.json``.

    On any failure every file written by this call is removed again.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    try:
        for name, (header, rows) in tables.items():
            path = out / name
            atomic_write(path, csv_text(header, rows))
            written.append(path)
            manifest.checksums[name] = sha256_file(path)
        manifest.finished = time.time()
        atomic_write(out / "manifest.json", manifest.to_json())
    except BaseException:
        for p in written:
            p.unlink(missing_ok=True)
        raise
    return manifest


def verify_manifest(out_dir) -> list[str]:
    """Names of files whose checksum no longer matches the manifest."""
    out = Path(out_dir)
    data = json.loads((out / "manifest.json").read_text())
    bad = []
    for name, digest in data["checksums"].items():
        p = out / name
        if not p.exists() or sha256_file(p) != digest:
            bad.append(name)
    return bad


# --- table builders ---------------------------------------------------------


def number_series_table(series_by_dw: dict[float, object]):
    """``t,N`` for one run; a leading ``delta_omega`` column when several are given."""
    if len(series_by_dw) == 1:
        (s,) = series_by_dw.values()
        return ["t", "N"], list(zip(s.t, s.N))
    rows = [(dw, t, n) for dw, s in series_by_dw.items() for t, n in zip(s.t, s.N)]
    return ["delta_omega", "t", "N"], rows


def density_table(densities: dict[float, np.ndarray], z: np.ndarray):
    rows = [(t, zj, r) for t in sorted(densities) for zj, r in zip(z, densities[t])]
    return ["t", "z", "rho"], rows


def spectrum_table(spectra: dict[str, object]):
    if len(spectra) == 1:
        (s,) = spectra.values()
        return ["E_center", "dN_dE"], list(zip(s.centers, s.density))
    rows = [(label, e, d) for label, s in spectra.items() for e, d in zip(s.centers, s.density)]
    return ["run", "E_center", "dN_dE"], rows


def bound_levels_table(trajectories):
    rows = sorted(
        ((t, tr.level_id, e) for tr in trajectories for t, e in zip(tr.times, tr.energies)),
        key=lambda r: (r[0], r[1]),
    )
    return ["t", "level_index", "E"], rows


def dives_table(dives):
    return ["level", "entry", "exit", "duration"], [(d.level, d.entry, d.exit, d.duration) for d in dives]


def drive_spectrum_table(spec):
    # f in cycles per a.u.
    return ["f", "amplitude"], list(zip(spec.omega / (2 * math.pi), spec.amplitude))


def sweep_table(sweep):
    header = list(sweep.axis_names) + ["N_final", "failed"]
    return header, [tuple(r) for r in sweep.rows()]
