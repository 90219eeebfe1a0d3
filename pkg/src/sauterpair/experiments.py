"""Named, configuration-driven experiments: single runs, Δω scans, optimal-Δω curves,
frequency responses, spectra and bound-level studies."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .lattice import Constants, build_basis, make_grid
from .observables import EnergySpectrum, PairNumberSeries, spectrum_from_weights
from .potential import CombinedPotential, make_potential
from .propagator import EvolutionConfig, ScatteringMatrix, evolve_scattering_matrix
from .spectral_analysis import (
    DEFAULT_THRESHOLDS,
    critical_amplitudes,
    crossing_refiner,
    dive_analysis,
    dive_sampling_times,
    dives_from_amplitude,
    drive_spectrum,
    heuristic_yield,
    spectrum_frames,
    track_levels,
)

log = logging.getLogger(__name__)

KINDS = (
    "fm_amplitude_scan",
    "time_series",
    "bound_state_movie",
    "optimal_fm_curve",
    "frequency_response",
    "density_snapshots",
    "spectrum_pair",
    "drive_spectrum",
)

C2 = Constants().c2
LAMBDA_C = Constants().lambda_C


@dataclass(frozen=True)
class PhysicalParams:
    """Parameters of the combined well, all in a.u. Defaults are the reference combined-well setup."""

    V1: float = 1.47 * C2
    V2: float = 1.47 * C2
    D: float = 10 * LAMBDA_C
    W_edge: float = 0.3 * LAMBDA_C
    omega0: float = 0.5 * C2
    delta_omega: float = 0.0
    Omega: float = 0.2 * C2
    t0: float = 5 / C2
    t1: float = 40 * math.pi / C2

    def potential(self) -> CombinedPotential:
        return make_potential(**dataclasses.asdict(self))

    @property
    def t_end(self) -> float:
        return 2 * self.t0 + self.t1

    def replace(self, **changes) -> "PhysicalParams":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class NumericalParams:
    L: float = 2.0
    N_z: int = 512
    dt: float = 0.04 / C2
    record_interval: float = 1.0 / C2
    unitarity_tol: float = 1e-8
    bin_width: float = 0.02 * C2
    p_cutoff: float | None = None
    block_size: int = 64
    spectrum_N_z: int = 512
    c: float = Constants().c

    def __post_init__(self):
        make_grid(self.L, self.N_z)
        if not (self.dt > 0 and self.record_interval > 0 and self.bin_width > 0):
            raise ValueError("dt, record_interval and bin_width must be positive")

    def replace(self, **changes) -> "NumericalParams":
        return dataclasses.replace(self, **changes)


PROFILES = {
    "desk": NumericalParams(N_z=512, dt=0.04 / C2),
    # only modes with |p| <= 10 c are evolved; the rest carry < 2e-4 of N in every tested run
    "full": NumericalParams(N_z=2048, dt=0.04 / C2, p_cutoff=10 * Constants().c),
}


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str = "time_series"
    physical: PhysicalParams = PhysicalParams()
    numerical: NumericalParams = PROFILES["desk"]
    delta_omega_values: tuple[float, ...] = ()
    omega0_values: tuple[float, ...] = ()
    wells: str = "combined"
    snapshot_times: tuple[float, ...] = ()
    frames_per_period: int = 40

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.wells not in ("combined", "single"):
            raise ValueError(f"wells must be 'combined' or 'single', got {self.wells!r}")
        for name in ("delta_omega_values", "omega0_values", "snapshot_times"):
            vals = tuple(float(v) for v in getattr(self, name))
            if not all(math.isfinite(v) for v in vals):
                raise ValueError(f"{name} contains non-finite values")
            object.__setattr__(self, name, vals)
        for k, v in dataclasses.asdict(self.physical).items():
            if not math.isfinite(v):
                raise ValueError(f"physical parameter {k} is not finite")

    def with_physical(self, **changes) -> "ExperimentSpec":
        return dataclasses.replace(self, physical=self.physical.replace(**changes))


def params_hash(physical: PhysicalParams, numerical: NumericalParams, extra=None) -> str:
    payload = {"physical": dataclasses.asdict(physical), "numerical": dataclasses.asdict(numerical)}
    if extra:
        payload["extra"] = extra
    text = json.dumps(payload, sort_keys=True, default=repr)
    return hashlib.sha256(text.encode()).hexdigest()


def spec_hash(spec: ExperimentSpec) -> str:
    d = dataclasses.asdict(spec)
    return hashlib.sha256(json.dumps(d, sort_keys=True, default=repr).encode()).hexdigest()


# --- single runs ------------------------------------------------------------


@dataclass
class RunResult:
    physical: PhysicalParams
    numerical: NumericalParams
    series: PairNumberSeries
    final_weights: np.ndarray  # sum_n |U_pn|^2 per positive mode at the final time
    densities: dict[float, np.ndarray] = field(default_factory=dict)
    final: ScatteringMatrix | None = None
    max_deficit: float = 0.0
    wall_time: float = 0.0

    @property
    def N_final(self) -> float:
        return self.series.final

    def spectrum(self, bin_width: float | None = None) -> EnergySpectrum:
        bw = self.numerical.bin_width if bin_width is None else bin_width
        grid = make_grid(self.numerical.L, self.numerical.N_z)
        return spectrum_from_weights(self.final_weights, build_basis(grid, Constants(self.numerical.c)), bw)

    @property
    def z(self) -> np.ndarray:
        return make_grid(self.numerical.L, self.numerical.N_z).z


class ResultCache:
    """Directory of finished single runs keyed by the parameter hash."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.npz"

    def load(self, physical, numerical, extra=None) -> RunResult | None:
        key = params_hash(physical, numerical, extra)
        path = self._path(key)
        if not path.exists():
            return None
        with np.load(path, allow_pickle=False) as data:
            dens_t = data["density_times"]
            densities = {float(t): data["densities"][i] for i, t in enumerate(dens_t)}
            return RunResult(
                physical,
                numerical,
                PairNumberSeries(data["t"], data["N"]),
                data["final_weights"],
                densities,
                None,
                float(data["max_deficit"]),
                float(data["wall_time"]),
            )

    def store(self, result: RunResult, extra=None) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        key = params_hash(result.physical, result.numerical, extra)
        dens_t = sorted(result.densities)
        dens = np.array([result.densities[t] for t in dens_t]) if dens_t else np.zeros((0, result.numerical.N_z))
        tmp = self.directory / f".{key}.{os.getpid()}.tmp.npz"
        np.savez(
            tmp,
            t=result.series.t,
            N=result.series.N,
            final_weights=result.final_weights,
            density_times=np.array(dens_t, dtype=float),
            densities=dens,
            max_deficit=result.max_deficit,
            wall_time=result.wall_time,
            params=json.dumps(
                {"physical": dataclasses.asdict(result.physical), "numerical": dataclasses.asdict(result.numerical)},
                default=repr,
            ),
        )
        os.replace(tmp, self._path(key))


def record_schedule(physical: PhysicalParams, numerical: NumericalParams, extra_times=()) -> tuple[float, ...]:
    t_end = physical.t_end
    n = max(1, int(math.floor(t_end / numerical.record_interval + 1e-9)))
    times = {i * numerical.record_interval for i in range(n + 1)} | {t_end}
    times |= {float(t) for t in extra_times if 0 <= t <= t_end}
    return tuple(sorted(t for t in times if t <= t_end))


def run_physical(
    physical: PhysicalParams,
    numerical: NumericalParams,
    *,
    snapshot_times: Sequence[float] = (),
    workers: int = 1,
    keep_matrix: bool = False,
    cache: ResultCache | None = None,
) -> RunResult:
    """Evolve the Dirac sea for one parameter set over [0, 2 t0 + t1]."""
    extra = {"snapshots": list(snapshot_times)} if snapshot_times else None
    if cache is not None and not keep_matrix:
        hit = cache.load(physical, numerical, extra)
        if hit is not None:
            return hit
    constants = Constants(numerical.c)
    grid = make_grid(numerical.L, numerical.N_z)
    basis = build_basis(grid, constants)
    pot = physical.potential()
    t_end = physical.t_end
    records = record_schedule(physical, numerical, snapshot_times)
    dens_times = tuple(t for t in records if any(t == float(s) for s in snapshot_times))
    config = EvolutionConfig(
        dt=numerical.dt,
        t_end=t_end,
        record_times=records,
        unitarity_tol=numerical.unitarity_tol,
        p_cutoff=numerical.p_cutoff,
        matrix_times=(records[-1],) if keep_matrix else (),
        density_times=dens_times,
        block_size=numerical.block_size,
        workers=workers,
    )
    start = time.perf_counter()
    ev = evolve_scattering_matrix(basis, pot, config)
    wall = time.perf_counter() - start
    result = RunResult(
        physical,
        numerical,
        PairNumberSeries(ev.times, ev.pair_number),
        ev.mode_weights[-1].copy(),
        dict(ev.densities),
        ev.matrices.get(records[-1]),
        float(ev.completeness_deficit.max(initial=0.0)),
        wall,
    )
    log.info("run N_final=%.6g (dw=%.4g c2, w0=%.4g c2) in %.1fs", result.N_final, physical.delta_omega / C2, physical.omega0 / C2, wall)
    if cache is not None and not keep_matrix:
        cache.store(result, extra)
    return result


def run_single(spec: ExperimentSpec, workers: int = 1, keep_matrix: bool = True, cache: ResultCache | None = None) -> RunResult:
    """Time series, final scattering matrix and requested density snapshots."""
    physical = _wells(spec.physical, spec.wells)
    return run_physical(
        physical, spec.numerical, snapshot_times=spec.snapshot_times, workers=workers, keep_matrix=keep_matrix, cache=cache
    )


def _wells(physical: PhysicalParams, wells: str) -> PhysicalParams:
    return physical.replace(V1=0.0) if wells == "single" else physical


# --- sweeps -----------------------------------------------------------------


@dataclass
class SweepResult:
    axis_names: tuple[str, ...]
    points: list[tuple[float, ...]]
    N_final: np.ndarray
    failures: dict[int, str] = field(default_factory=dict)
    derived: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    runs: list[RunResult | None] = field(default_factory=list, repr=False)

    @property
    def ok(self) -> bool:
        return not self.failures

    def rows(self):
        for i, (pt, n) in enumerate(zip(self.points, self.N_final)):
            yield (*pt, float(n), i in self.failures)


def argmax_smallest(values: Sequence[float], keys: Sequence[float]) -> int:
    """Index of the largest finite value; ties go to the smallest key."""
    best = None
    for i, (v, k) in enumerate(zip(values, keys)):
        if not math.isfinite(v):
            continue
        if best is None or v > values[best] or (v == values[best] and k < keys[best]):
            best = i
    if best is None:
        raise ValueError("no finite values to maximise")
    return best


def _split_budget(workers: int, n_jobs: int) -> tuple[int, int]:
    outer = max(1, min(workers, n_jobs))
    return outer, max(1, workers // outer)


def _run_points(jobs, numerical, workers, cache):
    """Evaluate independent parameter points; failures are recorded, not raised."""
    outer, inner = _split_budget(workers, len(jobs))

    def one(physical):
        try:
            return run_physical(physical, numerical, workers=inner, cache=cache), None
        except Exception as exc:  # noqa: BLE001 - recorded per point
            log.warning("point failed: %s", exc)
            return None, f"{type(exc).__name__}: {exc}"

    if outer > 1:
        with ThreadPoolExecutor(max_workers=outer) as ex:
            return list(ex.map(one, jobs))
    return [one(j) for j in jobs]


def _provenance(spec: ExperimentSpec, started: float) -> dict:
    return {"config_hash": spec_hash(spec), "code_version": __version__, "wall_time": time.perf_counter() - started}


def scan_fm_amplitude(spec: ExperimentSpec, workers: int = 1, cache: ResultCache | None = None) -> SweepResult:
    """Final pair number for each Δω of ``spec.delta_omega_values``."""
    if not spec.delta_omega_values:
        raise ValueError("delta_omega_values must be non-empty")
    started = time.perf_counter()
    base = _wells(spec.physical, spec.wells)
    jobs = [base.replace(delta_omega=dw) for dw in spec.delta_omega_values]
    out = _run_points(jobs, spec.numerical, workers, cache)
    N = np.array([r.N_final if r is not None else np.nan for r, _ in out])
    failures = {i: err for i, (_, err) in enumerate(out) if err}
    res = SweepResult(("delta_omega",), [(dw,) for dw in spec.delta_omega_values], N, failures, runs=[r for r, _ in out])
    if np.isfinite(N).any():
        i = argmax_smallest(N, spec.delta_omega_values)
        res.derived = {"argmax": i, "delta_omega_opt": spec.delta_omega_values[i], "N_opt": float(N[i])}
        if 0.0 in spec.delta_omega_values:
            n0 = N[spec.delta_omega_values.index(0.0)]
            res.derived["N_fixed"] = float(n0)
            res.derived["ratio"] = float(N[i] / n0) if n0 > 0 else math.inf
    res.provenance = _provenance(spec, started)
    return res


def optimal_fm_curve(spec: ExperimentSpec, workers: int = 1, cache: ResultCache | None = None) -> SweepResult:
    """Δω maximising the final pair number, for each center frequency."""
    if not spec.omega0_values or not spec.delta_omega_values:
        raise ValueError("omega0_values and delta_omega_values must be non-empty")
    started = time.perf_counter()
    base = _wells(spec.physical, spec.wells)
    pts = [(w0, dw) for w0 in spec.omega0_values for dw in spec.delta_omega_values]
    out = _run_points([base.replace(omega0=w0, delta_omega=dw) for w0, dw in pts], spec.numerical, workers, cache)
    N = np.array([r.N_final if r is not None else np.nan for r, _ in out])
    failures = {i: err for i, (_, err) in enumerate(out) if err}
    res = SweepResult(("omega0", "delta_omega"), pts, N, failures, runs=[r for r, _ in out])
    per = {}
    n_dw = len(spec.delta_omega_values)
    for k, w0 in enumerate(spec.omega0_values):
        block = N[k * n_dw : (k + 1) * n_dw]
        if np.isfinite(block).any():
            i = argmax_smallest(block, spec.delta_omega_values)
            n_fixed = block[spec.delta_omega_values.index(0.0)] if 0.0 in spec.delta_omega_values else math.nan
            per[w0] = {
                "delta_omega_opt": spec.delta_omega_values[i],
                "N_opt": float(block[i]),
                "N_fixed": float(n_fixed),
                "ratio": float(block[i] / n_fixed) if n_fixed > 0 else math.inf,
            }
    res.derived = {"per_omega0": per}
    res.provenance = _provenance(spec, started)
    return res


def frequency_response(spec: ExperimentSpec, workers: int = 1, cache: ResultCache | None = None) -> SweepResult:
    """Fixed-frequency and optimal-Δω final numbers versus ω0, and their ratio R."""
    if 0.0 not in spec.delta_omega_values:
        spec = dataclasses.replace(spec, delta_omega_values=(0.0,) + spec.delta_omega_values)
    res = optimal_fm_curve(spec, workers, cache)
    per = res.derived["per_omega0"]
    res.derived["table"] = [
        {"omega0": w0, "N_fixed": v["N_fixed"], "N_opt": v["N_opt"], "delta_omega_opt": v["delta_omega_opt"], "R": v["ratio"]}
        for w0, v in per.items()
    ]
    return res


def spectrum_pair(spec: ExperimentSpec, fm_delta_omega: float | None = None, workers: int = 1, cache: ResultCache | None = None):
    """Electron spectra of the fixed-frequency run and of one FM run."""
    dw = fm_delta_omega if fm_delta_omega is not None else (spec.delta_omega_values or (0.05 * C2,))[-1]
    base = _wells(spec.physical, spec.wells)
    runs = _run_points([base.replace(delta_omega=0.0), base.replace(delta_omega=dw)], spec.numerical, workers, cache)
    for r, err in runs:
        if err:
            raise RuntimeError(err)
    fixed, fm = runs[0][0], runs[1][0]
    return fixed.spectrum(), fm.spectrum(), (fixed, fm)


# --- bound levels -----------------------------------------------------------


@dataclass
class BoundStateStudy:
    frames: list
    trajectories: list
    dives: list
    score: float


def bound_state_movie(spec: ExperimentSpec, times: Sequence[float] | None = None, refine: bool = True) -> BoundStateStudy:
    """Instantaneous gap levels over the run, tracked by overlap, with their dives.

    With ``refine`` each crossing of -c^2 is pinned down by bisection on the
    frozen spectrum instead of being extrapolated from the frames.
    """
    physical = _wells(spec.physical, spec.wells)
    pot = physical.potential()
    constants = Constants(spec.numerical.c)
    grid = make_grid(spec.numerical.L, spec.numerical.spectrum_N_z)
    if times is None:
        times = dive_sampling_times(pot, spec.frames_per_period)
    frames = spectrum_frames(pot, times, grid, constants)
    traj = track_levels(frames)
    refiner = crossing_refiner(pot, grid, constants) if refine else None
    dives = dive_analysis(traj, constants.c, t_end=frames[-1].t, refine=refiner)
    return BoundStateStudy(frames, traj, dives, heuristic_yield(dives))


def amplitude_dives(spec: ExperimentSpec, a_crit=None, samples_per_period: int = 64, thresholds=DEFAULT_THRESHOLDS):
    """Dives from critical well depths; valid because V(z, t) = a(t) S(z)."""
    physical = _wells(spec.physical, spec.wells)
    pot = physical.potential()
    if a_crit is None:
        grid = make_grid(spec.numerical.L, spec.numerical.spectrum_N_z)
        a_max = 1.05 * max(pot.max_abs(), C2)
        a_crit = critical_amplitudes(pot.shape, grid, Constants(spec.numerical.c), a_max=a_max)
    return dives_from_amplitude(pot, a_crit, samples_per_period, thresholds)


def heuristic_ranking(spec: ExperimentSpec, delta_omegas: Sequence[float], a_crit=None, **kw):
    """Heuristic yield score for each Δω, sharing one set of critical depths."""
    if a_crit is None:
        physical = _wells(spec.physical, spec.wells)
        grid = make_grid(spec.numerical.L, spec.numerical.spectrum_N_z)
        a_max = 1.05 * max(physical.potential().max_abs(), C2)
        a_crit = critical_amplitudes(physical.potential().shape, grid, Constants(spec.numerical.c), a_max=a_max)
    scores = []
    for dw in delta_omegas:
        dives = amplitude_dives(spec.with_physical(delta_omega=dw), a_crit, **kw)
        scores.append(heuristic_yield(dives))
    return np.array(scores), a_crit


def drive_spectrum_experiment(spec: ExperimentSpec, sample_rate=None, window_kind="rect"):
    return drive_spectrum(spec.physical.potential().drive, sample_rate, window_kind)
