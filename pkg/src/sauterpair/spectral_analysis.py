"""Bound levels of the frozen Hamiltonian, their dives into the Dirac sea, and drive spectra."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linear_sum_assignment

from .lattice import Constants, Grid, build_basis
from .potential import FMDrive, SauterShape, drive_signal, instantaneous_frequency, sauter_shape
from .propagator import _mode_vectors, dense_hamiltonian

log = logging.getLogger(__name__)

MAX_SPECTRUM_SITES = 4096
GAP_EDGE_RTOL = 1e-10

# growth-regime boundaries: 1/c^2 and 1/c^2 + D/c for D = 10 lambda_C
DEFAULT_THRESHOLDS = (5.33e-5, 5.86e-4)


@dataclass
class BoundSpectrumFrame:
    t: float
    energies: np.ndarray  # ascending, strictly inside (-c^2, c^2)
    vectors: np.ndarray | None = field(default=None, repr=False)  # (2N, n_levels)

    @property
    def count(self) -> int:
        return int(self.energies.size)


@dataclass
class LevelTrajectory:
    level_id: int
    times: list[float] = field(default_factory=list)
    energies: list[float] = field(default_factory=list)
    frames: list[int] = field(default_factory=list)
    prev_time: float | None = None  # frame time just before the first sample
    next_time: float | None = None  # frame time just after the last sample
    source: str = "overlap"

    @property
    def started_late(self) -> bool:
        return self.prev_time is not None

    @property
    def terminated(self) -> bool:
        return self.next_time is not None


@dataclass(frozen=True)
class DiveRecord:
    level: int  # ordinal from the bottom of the gap (0 = lowest level)
    entry: float
    exit: float
    regime: str = ""
    complete: bool = True

    @property
    def duration(self) -> float:
        return self.exit - self.entry


@lru_cache(maxsize=4)
def _free_hamiltonian(grid: Grid, c: float) -> np.ndarray:
    basis = build_basis(grid, Constants(c))
    return dense_hamiltonian(basis, np.zeros(grid.N_z), _mode_vectors(basis))


def frozen_hamiltonian(V: np.ndarray, grid: Grid, constants: Constants = Constants()) -> np.ndarray:
    H = _free_hamiltonian(grid, constants.c).copy()
    H[np.diag_indices_from(H)] += np.concatenate([V, V])
    return H


def instantaneous_spectrum(
    pot, t: float, grid: Grid, constants: Constants = Constants(), keep_vectors: bool = True
) -> BoundSpectrumFrame:
    """Eigenvalues of the Hamiltonian with V frozen at time ``t`` that lie in the mass gap."""
    if grid.N_z > MAX_SPECTRUM_SITES:
        raise ValueError(f"dense diagonalization limited to N_z <= {MAX_SPECTRUM_SITES}")
    c2 = constants.c2
    V = np.asarray(pot(grid.z, t), dtype=float)
    H = frozen_hamiltonian(V, grid, constants)
    try:
        if keep_vectors:
            w, v = sla.eigh(H, subset_by_value=(-c2, c2), driver="evr")
        else:
            w = sla.eigh(H, eigvals_only=True, subset_by_value=(-c2, c2), driver="evr")
            v = None
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"diagonalization failed at t={t!r}") from exc
    # continuum edge states at exactly +-c^2 are not gap levels
    edge = GAP_EDGE_RTOL * c2
    inside = (w > -c2 + edge) & (w < c2 - edge)
    w = w[inside]
    if v is not None:
        v = v[:, inside]
    order = np.argsort(w)
    return BoundSpectrumFrame(float(t), w[order], None if v is None else v[:, order])


def spectrum_frames(pot, times: Sequence[float], grid: Grid, constants: Constants = Constants(), keep_vectors=True):
    return [instantaneous_spectrum(pot, t, grid, constants, keep_vectors) for t in times]


def track_levels(frames: Sequence[BoundSpectrumFrame], min_overlap: float = 0.1) -> list[LevelTrajectory]:
    """Link levels across frames by eigenvector overlap.

    A pair is linked when it is in the optimal assignment, each is the
    other's best match and the overlap is at least ``min_overlap``. Levels of
    different node count overlap almost nowhere, while a level that has just
    left the continuum edge is spread out and may keep well under half of its
    weight from one frame to the next, hence the low default. Without stored
    eigenvectors levels are matched by energy proximity instead. Unlinked
    levels end their trajectory or start a new one.
    """
    trajectories: list[LevelTrajectory] = []
    active: dict[int, LevelTrajectory] = {}  # level index in previous frame -> trajectory
    for fi, frame in enumerate(frames):
        links: dict[int, int] = {}
        if fi > 0 and active and frame.count:
            prev = frames[fi - 1]
            if prev.vectors is not None and frame.vectors is not None:
                score = np.abs(prev.vectors.conj().T @ frame.vectors) ** 2
                row_best = score.argmax(axis=1)
                col_best = score.argmax(axis=0)
                ok = lambda i, j: score[i, j] >= min_overlap and row_best[i] == j and col_best[j] == i  # noqa: E731
                cost = -score
            else:
                cost = np.abs(prev.energies[:, None] - frame.energies[None, :])
                ok = lambda i, j: True  # noqa: E731
            rows, cols = linear_sum_assignment(cost)
            links = {int(j): int(i) for i, j in zip(rows, cols) if i in active and ok(i, j)}
        new_active = {}
        for j in range(frame.count):
            if j in links:
                traj = active.pop(links[j])
            else:
                traj = LevelTrajectory(len(trajectories))
                if fi > 0:
                    traj.prev_time = frames[fi - 1].t
                    traj.source = "new"
                trajectories.append(traj)
            traj.times.append(frame.t)
            traj.energies.append(float(frame.energies[j]))
            traj.frames.append(fi)
            new_active[j] = traj
        for traj in active.values():
            traj.next_time = frame.t
        active = new_active
    return trajectories


def _threshold_crossing(ts, es, t_out, c2):
    """Time where a level reaches -c^2 between its sample ``ts[0]`` and ``t_out``.

    ``ts``/``es`` are the samples nearest the crossing, nearest first. With
    three samples the quadratic through them is extrapolated (shallow dives
    bend strongly near the edge), otherwise a straight line; the result is
    clamped to ``[ts[0], t_out]``.
    """
    lo, hi = min(ts[0], t_out), max(ts[0], t_out)
    if len(ts) >= 3:
        coef = np.polyfit(np.asarray(ts[:3]) - ts[0], np.asarray(es[:3]) + c2, 2)
        roots = np.roots(coef)
        real = [ts[0] + r.real for r in roots if abs(r.imag) <= 1e-12 * max(1.0, abs(r.real))]
        inside = [t for t in real if lo <= t <= hi]
        if inside:
            return min(inside, key=lambda t: abs(t - ts[0]))
    if len(ts) >= 2 and es[0] != es[1]:
        slope = (es[0] - es[1]) / (ts[0] - ts[1])
        return min(max(ts[0] + (-c2 - es[0]) / slope, lo), hi)
    return 0.5 * (ts[0] + t_out)


def dive_analysis(
    trajectories: Sequence[LevelTrajectory],
    c: float,
    thresholds=DEFAULT_THRESHOLDS,
    t_end: float | None = None,
    refine: Callable[[float, float, float], float] | None = None,
) -> list[DiveRecord]:
    """Intervals during which bound levels sit below -c^2.

    A trajectory that ends in the lower half of the gap marks a level
    entering the sea; one that starts there marks a level coming back. In one
    dimension levels never cross, so they return in reverse order of
    departure: the first level to leave (the lowest, ordinal 0) is the last
    to come back. Dives still open at ``t_end`` (default: the last frame seen)
    are closed there and flagged incomplete.

    Crossing times are extrapolated from the frames unless ``refine`` is
    given: it maps (last frame with the level, first frame without it, the
    level's energy at the former) to the crossing time, see
    :func:`crossing_refiner`.
    """
    c2 = c * c
    events = []  # (time, +1 exit-down / -1 entry-up)
    seen = [t for tr in trajectories for t in (tr.times[-1:] + [tr.next_time or 0.0])]
    t_last = max(seen, default=0.0) if t_end is None else t_end
    for tr in trajectories:
        if tr.terminated and tr.energies[-1] < 0:
            if refine is not None:
                tc = refine(tr.times[-1], tr.next_time, tr.energies[-1])
            else:
                tc = _threshold_crossing(tr.times[-1:-4:-1], tr.energies[-1:-4:-1], tr.next_time, c2)
            events.append((tc, 1, tr))
        if tr.started_late and tr.energies[0] < 0:
            if refine is not None:
                tc = refine(tr.times[0], tr.prev_time, tr.energies[0])
            else:
                tc = _threshold_crossing(tr.times[:3], tr.energies[:3], tr.prev_time, c2)
            events.append((tc, -1, tr))
    events.sort(key=lambda ev: (ev[0], -ev[1]))
    submerged: list[float] = []  # entry times, stack
    dives = []
    coarse = False
    for tc, kind, tr in events:
        if kind == 1:
            submerged.append(tc)
        elif submerged:
            entry = submerged.pop()
            dives.append(DiveRecord(len(submerged), entry, tc))
            if len(tr.times) < 2:
                coarse = True
        else:
            log.debug("level entered from the sea at t=%g without a recorded dive", tc)
    while submerged:
        entry = submerged.pop()
        dives.append(DiveRecord(len(submerged), entry, t_last, complete=False))
    if coarse:
        warnings.warn("frame sampling too coarse to resolve some crossing pairs", RuntimeWarning, stacklevel=2)
    dives.sort(key=lambda d: (d.entry, d.level))
    return [DiveRecord(d.level, d.entry, d.exit, growth_regime(d.duration, thresholds), d.complete) for d in dives]


def crossing_refiner(pot, grid: Grid, constants: Constants = Constants(), rtol: float = 1e-4, min_overlap: float = 0.1):
    """Bisection in time for the instant a gap level meets -c^2.

    The returned callable takes a time where the level exists, one where it
    has gone and the level's energy at the first time. It follows the level
    by eigenvector overlap as the bracket shrinks to ``rtol`` of its initial
    width.
    """

    def refine(t_in: float, t_out: float, e_in: float) -> float:
        fr = instantaneous_spectrum(pot, t_in, grid, constants)
        if not fr.count:
            return 0.5 * (t_in + t_out)
        ref = fr.vectors[:, int(np.argmin(np.abs(fr.energies - e_in)))]
        lo, hi = t_in, t_out
        tol = rtol * abs(t_out - t_in)
        while abs(hi - lo) > tol:
            mid = 0.5 * (lo + hi)
            fr = instantaneous_spectrum(pot, mid, grid, constants)
            found = False
            if fr.count:
                ov = np.abs(fr.vectors.conj().T @ ref) ** 2
                j = int(ov.argmax())
                found = ov[j] >= min_overlap and fr.energies[j] < 0
            if found:
                lo, ref = mid, fr.vectors[:, j]
            else:
                hi = mid
        return 0.5 * (lo + hi)

    return refine


@dataclass(frozen=True)
class StaticWell:
    """``V(z) = amplitude * S(z)`` with the time argument ignored."""

    shape: object
    amplitude: float

    def __call__(self, z, t):
        return self.amplitude * sauter_shape(z, self.shape)


def critical_amplitudes(
    shape: SauterShape,
    grid: Grid,
    constants: Constants = Constants(),
    a_max: float | None = None,
    n_sweep: int = 120,
    a_min: float = 0.0,
    rtol: float = 1e-10,
    min_overlap: float = 0.1,
) -> np.ndarray:
    """Well depths at which successive bound levels reach -c^2, ascending.

    For a separable potential ``V = a(t) S(z)`` with ``S <= 0`` every level
    falls monotonically with ``a``, so the level that is ``i``-th from the
    bottom sits in the Dirac sea exactly while ``a(t)`` exceeds the ``i``-th
    critical depth. Levels are followed along an amplitude sweep by
    eigenvector overlap and each exit is pinned down by bisection. With
    ``a_min > 0`` only depths above ``a_min`` are found; levels already in
    the sea at ``a_min`` are not counted.
    """
    c2 = constants.c2
    a_max = 3.0 * c2 if a_max is None else a_max
    amps = np.linspace(a_min, a_max, n_sweep + 1)
    frames = [instantaneous_spectrum(StaticWell(shape, a), a, grid, constants) for a in amps]
    crit = []
    for fi in range(1, len(frames)):
        prev, cur = frames[fi - 1], frames[fi]
        lo0 = amps[fi - 1]
        # several levels may reach the sea within one sweep step
        while prev.count and prev.energies[0] < 0:
            lowest = prev.vectors[:, 0]
            if cur.count and np.abs(np.vdot(lowest, cur.vectors[:, 0])) ** 2 >= min_overlap:
                break
            lo, hi = lo0, amps[fi]
            while hi - lo > rtol * max(hi, c2):
                mid = 0.5 * (lo + hi)
                fr = instantaneous_spectrum(StaticWell(shape, mid), mid, grid, constants)
                if fr.count and np.abs(np.vdot(lowest, fr.vectors[:, 0])) ** 2 >= min_overlap:
                    lo, lowest = mid, fr.vectors[:, 0]
                else:
                    hi = mid
            crit.append(0.5 * (lo + hi))
            if hi >= amps[fi]:
                break
            lo0 = hi
            prev = instantaneous_spectrum(StaticWell(shape, hi), hi, grid, constants)
    return np.array(crit)


def dives_from_amplitude(
    pot,
    a_crit: Sequence[float],
    samples_per_period: int = 64,
    thresholds=DEFAULT_THRESHOLDS,
) -> list[DiveRecord]:
    """Dive intervals of each level from the crossings of ``pot.amplitude(t)`` with ``a_crit``."""
    from scipy.optimize import brentq

    times = dive_sampling_times(pot, samples_per_period)
    a = np.asarray(pot.amplitude(times), dtype=float)
    dives = []
    for level, ac in enumerate(a_crit):
        above = a > ac
        f = lambda t: float(pot.amplitude(t)) - ac  # noqa: E731
        entry = times[0] if above[0] else None
        for i in np.flatnonzero(above[1:] != above[:-1]):
            try:
                tc = brentq(f, times[i], times[i + 1], xtol=1e-16, rtol=1e-14)
            except ValueError:  # step discontinuity of the drive window
                tc = times[i + 1] if above[i + 1] else times[i]
            if above[i + 1]:
                entry = tc
            else:
                dives.append(DiveRecord(level, entry, tc, growth_regime(tc - entry, thresholds)))
                entry = None
        if entry is not None:
            dives.append(DiveRecord(level, entry, times[-1], growth_regime(times[-1] - entry, thresholds), False))
    dives.sort(key=lambda d: (d.entry, d.level))
    return dives


def growth_regime(duration: float, thresholds=DEFAULT_THRESHOLDS) -> str:
    t_quad, t_lin = thresholds
    if duration < t_quad:
        return "quadratic"
    if duration <= t_lin:
        return "linear"
    return "saturated"


def heuristic_yield(
    dives: Sequence[DiveRecord],
    thresholds: tuple[float, float] = DEFAULT_THRESHOLDS,
    rates: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> float:
    """Score ``sum_i r_i dt_i`` over dives.

    Below ``t_quad`` the rate grows with the dive (``r = dt / t_quad``, weight
    ``dt^2 / t_quad``); between the thresholds ``r`` is constant; above
    ``t_lin`` the duration is capped at ``t_lin``. ``rates`` scales each regime.
    """
    t_quad, t_lin = thresholds
    if not 0 < t_quad <= t_lin:
        raise ValueError(f"thresholds must satisfy 0 < t_quad <= t_lin, got {thresholds}")
    r_quad, r_lin, r_sat = rates
    score = 0.0
    for d in dives:
        dt = d.duration
        if dt < t_quad:
            score += r_quad * dt * dt / t_quad
        elif dt <= t_lin:
            score += r_lin * dt
        else:
            score += r_sat * t_lin
    return score


def dive_sampling_times(pot, frames_per_period: int = 40, t_start=0.0, t_end=None) -> np.ndarray:
    """Frame times fine enough for ``frames_per_period`` samples of the fastest drive phase.

    The drive switches on and off abruptly, so frames are added on both sides
    of each window edge; crossings caused by the jump then land on the edge.
    """
    drive = pot.drive
    t_end = pot.t_end if t_end is None else t_end
    rate = max_phase_rate(drive)
    if pot.V2 == 0 or rate == 0:
        rate = 2 * math.pi / max(t_end - t_start, 1e-300)
    step = 2 * math.pi / rate / frames_per_period
    n = int(math.ceil((t_end - t_start) / step))
    times = np.linspace(t_start, t_end, n + 1)
    # the envelope ramps get frames_per_period frames each however short they are
    env = pot.envelope
    for a, b in ((0.0, env.t0), (env.t0 + env.t1, env.t_end)):
        a, b = max(a, t_start), min(b, t_end)
        if b > a:
            times = np.union1d(times, np.linspace(a, b, frames_per_period + 1))
    if pot.V2 != 0:
        eps = 1e-6 * step
        edges = [drive.t0, drive.t0 + eps, drive.t0 + drive.t1 - eps, drive.t0 + drive.t1]
        times = np.union1d(times, [t for t in edges if t_start <= t <= t_end])
    return times


def max_phase_rate(drive: FMDrive) -> float:
    """Bound on ``|d/dt [w(t) t]|`` inside the drive window."""
    t_max = drive.t0 + drive.t1
    return drive.omega0 + drive.delta_omega + drive.delta_omega * abs(drive.Omega) * t_max


@dataclass
class DriveSpectrum:
    """One-sided spectrum of the drive signal.

    ``omega`` is angular frequency (a.u.); ``amplitude`` is normalised so that
    ``sum(amplitude**2) * df == sum(signal**2) * dt`` with ``df`` in cycles
    per a.u.
    """

    omega: np.ndarray
    amplitude: np.ndarray
    df: float
    dt: float
    signal: np.ndarray = field(repr=False)

    @property
    def resolution(self) -> float:
        """Angular-frequency bin spacing."""
        return 2 * math.pi * self.df

    def peaks(self, rel_height: float = 0.0) -> np.ndarray:
        a = self.amplitude
        inner = (a[1:-1] > a[:-2]) & (a[1:-1] >= a[2:]) & (a[1:-1] > rel_height * a.max())
        return self.omega[1:-1][inner]


WINDOWS: dict[str, Callable[[int], np.ndarray]] = {
    "rect": np.ones,
    "hann": np.hanning,
    "hamming": np.hamming,
    "blackman": np.blackman,
}


def drive_spectrum(drive: FMDrive, sample_rate: float | None = None, window_kind: str = "rect", pad: int = 1) -> DriveSpectrum:
    """Amplitude spectrum of ``sin(w(t) t)`` sampled over the drive window (t0, t0 + t1).

    ``sample_rate`` is in samples per a.u. of time and must be at least ten
    times the largest phase rate (in cycles); by default it is twenty times.
    ``pad`` zero-pads the record to ``pad`` times its length.
    """
    rate_cycles = max_phase_rate(drive) / (2 * math.pi)
    if sample_rate is None:
        sample_rate = 20 * rate_cycles
    if sample_rate < 10 * rate_cycles:
        raise ValueError(f"sample_rate {sample_rate:.4g} below 10x the max phase rate {rate_cycles:.4g}")
    if window_kind not in WINDOWS:
        raise ValueError(f"unknown window {window_kind!r}; choose from {sorted(WINDOWS)}")
    dt = 1.0 / sample_rate
    n = int(math.floor(drive.t1 / dt))
    t = drive.t0 + dt * (np.arange(n) + 0.5)
    x = drive_signal(t, drive) * WINDOWS[window_kind](n)
    nfft = n * max(1, int(pad))
    X = np.fft.rfft(x, n=nfft) * dt
    df = 1.0 / (nfft * dt)
    amp = np.abs(X)
    # fold negative frequencies onto the positive side
    amp[1 : (nfft + 1) // 2] *= math.sqrt(2.0)
    return DriveSpectrum(2 * math.pi * np.fft.rfftfreq(nfft, dt), amp, df, dt, x)


__all__ = [
    "BoundSpectrumFrame",
    "LevelTrajectory",
    "DiveRecord",
    "DriveSpectrum",
    "instantaneous_spectrum",
    "spectrum_frames",
    "track_levels",
    "dive_analysis",
    "heuristic_yield",
    "growth_regime",
    "drive_spectrum",
    "critical_amplitudes",
    "crossing_refiner",
    "StaticWell",
    "dives_from_amplitude",
    "dive_sampling_times",
    "max_phase_rate",
    "instantaneous_frequency",
]
