"""Split-operator evolution of Dirac spinor fields and the pair-creation amplitudes.

Fields are arrays of shape ``(..., 2, N_z)``: two spinor components sampled on
the lattice (position space) or plane-wave coefficients in FFT order (momentum
space). Negative-energy modes are evolved in fixed-size column blocks so the
arithmetic of every column is independent of how blocks are scheduled.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numba
import numpy as np
import scipy.fft as sfft
import scipy.linalg as sla

from .lattice import Grid, ModeBasis

log = logging.getLogger(__name__)

PotentialFn = Callable[[np.ndarray, float], np.ndarray]


class UnitarityError(RuntimeError):
    def __init__(self, t: float, column: int, deficit: float, tol: float):
        self.t, self.column, self.deficit, self.tol = t, column, deficit, tol
        super().__init__(
            f"unitarity violated at t={t:.6e}: column {column} has completeness deficit "
            f"{deficit:.3e} > tol {tol:.1e}"
        )


@dataclass(frozen=True)
class EvolutionConfig:
    """Numerical parameters of one evolution.

    ``matrix_times`` selects the record times at which full U matrices are kept
    (``None`` keeps all of them); pair numbers and mode weights are kept at
    every record time. ``density_times`` selects where electron densities are
    accumulated on the fly.
    """

    dt: float
    t_end: float
    record_times: tuple[float, ...] = ()
    unitarity_tol: float = 1e-8
    p_cutoff: float | None = None
    matrix_times: tuple[float, ...] | None = None
    density_times: tuple[float, ...] = ()
    block_size: int = 64
    workers: int = 1

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt!r}")
        if not (self.t_end >= 0 and math.isfinite(self.t_end)):
            raise ValueError(f"t_end must be non-negative, got {self.t_end!r}")
        times = tuple(float(t) for t in self.record_times) or (float(self.t_end),)
        if list(times) != sorted(times):
            raise ValueError("record_times must be sorted")
        if times[0] < 0 or times[-1] > self.t_end * (1 + 1e-12):
            raise ValueError("record_times must lie in [0, t_end]")
        object.__setattr__(self, "record_times", times)
        object.__setattr__(self, "density_times", tuple(float(t) for t in self.density_times))
        if self.matrix_times is not None:
            object.__setattr__(self, "matrix_times", tuple(float(t) for t in self.matrix_times))
        for t in self.density_times + (self.matrix_times or ()):
            if t not in times:
                raise ValueError(f"time {t!r} requested for output is not a record time")
        if self.block_size < 1 or self.workers < 1:
            raise ValueError("block_size and workers must be >= 1")


@dataclass
class ScatteringMatrix:
    """Amplitudes ``U[p, n] = <p|U(t)|n>``: rows positive modes, columns negative modes."""

    t: float
    U: np.ndarray

    @property
    def pair_number(self) -> float:
        return float(np.sum(np.abs(self.U) ** 2))


@dataclass
class Evolution:
    """Everything recorded by :func:`evolve_scattering_matrix`."""

    basis: ModeBasis
    config: EvolutionConfig
    times: np.ndarray
    pair_number: np.ndarray  # N(t) at each record time
    mode_weights: np.ndarray  # (n_times, N_z): sum_n |U_pn|^2 per positive mode p
    completeness_deficit: np.ndarray  # worst |1 - column norm| per record time
    columns: np.ndarray  # evolved negative-mode indices
    matrices: dict[float, ScatteringMatrix] = field(default_factory=dict)
    densities: dict[float, np.ndarray] = field(default_factory=dict)
    fields: dict[float, np.ndarray] = field(default_factory=dict)

    @property
    def final(self) -> ScatteringMatrix:
        return self.matrices[max(self.matrices)]

    def series(self):
        return list(zip(self.times.tolist(), self.pair_number.tolist()))


# --- elementary steps -------------------------------------------------------


def kinetic_propagator(basis: ModeBasis, dt: float):
    """Entries ``(k00, k01, k11)`` of ``exp(-i h(p) dt)`` per momentum, FFT order.

    ``exp(-i h dt) = cos(E dt) I - i sin(E dt) h / E``.
    """
    c = basis.constants.c
    E = basis.energy_fft
    p = basis.grid.p_fft
    cos = np.cos(E * dt)
    sinc = np.sin(E * dt) / E
    return cos - 1j * sinc * c * c, -1j * sinc * c * p, cos + 1j * sinc * c * c


@numba.njit(cache=True)
def _kinetic_kernel(y, k00, k01, k11):
    B, _, N = y.shape
    for i in range(B):
        for j in range(N):
            a = y[i, 0, j]
            b = y[i, 1, j]
            y[i, 0, j] = k00[j] * a + k01[j] * b
            y[i, 1, j] = k01[j] * a + k11[j] * b


def _apply_kinetic(y: np.ndarray, K) -> None:
    """In-place 2x2 multiply per momentum; ``y`` has shape ``(..., 2, N)``."""
    flat = y.reshape(-1, 2, y.shape[-1])
    _kinetic_kernel(flat, *K)
    if not np.shares_memory(flat, y):
        y[...] = flat.reshape(y.shape)


def kinetic_half_step(field_k: np.ndarray, basis: ModeBasis, dt: float) -> np.ndarray:
    """Exact free evolution over ``dt`` of a momentum-space field (FFT order)."""
    out = np.array(field_k, dtype=complex, copy=True)
    _apply_kinetic(out, kinetic_propagator(basis, dt))
    return out


def potential_phase_step(field_z: np.ndarray, grid: Grid, t: float, dt: float, pot: PotentialFn) -> np.ndarray:
    """Multiply a position-space field by ``exp(-i V(z, t) dt)``."""
    V = np.asarray(pot(grid.z, t), dtype=float)
    return field_z * np.exp(-1j * dt * V)


def split_step(field_z: np.ndarray, basis: ModeBasis, t: float, dt: float, pot: PotentialFn) -> np.ndarray:
    """One Strang step ``V/2 - K - V/2`` with V frozen at the midpoint ``t + dt/2``."""
    half = np.exp(-0.5j * dt * np.asarray(pot(basis.grid.z, t + 0.5 * dt), dtype=float))
    y = sfft.fft(field_z * half, axis=-1)
    _apply_kinetic(y, kinetic_propagator(basis, dt))
    return sfft.ifft(y, axis=-1, overwrite_x=True) * half


# --- step schedule ----------------------------------------------------------


def step_schedule(dt: float, record_times: Sequence[float], t_start: float = 0.0):
    """Split [t_start, last record] into steps: full ``dt`` steps then one partial step.

    Returns a list of (t, h, record_index or None) with the index set on the
    step that lands on a record time. Record times equal to ``t_start`` are
    reported with ``h = 0``.
    """
    steps = []
    t = t_start
    for i, tr in enumerate(record_times):
        if tr < t_start - 1e-15 * max(1.0, abs(t_start)):
            continue
        span = tr - t
        n = int(math.floor(span / dt * (1 + 1e-12)))
        rem = span - n * dt
        if rem <= 1e-9 * dt:
            rem = 0.0
        hs = [dt] * n + ([rem] if rem > 0 else [])
        if not hs:
            steps.append((t, 0.0, i))
            continue
        for j, h in enumerate(hs):
            last = j == len(hs) - 1
            steps.append((t, h, i if last else None))
            t = tr if last else t + h
    return steps


# --- scattering matrix ------------------------------------------------------


def _select_columns(basis: ModeBasis, p_cutoff: float | None) -> np.ndarray:
    cols = np.arange(basis.size)
    if p_cutoff is not None:
        cols = cols[np.abs(basis.grid.p) <= p_cutoff]
    return cols


def _project(x: np.ndarray, basis: ModeBasis):
    """Positive and negative coefficients of position fields ``x (B, 2, N)``.

    Rows come back in ascending momentum order: shapes ``(N, B)`` each.
    """
    g = basis.grid
    y = sfft.fft(x, axis=-1) * (g.plane_wave_sign_fft * (math.sqrt(g.L) / g.N_z))
    up, un = basis.u_pos_fft, basis.u_neg_fft
    cp = up[0] * y[:, 0, :] + up[1] * y[:, 1, :]  # spinors are real
    cn = un[0] * y[:, 0, :] + un[1] * y[:, 1, :]
    cp = np.fft.fftshift(cp, axes=-1)
    cn = np.fft.fftshift(cn, axes=-1)
    return cp.T, cn.T


def positive_density(Ucols: np.ndarray, basis: ModeBasis) -> np.ndarray:
    """``sum_n |sum_p U_pn W_p(z)|^2`` for columns ``Ucols (N, B)`` (ascending rows)."""
    g = basis.grid
    coeff = np.fft.ifftshift(Ucols.T, axes=-1)  # (B, N) FFT order
    spinor = basis.u_pos_fft[None, :, :] * coeff[:, None, :]
    psi = sfft.ifft(spinor * g.plane_wave_sign_fft, axis=-1) * (g.N_z / math.sqrt(g.L))
    return np.sum(np.abs(psi) ** 2, axis=(0, 1))


def _negative_waves(basis: ModeBasis, cols) -> np.ndarray:
    g = basis.grid
    waves = np.exp(1j * np.outer(g.p[cols], g.z)) / math.sqrt(g.L)
    return basis.u_neg[:, cols].T[:, :, None] * waves[:, None, :]


def _evolve_block(cols, basis: ModeBasis, pot: PotentialFn, config: EvolutionConfig, schedule, init=None, field_times=()):
    g = basis.grid
    if init is None:
        x = _negative_waves(basis, cols)
    else:
        x = np.array(init, dtype=complex, copy=True)
    n_rec = len(config.record_times)
    out_U = {}
    out_w = np.zeros((n_rec, g.N_z))
    out_N = np.zeros(n_rec)
    out_def = np.zeros((n_rec, len(cols)))
    out_rho = {}
    out_fields = {}
    keep_U = set(config.record_times if config.matrix_times is None else config.matrix_times)
    keep_rho = set(config.density_times)

    kin_cache = {}
    z = g.z
    pending = None  # half phase waiting to be applied before the next FFT
    for t, h, rec in schedule:
        if h > 0:
            half = np.exp(-0.5j * h * np.asarray(pot(z, t + 0.5 * h), dtype=float))
            if pending is not None:
                half_in = pending * half
            else:
                half_in = half
            x *= half_in
            y = sfft.fft(x, axis=-1, overwrite_x=True)
            K = kin_cache.get(h)
            if K is None:
                K = kin_cache[h] = kinetic_propagator(basis, h)
            _apply_kinetic(y, K)
            x = sfft.ifft(y, axis=-1, overwrite_x=True)
            pending = half
        if rec is not None:
            if pending is not None:
                x *= pending
                pending = None
            tr = config.record_times[rec]
            cp, cn = _project(x, basis)
            wp = np.abs(cp) ** 2
            norms = wp.sum(axis=0) + (np.abs(cn) ** 2).sum(axis=0)
            out_def[rec] = np.abs(1.0 - norms)
            out_w[rec] = wp.sum(axis=1)
            out_N[rec] = wp.sum()
            if tr in keep_U:
                out_U[rec] = cp
            if tr in keep_rho:
                out_rho[rec] = positive_density(cp, basis)
            if tr in field_times:
                out_fields[rec] = x.copy()
    return out_U, out_w, out_N, out_def, out_rho, out_fields


def evolve_scattering_matrix(
    basis: ModeBasis,
    pot: PotentialFn,
    config: EvolutionConfig,
    *,
    field_times: Sequence[float] = (),
    start: "Checkpoint | None" = None,
    check_unitarity: bool = True,
) -> Evolution:
    """Evolve every negative-energy mode and project onto the positive modes.

    Record times before ``start.t`` (when resuming) are reported from the
    checkpoint only if they coincide with it. Raises :class:`UnitarityError`
    when any evolved column loses norm beyond ``config.unitarity_tol``.
    """
    field_times = {float(t) for t in field_times}
    cols = _select_columns(basis, config.p_cutoff)
    t_start = 0.0
    init_fields = None
    if start is not None:
        if start.grid != basis.grid:
            raise ValueError("checkpoint grid does not match basis grid")
        cols = np.asarray(start.columns)
        t_start = start.t
        init_fields = start.fields
    schedule = step_schedule(config.dt, config.record_times, t_start)
    blocks = [cols[i : i + config.block_size] for i in range(0, len(cols), config.block_size)]
    offsets = np.cumsum([0] + [len(b) for b in blocks])

    def run(ib):
        init = None if init_fields is None else init_fields[offsets[ib] : offsets[ib + 1]]
        return _evolve_block(blocks[ib], basis, pot, config, schedule, init, field_times)

    if config.workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as ex:
            results = list(ex.map(run, range(len(blocks))))
    else:
        results = [run(ib) for ib in range(len(blocks))]

    N = basis.size
    n_rec = len(config.record_times)
    reached = {rec for _, _, rec in schedule if rec is not None}
    times = np.array(config.record_times)
    pair_number = np.zeros(n_rec)
    weights = np.zeros((n_rec, N))
    deficit = np.zeros(n_rec)
    matrices, densities, fields = {}, {}, {}
    # fixed reduction order: block 0, 1, 2, ...
    for rec in sorted(reached):
        tr = config.record_times[rec]
        pair_number[rec] = sum(r[2][rec] for r in results)
        weights[rec] = sum(r[1][rec] for r in results)
        colwise = np.concatenate([r[3][rec] for r in results]) if results else np.zeros(0)
        deficit[rec] = colwise.max(initial=0.0)
        if check_unitarity and colwise.size and deficit[rec] > config.unitarity_tol:
            worst = int(cols[int(np.argmax(colwise))])
            raise UnitarityError(tr, worst, float(deficit[rec]), config.unitarity_tol)
        if not results:
            continue
        if rec in results[0][0]:
            U = np.zeros((N, N), dtype=complex)
            for b, r in zip(blocks, results):
                U[:, b] = r[0][rec]
            matrices[tr] = ScatteringMatrix(tr, U)
        if rec in results[0][4]:
            densities[tr] = sum(r[4][rec] for r in results)
        if rec in results[0][5]:
            fields[tr] = np.concatenate([r[5][rec] for r in results])
    return Evolution(basis, config, times, pair_number, weights, deficit, cols, matrices, densities, fields)


# --- dense oracle -----------------------------------------------------------

ORACLE_MAX_SITES = 64


def _mode_vectors(basis: ModeBasis) -> np.ndarray:
    """Orthonormal site-basis vectors of all modes, columns ``[positive..., negative...]``."""
    g = basis.grid
    scale = math.sqrt(g.dz)
    pos = basis.wavefunctions(1).reshape(g.N_z, -1).T * scale
    neg = basis.wavefunctions(-1).reshape(g.N_z, -1).T * scale
    return np.concatenate([pos, neg], axis=1)


def dense_hamiltonian(basis: ModeBasis, V: np.ndarray, B: np.ndarray | None = None) -> np.ndarray:
    """Full ``2N x 2N`` Hamiltonian in the orthonormal site basis (component-major)."""
    if B is None:
        B = _mode_vectors(basis)
    E = np.concatenate([basis.energy, -basis.energy])
    H = (B * E) @ B.conj().T
    H[np.diag_indices_from(H)] += np.concatenate([V, V])
    return H


def _expm_hermitian(H: np.ndarray, h: float) -> np.ndarray:
    w, v = np.linalg.eigh(H)
    return (v * np.exp(-1j * h * w)) @ v.conj().T


def dense_oracle_evolve(basis: ModeBasis, pot: PotentialFn, t_end: float, n_substeps: int) -> np.ndarray:
    """Reference propagator in the free-mode basis, shape ``(2N, 2N)``.

    Ordering of both axes is ``[positive modes, negative modes]``, so
    ``U_pn = out[:N, N:]``. The time-ordered exponential is built from exact
    matrix exponentials with the fourth-order two-point Magnus expansion.
    """
    g = basis.grid
    if g.N_z > ORACLE_MAX_SITES:
        raise ValueError(f"dense oracle limited to N_z <= {ORACLE_MAX_SITES}, got {g.N_z}")
    if n_substeps < 1:
        raise ValueError("n_substeps must be >= 1")
    B = _mode_vectors(basis)
    H0 = dense_hamiltonian(basis, np.zeros(g.N_z), B)
    h = t_end / n_substeps
    a = 0.5 - math.sqrt(3) / 6
    b = 0.5 + math.sqrt(3) / 6
    U = np.eye(2 * g.N_z, dtype=complex)
    for s in range(n_substeps):
        t = s * h
        V1 = np.asarray(pot(g.z, t + a * h), dtype=float)
        V2 = np.asarray(pot(g.z, t + b * h), dtype=float)
        H1 = H0.copy()
        H1[np.diag_indices_from(H1)] += np.concatenate([V1, V1])
        H2 = H0.copy()
        H2[np.diag_indices_from(H2)] += np.concatenate([V2, V2])
        # Omega = -i h (H1+H2)/2 - (sqrt3/12) h^2 [H2, H1]  =>  -i h Heff
        Heff = 0.5 * (H1 + H2) - 1j * (math.sqrt(3) / 12) * h * (H2 @ H1 - H1 @ H2)
        U = _expm_hermitian(0.5 * (Heff + Heff.conj().T), h) @ U
    return B.conj().T @ U @ B


def oracle_scattering_matrix(M: np.ndarray) -> np.ndarray:
    n = M.shape[0] // 2
    return M[:n, n:]


def dense_expm_static(basis: ModeBasis, V: np.ndarray, t: float) -> np.ndarray:
    """Single exact exponential for a static potential, free-mode basis."""
    B = _mode_vectors(basis)
    return B.conj().T @ sla.expm(-1j * t * dense_hamiltonian(basis, V, B)) @ B


# --- checkpoints ------------------------------------------------------------

_MAGIC = b"SPCK1\n"


@dataclass
class Checkpoint:
    t: float
    grid: Grid
    columns: np.ndarray
    fields: np.ndarray  # (n_cols, 2, N_z) position space
    U: np.ndarray  # (N_z, N_z)
    config_hash: str


def config_digest(obj) -> str:
    text = json.dumps(obj, sort_keys=True, default=repr)
    return hashlib.sha256(text.encode()).hexdigest()


def save_checkpoint(path, evolution: Evolution, t: float, config_hash: str, dtype=np.complex128) -> None:
    """Header line (JSON) then row-major fields block and U block.

    Layout: magic ``SPCK1\\n``, a JSON header terminated by ``\\n`` holding
    t, L, N_z, dtype, columns, config_hash and array shapes, then the raw
    little-endian payload of ``fields`` followed by ``U``.
    """
    if t not in evolution.fields or t not in evolution.matrices:
        raise KeyError(f"evolution holds no fields/matrix at t={t!r}")
    fields = np.ascontiguousarray(evolution.fields[t], dtype=np.dtype(dtype).newbyteorder("<"))
    U = np.ascontiguousarray(evolution.matrices[t].U, dtype=np.dtype(dtype).newbyteorder("<"))
    g = evolution.basis.grid
    header = {
        "t": t,
        "L": g.L,
        "N_z": g.N_z,
        "dtype": np.dtype(dtype).name,
        "columns": [int(c) for c in evolution.columns],
        "fields_shape": list(fields.shape),
        "U_shape": list(U.shape),
        "config_hash": config_hash,
    }
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
            fh.write(fields.tobytes())
            fh.write(U.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        if fh.readline() != _MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        header = json.loads(fh.readline())
        dt = np.dtype(header["dtype"]).newbyteorder("<")
        nf = int(np.prod(header["fields_shape"]))
        nu = int(np.prod(header["U_shape"]))
        fields = np.frombuffer(fh.read(nf * dt.itemsize), dtype=dt).reshape(header["fields_shape"])
        U = np.frombuffer(fh.read(nu * dt.itemsize), dtype=dt).reshape(header["U_shape"])
    return Checkpoint(
        t=header["t"],
        grid=Grid(header["L"], header["N_z"]),
        columns=np.array(header["columns"], dtype=int),
        fields=fields.astype(complex),
        U=U.astype(complex),
        config_hash=header["config_hash"],
    )
