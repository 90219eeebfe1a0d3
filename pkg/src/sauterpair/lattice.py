"""Physical constants, the periodic z-lattice and the field-free Dirac mode basis.

Everything is in atomic units (hbar = e = m_e = 1). The 1+1D Dirac Hamiltonian
is represented with 2-component spinors, alpha_z = sigma_x and beta = sigma_z,
so the free Hamiltonian at momentum p is ``[[c^2, c p], [c p, -c^2]]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

C_AU = 137.035999


@dataclass(frozen=True)
class Constants:
    """Speed of light and derived scales (a.u.). ``c`` may be a toy value in tests."""

    c: float = C_AU

    def __post_init__(self):
        if not (np.isfinite(self.c) and self.c > 0):
            raise ValueError(f"speed of light must be positive and finite, got {self.c!r}")

    @property
    def c2(self) -> float:
        return self.c * self.c

    @property
    def lambda_C(self) -> float:
        return 1.0 / self.c


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform periodic lattice on [-L/2, L/2) and its conjugate momentum lattice.

    Momenta are stored in ascending order, ``p_k = 2 pi k / L`` with
    ``k = -N_z/2, ..., N_z/2 - 1``; the Nyquist mode sits on the negative side.
    """

    L: float
    N_z: int

    @property
    def dz(self) -> float:
        return self.L / self.N_z

    @cached_property
    def z(self) -> np.ndarray:
        return -0.5 * self.L + self.dz * np.arange(self.N_z)

    @cached_property
    def k_index(self) -> np.ndarray:
        return np.arange(-self.N_z // 2, self.N_z // 2)

    @cached_property
    def p(self) -> np.ndarray:
        return 2.0 * np.pi * self.k_index / self.L

    @cached_property
    def fft_order(self) -> np.ndarray:
        """Permutation taking ascending-momentum arrays to FFT (``fftfreq``) order."""
        return np.fft.ifftshift(np.arange(self.N_z))

    @cached_property
    def p_fft(self) -> np.ndarray:
        return self.p[self.fft_order]

    @cached_property
    def plane_wave_sign_fft(self) -> np.ndarray:
        # exp(i p_k L / 2) = (-1)^k: phase between the DFT and plane waves centred on z = 0
        k = self.k_index[self.fft_order]
        return np.where(k % 2 == 0, 1.0, -1.0)

    def __eq__(self, other):
        return isinstance(other, Grid) and (self.L, self.N_z) == (other.L, other.N_z)

    def __hash__(self):
        return hash((self.L, self.N_z))


def make_grid(L: float, N_z: int) -> Grid:
    """Build the periodic lattice; ``N_z`` must be even and at least 8.

    The (L=2, N_z=4) lattice used in the docs is below the production minimum
    and is only reachable through ``Grid`` directly.
    """
    if not (np.isfinite(L) and L > 0):
        raise ValueError(f"box length L must be positive, got {L!r}")
    if int(N_z) != N_z or N_z % 2 != 0:
        raise ValueError(f"N_z must be an even integer, got {N_z!r}")
    if N_z < 8:
        raise ValueError(f"N_z must be at least 8, got {N_z}")
    return Grid(float(L), int(N_z))


def free_energy(p, constants: Constants = Constants()):
    c = constants.c
    return np.sqrt(c**4 + (c * np.asarray(p)) ** 2)


def free_spinors(p, constants: Constants = Constants()):
    """Unit positive/negative energy spinors of ``h(p)``, each of shape ``(2, len(p))``."""
    c = constants.c
    p = np.asarray(p, dtype=float)
    E = free_energy(p, constants)
    norm = np.sqrt(2.0 * E * (E + c * c))
    u_pos = np.stack([(E + c * c) / norm, c * p / norm])
    u_neg = np.stack([-c * p / norm, (E + c * c) / norm])
    return u_pos, u_neg


@dataclass(frozen=True)
class FreeMode:
    p: float
    branch: int  # +1 positive energy, -1 negative energy
    energy: float
    amplitude: np.ndarray = field(repr=False)

    def wavefunction(self, grid: Grid) -> np.ndarray:
        """Lattice samples ``amplitude * exp(i p z) / sqrt(L)``, shape ``(2, N_z)``."""
        return self.amplitude[:, None] * np.exp(1j * self.p * grid.z)[None, :] / np.sqrt(grid.L)


@dataclass(frozen=True, eq=False)
class ModeBasis:
    """Field-free plane-wave modes on a grid.

    Positive and negative modes share the ascending momentum ordering of
    ``grid.p``: mode index ``i`` has momentum ``grid.p[i]`` on either branch.
    Rows of a scattering matrix index positive modes, columns negative ones.
    """

    grid: Grid
    constants: Constants
    energy: np.ndarray = field(repr=False)  # E_p > 0, ascending-momentum order
    u_pos: np.ndarray = field(repr=False)  # (2, N_z)
    u_neg: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.grid.N_z

    def index(self, k: int, branch: int) -> int:
        """Mode index for integer momentum label ``k`` on ``branch`` (+1 / -1)."""
        if branch not in (1, -1):
            raise ValueError("branch must be +1 or -1")
        i = k + self.grid.N_z // 2
        if not 0 <= i < self.grid.N_z:
            raise IndexError(f"momentum label {k} outside lattice")
        return i

    def mode(self, i: int, branch: int) -> FreeMode:
        u = self.u_pos if branch == 1 else self.u_neg
        return FreeMode(float(self.grid.p[i]), branch, branch * float(self.energy[i]), u[:, i].copy())

    @cached_property
    def u_pos_fft(self) -> np.ndarray:
        return self.u_pos[:, self.grid.fft_order]

    @cached_property
    def u_neg_fft(self) -> np.ndarray:
        return self.u_neg[:, self.grid.fft_order]

    @cached_property
    def energy_fft(self) -> np.ndarray:
        return self.energy[self.grid.fft_order]

    def wavefunctions(self, branch: int) -> np.ndarray:
        """All modes of one branch sampled on the lattice, shape ``(N_z, 2, N_z)``."""
        g = self.grid
        u = self.u_pos if branch == 1 else self.u_neg
        waves = np.exp(1j * np.outer(g.p, g.z)) / np.sqrt(g.L)
        return u.T[:, :, None] * waves[:, None, :]

    # transforms between lattice samples and plane-wave coefficients (FFT order)

    def to_momentum(self, psi: np.ndarray) -> np.ndarray:
        """Plane-wave coefficients ``<p|psi>`` along the last axis, FFT order."""
        g = self.grid
        return np.fft.fft(psi, axis=-1) * (g.plane_wave_sign_fft * (np.sqrt(g.L) / g.N_z))

    def to_position(self, coeffs: np.ndarray) -> np.ndarray:
        g = self.grid
        return np.fft.ifft(coeffs * g.plane_wave_sign_fft, axis=-1) * (g.N_z / np.sqrt(g.L))


def build_basis(grid: Grid, constants: Constants = Constants()) -> ModeBasis:
    u_pos, u_neg = free_spinors(grid.p, constants)
    return ModeBasis(grid, constants, free_energy(grid.p, constants), u_pos, u_neg)


def free_hamiltonian_block(p: float, constants: Constants = Constants()) -> np.ndarray:
    c = constants.c
    return np.array([[c * c, c * p], [c * p, -c * c]], dtype=float)
