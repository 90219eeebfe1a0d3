"""Pair number, electron density and electron energy spectra from scattering matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import ModeBasis
from .propagator import ScatteringMatrix, positive_density


@dataclass
class PairNumberSeries:
    t: np.ndarray
    N: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.N = np.asarray(self.N, dtype=float)
        if self.t.shape != self.N.shape:
            raise ValueError("t and N must have the same length")

    @property
    def final(self) -> float:
        return float(self.N[-1]) if self.N.size else 0.0

    def rows(self):
        return list(zip(self.t.tolist(), self.N.tolist()))


@dataclass
class EnergySpectrum:
    """Electron spectrum density dN/dE on uniform energy bins (energies in a.u.)."""

    edges: np.ndarray
    density: np.ndarray

    @property
    def bin_width(self) -> float:
        return float(self.edges[1] - self.edges[0])

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def total(self) -> float:
        return float(np.sum(self.density) * self.bin_width)

    def local_maxima(self, min_height: float = 0.0) -> np.ndarray:
        """Centers of bins strictly above their left neighbour and not below their right one."""
        d = self.density
        if d.size < 3:
            return np.zeros(0)
        inner = (d[1:-1] > d[:-2]) & (d[1:-1] >= d[2:]) & (d[1:-1] > min_height)
        return self.centers[1:-1][inner]


def _matrix(U) -> np.ndarray:
    return U.U if isinstance(U, ScatteringMatrix) else np.asarray(U)


def pair_number(U) -> float:
    """``N = sum_p sum_n |U_pn|^2``."""
    return float(np.sum(np.abs(_matrix(U)) ** 2))


def electron_density(U, basis: ModeBasis) -> np.ndarray:
    """``rho(z_j) = sum_n |sum_p U_pn W_p(z_j)|^2`` on the lattice sites."""
    M = _matrix(U)
    if M.shape[0] != basis.size:
        raise ValueError(f"U has {M.shape[0]} rows, basis has {basis.size} positive modes")
    rho = np.zeros(basis.size)
    # column chunks bound the temporary memory
    for start in range(0, M.shape[1], 256):
        rho += positive_density(M[:, start : start + 256], basis)
    return rho


def mode_weights(U) -> np.ndarray:
    return np.sum(np.abs(_matrix(U)) ** 2, axis=1)


def spectrum_from_weights(weights: np.ndarray, basis: ModeBasis, bin_width: float, e_max: float | None = None) -> EnergySpectrum:
    """Bin per-mode weights at energies ``E_p``; bins start at the rest energy c^2.

    ``+p`` and ``-p`` share ``E_p`` and therefore always land in the same bin.
    """
    if not bin_width > 0:
        raise ValueError(f"bin_width must be positive, got {bin_width!r}")
    c2 = basis.constants.c2
    E = basis.energy
    top = E.max() if e_max is None else max(e_max, c2 + bin_width)
    nbins = int(np.ceil((top - c2) / bin_width)) + 1
    edges = c2 + bin_width * np.arange(nbins + 1)
    idx = np.clip(np.floor((E - c2) / bin_width).astype(int), 0, nbins - 1)
    keep = E <= edges[-1]
    hist = np.bincount(idx[keep], weights=np.asarray(weights)[keep], minlength=nbins)
    return EnergySpectrum(edges, hist / bin_width)


def energy_spectrum(U, basis: ModeBasis, bin_width: float, e_max: float | None = None) -> EnergySpectrum:
    return spectrum_from_weights(mode_weights(U), basis, bin_width, e_max)
