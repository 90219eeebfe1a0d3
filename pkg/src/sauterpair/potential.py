"""Combined static + frequency-modulated Sauter potential wells.

    V(z, t) = V1 S(z) f(t) + V2 sin(w(t) t) S(z) theta(t; t0, t0 + t1)
    w(t)    = w0 + dw sin(Omega (t - t0))

The oscillating phase is the literal product ``w(t) * t``, not the integral of
``w``. Both terms share the spatial shape, so ``V = amplitude(t) * S(z)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SauterShape:
    D: float  # well width
    W_edge: float  # edge width

    def __post_init__(self):
        if not (self.D > 0 and self.W_edge > 0):
            raise ValueError(f"Sauter well needs D > 0 and W_edge > 0, got D={self.D}, W={self.W_edge}")


@dataclass(frozen=True)
class Envelope:
    """Sine ramp-up over (0, t0), plateau over (t0, t0 + t1), cosine ramp-down."""

    t0: float
    t1: float

    @property
    def t_end(self) -> float:
        return 2.0 * self.t0 + self.t1


@dataclass(frozen=True)
class FMDrive:
    omega0: float
    delta_omega: float
    Omega: float
    t0: float
    t1: float

    def __post_init__(self):
        if self.omega0 < 0 or self.delta_omega < 0:
            raise ValueError("omega0 and delta_omega must be non-negative")


@dataclass(frozen=True)
class CombinedPotential:
    V1: float
    V2: float
    shape: SauterShape
    envelope: Envelope
    drive: FMDrive

    def amplitude(self, t):
        """Time factor multiplying ``S(z)``."""
        return self.V1 * envelope_value(t, self.envelope) + self.V2 * drive_signal(t, self.drive)

    def __call__(self, z, t):
        return potential_at(z, t, self)

    @property
    def t_end(self) -> float:
        return self.envelope.t_end

    def max_abs(self) -> float:
        """Upper bound on |V| (|S| <= 1)."""
        return abs(self.V1) + abs(self.V2)


def sauter_shape(z, shape: SauterShape):
    z = np.asarray(z, dtype=float)
    h = 0.5 * shape.D
    # tanh(a) - tanh(b) rewritten to stay symmetric under z -> -z bit for bit
    return 0.5 * (np.tanh((np.abs(z) - h) / shape.W_edge) - np.tanh((np.abs(z) + h) / shape.W_edge))


def envelope_value(t, env: Envelope):
    t = np.asarray(t, dtype=float)
    t0, t1 = env.t0, env.t1
    rise = np.sin(0.5 * np.pi * t / t0)
    fall = np.cos(0.5 * np.pi * (t - t0 - t1) / t0)
    out = np.where(t < t0, rise, np.where(t <= t0 + t1, 1.0, fall))
    out = np.where((t < 0) | (t > 2 * t0 + t1), 0.0, out)
    return out[()] if out.ndim == 0 else out


def instantaneous_frequency(t, drive: FMDrive):
    t = np.asarray(t, dtype=float)
    return drive.omega0 + drive.delta_omega * np.sin(drive.Omega * (t - drive.t0))


def drive_signal(t, drive: FMDrive):
    """``sin(w(t) t)`` inside the open window (t0, t0 + t1), zero elsewhere."""
    t = np.asarray(t, dtype=float)
    inside = (t > drive.t0) & (t < drive.t0 + drive.t1)
    out = np.where(inside, np.sin(instantaneous_frequency(t, drive) * t), 0.0)
    return out[()] if out.ndim == 0 else out


def potential_at(z, t, pot: CombinedPotential):
    return pot.amplitude(t) * sauter_shape(z, pot.shape)


def make_potential(
    *,
    V1: float,
    V2: float,
    D: float,
    W_edge: float,
    omega0: float,
    delta_omega: float,
    Omega: float,
    t0: float,
    t1: float,
) -> CombinedPotential:
    """Convenience constructor from the flat parameter set (all a.u.)."""
    return CombinedPotential(
        V1=V1,
        V2=V2,
        shape=SauterShape(D, W_edge),
        envelope=Envelope(t0, t1),
        drive=FMDrive(omega0, delta_omega, Omega, t0, t1),
    )
