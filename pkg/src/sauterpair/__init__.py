"""Electron-positron pair creation from a static plus frequency-modulated Sauter well,
computed with a lattice Dirac-sea propagator in one spatial dimension."""

__version__ = "0.1.0"
