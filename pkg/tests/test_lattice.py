import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sauterpair.lattice import (
    C_AU,
    Constants,
    Grid,
    build_basis,
    free_energy,
    free_hamiltonian_block,
    free_spinors,
    make_grid,
)


def test_small_lattice_sites_and_momenta():
    g = Grid(2.0, 4)
    np.testing.assert_allclose(g.z, [-1.0, -0.5, 0.0, 0.5])
    np.testing.assert_allclose(g.p, [-2 * np.pi, -np.pi, 0.0, np.pi])


def test_spacing_at_2048():
    assert make_grid(2.0, 2048).dz == 9.765625e-4


@pytest.mark.parametrize("L, N", [(2.0, 7), (2.0, 4), (0.0, 64), (-1.0, 64), (np.inf, 64)])
def test_make_grid_rejects(L, N):
    with pytest.raises(ValueError):
        make_grid(L, N)


def test_constants():
    c = Constants()
    assert c.c == C_AU
    assert c.c2 == pytest.approx(18778.865, rel=1e-7)
    with pytest.raises(ValueError):
        Constants(0.0)


def test_fft_order_matches_numpy_frequencies():
    g = make_grid(3.0, 16)
    np.testing.assert_allclose(g.p_fft, 2 * np.pi * np.fft.fftfreq(16, g.dz), atol=1e-12)


def test_zero_momentum_spinors():
    c = Constants()
    u_pos, u_neg = free_spinors(np.array([0.0]), c)
    np.testing.assert_allclose(u_pos[:, 0], [1.0, 0.0])
    np.testing.assert_allclose(u_neg[:, 0], [0.0, 1.0])
    assert free_energy(0.0, c) == pytest.approx(c.c2)


def test_dispersion_at_p_equal_c():
    c = Constants()
    assert free_energy(c.c, c) == pytest.approx(np.sqrt(2) * c.c2, rel=1e-14)


@given(st.floats(-1e5, 1e5, allow_nan=False), st.floats(1.0, 300.0))
def test_spinors_are_orthonormal_eigenvectors(p, c):
    k = Constants(c)
    u_pos, u_neg = free_spinors(np.array([p]), k)
    h = free_hamiltonian_block(p, k)
    E = free_energy(p, k)
    np.testing.assert_allclose(h @ u_pos[:, 0], E * u_pos[:, 0], rtol=1e-10, atol=1e-10 * E)
    np.testing.assert_allclose(h @ u_neg[:, 0], -E * u_neg[:, 0], rtol=1e-10, atol=1e-10 * E)
    assert np.dot(u_pos[:, 0], u_pos[:, 0]) == pytest.approx(1.0, abs=1e-14)
    assert np.dot(u_pos[:, 0], u_neg[:, 0]) == pytest.approx(0.0, abs=1e-14)


@pytest.mark.parametrize("N", [8, 32, 64])
def test_mode_gram_matrix_is_identity(N):
    b = build_basis(make_grid(2.0, N))
    g = b.grid
    W = np.concatenate([b.wavefunctions(1), b.wavefunctions(-1)]).reshape(2 * N, -1)
    gram = g.dz * W.conj() @ W.T
    np.testing.assert_allclose(gram, np.eye(2 * N), atol=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_transforms_are_inverse_and_norm_preserving(seed):
    b = build_basis(make_grid(2.0, 32))
    rng = np.random.default_rng(seed)
    psi = rng.normal(size=(2, 32)) + 1j * rng.normal(size=(2, 32))
    coeffs = b.to_momentum(psi)
    np.testing.assert_allclose(b.to_position(coeffs), psi, atol=1e-12)
    assert np.sum(np.abs(coeffs) ** 2) == pytest.approx(b.grid.dz * np.sum(np.abs(psi) ** 2), rel=1e-12)


def test_mode_projects_onto_its_own_momentum():
    b = build_basis(make_grid(2.0, 16))
    i = b.index(3, 1)
    mode = b.mode(i, 1)
    coeffs = b.to_momentum(mode.wavefunction(b.grid))
    j = int(np.flatnonzero(b.grid.fft_order == i)[0])
    expected = np.zeros((2, 16), dtype=complex)
    expected[:, j] = mode.amplitude
    np.testing.assert_allclose(coeffs, expected, atol=1e-12)
    assert mode.energy == pytest.approx(b.energy[i])
    assert b.mode(i, -1).energy == pytest.approx(-b.energy[i])


def test_index_bounds():
    b = build_basis(make_grid(2.0, 8))
    assert b.index(-4, 1) == 0 and b.index(3, -1) == 7
    with pytest.raises(IndexError):
        b.index(4, 1)
    with pytest.raises(ValueError):
        b.index(0, 0)
