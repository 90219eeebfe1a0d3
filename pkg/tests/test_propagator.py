import numpy as np
import pytest
from conftest import C2, smooth_random_potential
from hypothesis import given
from hypothesis import strategies as st

from sauterpair.lattice import build_basis, make_grid
from sauterpair.potential import make_potential
from sauterpair.propagator import (
    EvolutionConfig,
    UnitarityError,
    config_digest,
    dense_expm_static,
    dense_oracle_evolve,
    evolve_scattering_matrix,
    kinetic_half_step,
    kinetic_propagator,
    load_checkpoint,
    oracle_scattering_matrix,
    potential_phase_step,
    save_checkpoint,
    split_step,
    step_schedule,
)


def zero(z, t):
    return np.zeros_like(z)


def well(V1=1.5, V2=0.6, D=0.25, W=0.04, w0=0.6, dw=0.1, t0=1.0, t1=6.0):
    return make_potential(
        V1=V1 * C2, V2=V2 * C2, D=D, W_edge=W, omega0=w0 * C2, delta_omega=dw * C2, Omega=0.2 * C2,
        t0=t0 / C2, t1=t1 / C2,
    )


def random_field(seed, N=32, batch=()):
    rng = np.random.default_rng(seed)
    shape = (*batch, 2, N)
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def test_kinetic_identity_at_zero_dt(basis32):
    y = random_field(0)
    np.testing.assert_array_equal(kinetic_half_step(y, basis32, 0.0), y)


def test_kinetic_at_zero_momentum_is_diagonal(basis32):
    dt = 0.3 / C2
    k00, k01, k11 = kinetic_propagator(basis32, dt)
    j = int(np.flatnonzero(basis32.grid.p_fft == 0.0)[0])
    assert k00[j] == pytest.approx(np.exp(-1j * C2 * dt), abs=1e-14)
    assert k11[j] == pytest.approx(np.exp(1j * C2 * dt), abs=1e-14)
    assert k01[j] == 0


@given(st.integers(0, 2**31), st.floats(0, 10 / C2))
def test_kinetic_preserves_norm(seed, dt):
    b = build_basis(make_grid(2.0, 32))
    y = random_field(seed)
    out = kinetic_half_step(y, b, dt)
    assert np.sum(np.abs(out) ** 2) == pytest.approx(np.sum(np.abs(y) ** 2), rel=1e-14)


def test_potential_phase_examples(basis32):
    g = basis32.grid
    x = random_field(1)
    np.testing.assert_array_equal(potential_phase_step(x, g, 0.0, 0.1, zero), x)
    const = lambda z, t: np.full_like(z, C2)  # noqa: E731
    dt = 0.7 / C2
    np.testing.assert_allclose(potential_phase_step(x, g, 0.0, dt, const), np.exp(-1j * C2 * dt) * x)


@given(st.integers(0, 2**31))
def test_potential_phase_preserves_norm(seed):
    g = make_grid(2.0, 32)
    rng = np.random.default_rng(seed)
    V = rng.uniform(-5 * C2, 5 * C2, 32)
    x = random_field(seed)
    out = potential_phase_step(x, g, 0.0, 1e-3, lambda z, t: V)
    assert np.sum(np.abs(out) ** 2) == pytest.approx(np.sum(np.abs(x) ** 2), rel=1e-14)


def test_split_step_without_potential_is_free_evolution(basis32):
    x = random_field(2)
    dt = 0.05 / C2
    direct = basis32.to_position(kinetic_half_step(basis32.to_momentum(x), basis32, dt))
    np.testing.assert_allclose(split_step(x, basis32, 0.0, dt, zero), direct, atol=1e-12)


def test_split_step_norm_drift_over_many_steps(basis32):
    pot = smooth_random_potential(3, basis32.grid)
    x = random_field(3)
    n0 = np.sum(np.abs(x) ** 2)
    dt = 0.02 / C2
    for k in range(1000):
        x = split_step(x, basis32, k * dt, dt, pot)
    assert abs(np.sum(np.abs(x) ** 2) / n0 - 1) < 1e-12


@given(
    st.floats(1e-3, 1.0),
    st.lists(st.floats(0.0, 20.0), min_size=1, max_size=6).map(sorted),
)
def test_step_schedule_covers_record_times(dt, records):
    steps = step_schedule(dt, records)
    t = 0.0
    hit = {}
    for ts, h, rec in steps:
        assert ts == pytest.approx(t, abs=1e-9)
        assert 0 <= h <= dt * (1 + 1e-9)
        t = ts + h
        if rec is not None:
            hit[rec] = t
    assert set(hit) == set(range(len(records)))
    for i, tr in enumerate(records):
        assert hit[i] == pytest.approx(tr, abs=1e-9)


def test_free_field_gives_no_pairs(basis32):
    pot = well(V1=0.0, V2=0.0)
    cfg = EvolutionConfig(dt=0.05 / C2, t_end=pot.t_end, record_times=tuple(np.linspace(0, pot.t_end, 5)))
    ev = evolve_scattering_matrix(basis32, pot, cfg)
    assert ev.pair_number.max() <= 1e-20
    for sm in ev.matrices.values():
        assert np.abs(sm.U).max() < 1e-12


def test_completeness_and_density(basis32):
    pot = well()
    rec = tuple(np.linspace(0, pot.t_end, 6))
    cfg = EvolutionConfig(dt=0.02 / C2, t_end=pot.t_end, record_times=rec, density_times=rec)
    ev = evolve_scattering_matrix(basis32, pot, cfg)
    assert ev.completeness_deficit.max() <= 1e-8
    assert ev.pair_number[-1] > 1e-4
    for t, rho in ev.densities.items():
        assert rho.min() >= 0
        N = ev.pair_number[list(ev.times).index(t)]
        assert np.sum(rho) * basis32.grid.dz == pytest.approx(N, rel=1e-8, abs=1e-300)
    np.testing.assert_allclose(ev.final.pair_number, ev.pair_number[-1], rtol=1e-12)


def test_results_independent_of_blocks_and_workers(basis32):
    pot = well()
    base = dict(dt=0.05 / C2, t_end=pot.t_end, record_times=(pot.t_end / 2, pot.t_end))
    a = evolve_scattering_matrix(basis32, pot, EvolutionConfig(**base, block_size=8, workers=1))
    b = evolve_scattering_matrix(basis32, pot, EvolutionConfig(**base, block_size=8, workers=4))
    np.testing.assert_array_equal(a.pair_number, b.pair_number)
    np.testing.assert_array_equal(a.final.U, b.final.U)
    c = evolve_scattering_matrix(basis32, pot, EvolutionConfig(**base, block_size=5, workers=3))
    np.testing.assert_array_equal(a.final.U, c.final.U)


def test_momentum_cutoff_restricts_columns(basis32):
    pot = well()
    cut = 6 * np.pi
    cfg = EvolutionConfig(dt=0.05 / C2, t_end=pot.t_end, p_cutoff=cut)
    ev = evolve_scattering_matrix(basis32, pot, cfg)
    dropped = np.abs(basis32.grid.p) > cut
    assert np.all(ev.final.U[:, dropped] == 0)
    assert len(ev.columns) == np.sum(~dropped)


def test_unitarity_violation_is_reported(basis32):
    pot = well()
    cfg = EvolutionConfig(dt=0.2 / C2, t_end=pot.t_end, unitarity_tol=1e-30)
    with pytest.raises(UnitarityError) as info:
        evolve_scattering_matrix(basis32, pot, cfg)
    assert 0 <= info.value.column < 32


def test_config_validation():
    with pytest.raises(ValueError):
        EvolutionConfig(dt=0.0, t_end=1.0)
    with pytest.raises(ValueError):
        EvolutionConfig(dt=0.1, t_end=1.0, record_times=(0.5, 0.2))
    with pytest.raises(ValueError):
        EvolutionConfig(dt=0.1, t_end=1.0, record_times=(1.0,), density_times=(0.5,))


def test_checkpoint_round_trip_and_resume(tmp_path, basis32):
    pot = well()
    t_mid, t_end = 3.5 / C2, pot.t_end
    cfg = EvolutionConfig(dt=0.05 / C2, t_end=t_end, record_times=(t_mid, t_end))
    full = evolve_scattering_matrix(basis32, pot, cfg, field_times=(t_mid,))
    digest = config_digest({"dt": cfg.dt})
    path = tmp_path / "state.ckpt"
    save_checkpoint(path, full, t_mid, digest)
    ck = load_checkpoint(path)
    assert ck.t == t_mid and ck.config_hash == digest and ck.grid == basis32.grid
    np.testing.assert_array_equal(ck.U, full.matrices[t_mid].U)
    resumed = evolve_scattering_matrix(basis32, pot, cfg, start=ck)
    np.testing.assert_array_equal(resumed.final.U, full.final.U)


def test_checkpoint_rejects_other_files(tmp_path):
    p = tmp_path / "x.ckpt"
    p.write_bytes(b"not a checkpoint\n")
    with pytest.raises(ValueError):
        load_checkpoint(p)


def test_oracle_free_evolution_is_exact(basis32):
    t = 3.0 / C2
    M = dense_oracle_evolve(basis32, zero, t, 3)
    E = np.concatenate([basis32.energy, -basis32.energy])
    np.testing.assert_allclose(M, np.diag(np.exp(-1j * E * t)), atol=1e-10)
    assert np.abs(oracle_scattering_matrix(M)).max() < 1e-10


def test_oracle_static_potential_matches_single_exponential(basis32):
    pot = well(V2=0.0, t0=0.0 + 1e-9, t1=100.0)  # plateau throughout
    V = pot(basis32.grid.z, 1.0 / C2)
    static = lambda z, t: V  # noqa: E731
    t = 5.0 / C2
    exact = dense_expm_static(basis32, V, t)
    for n in (2, 7):
        np.testing.assert_allclose(dense_oracle_evolve(basis32, static, t, n), exact, atol=1e-9)


def test_oracle_self_consistency(basis32):
    pot = smooth_random_potential(7, basis32.grid)
    t = 5.0 / C2
    a = dense_oracle_evolve(basis32, pot, t, 100)
    b = dense_oracle_evolve(basis32, pot, t, 200)
    assert np.abs(a - b).max() < 1e-7
    np.testing.assert_allclose(a.conj().T @ a, np.eye(64), atol=1e-11)


def test_oracle_rejects_large_grids():
    with pytest.raises(ValueError):
        dense_oracle_evolve(build_basis(make_grid(2.0, 128)), zero, 1.0, 1)
