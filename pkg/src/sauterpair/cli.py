"""Command-line entry point: ``python -m sauterpair <command> [options]``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .cli_io import (
    ConfigError,
    RunConfig,
    RunManifest,
    bound_levels_table,
    density_table,
    dives_table,
    drive_spectrum_table,
    load_config,
    number_series_table,
    spectrum_table,
    sweep_table,
    verify_manifest,
    write_outputs,
)
from .experiments import C2, PROFILES, ExperimentSpec

COMMAND_KIND = {
    "scan": "fm_amplitude_scan",
    "optimal": "optimal_fm_curve",
    "response": "frequency_response",
    "boundstates": "bound_state_movie",
    "drivespec": "drive_spectrum",
}

DEFAULT_DW_GRID = tuple(round(0.05 * k, 10) * C2 for k in range(11))


def _default_config(kind: str, profile: str) -> RunConfig:
    spec = ExperimentSpec(kind=kind, numerical=PROFILES[profile])
    if kind in ("fm_amplitude_scan", "optimal_fm_curve", "frequency_response"):
        spec = dataclasses.replace(spec, delta_omega_values=DEFAULT_DW_GRID)
    if kind in ("optimal_fm_curve", "frequency_response"):
        spec = dataclasses.replace(spec, omega0_values=(0.5 * C2,))
    return RunConfig(spec, profile=profile)


def _resolve(args, command: str) -> RunConfig:
    if args.config:
        cfg = load_config(args.config, args.profile)
    else:
        if command == "run":
            raise ConfigError("run needs --config")
        cfg = _default_config(COMMAND_KIND[command], args.profile or "desk")
    if command in COMMAND_KIND and cfg.experiment.kind != COMMAND_KIND[command]:
        cfg = dataclasses.replace(cfg, experiment=dataclasses.replace(cfg.experiment, kind=COMMAND_KIND[command]))
    changes = {}
    if args.out:
        changes["out_dir"] = args.out
    if args.workers:
        changes["workers"] = args.workers
    return dataclasses.replace(cfg, **changes) if changes else cfg


def execute(cfg: RunConfig, cache_dir=None) -> tuple[dict, RunManifest]:
    """Run the configured experiment; returns CSV tables and the manifest."""
    spec = cfg.experiment
    manifest = RunManifest.for_config(cfg)
    cache = ex.ResultCache(cache_dir) if cache_dir else None
    w = cfg.workers
    tables = {}
    kind = spec.kind
    if kind in ("time_series", "density_snapshots"):
        dws = spec.delta_omega_values or (spec.physical.delta_omega,)
        series = {}
        for dw in dws:
            r = ex.run_single(spec.with_physical(delta_omega=dw), workers=w, keep_matrix=False, cache=cache)
            series[dw] = r.series
            manifest.summary.setdefault("N_final", {})[repr(dw)] = r.N_final
            if r.densities:
                tables["density.csv"] = density_table(r.densities, r.z)
        tables["number_series.csv"] = number_series_table(series)
    elif kind == "fm_amplitude_scan":
        sweep = ex.scan_fm_amplitude(spec, w, cache)
        tables["sweep.csv"] = sweep_table(sweep)
        _record_sweep(manifest, sweep)
    elif kind in ("optimal_fm_curve", "frequency_response"):
        run = ex.frequency_response if kind == "frequency_response" else ex.optimal_fm_curve
        sweep = run(spec, w, cache)
        tables["sweep.csv"] = sweep_table(sweep)
        _record_sweep(manifest, sweep)
    elif kind == "spectrum_pair":
        fixed, fm, runs = ex.spectrum_pair(spec, workers=w, cache=cache)
        tables["spectrum.csv"] = spectrum_table({"fixed": fixed, "fm": fm})
        tables["number_series.csv"] = number_series_table({r.physical.delta_omega: r.series for r in runs})
    elif kind == "bound_state_movie":
        study = ex.bound_state_movie(spec)
        tables["bound_levels.csv"] = bound_levels_table(study.trajectories)
        tables["dives.csv"] = dives_table(study.dives)
        manifest.summary["heuristic_score"] = study.score
        manifest.summary["dive_count_level0"] = sum(1 for d in study.dives if d.level == 0)
    elif kind == "drive_spectrum":
        tables["drive_spectrum.csv"] = drive_spectrum_table(ex.drive_spectrum_experiment(spec))
    else:  # pragma: no cover - kinds are validated in ExperimentSpec
        raise ConfigError(f"unsupported kind {kind}")
    return tables, manifest


def _record_sweep(manifest: RunManifest, sweep) -> None:
    manifest.summary.update(sweep.derived)
    manifest.summary["provenance"] = sweep.provenance
    manifest.failures.extend(f"point {i} {sweep.points[i]}: {msg}" for i, msg in sorted(sweep.failures.items()))


def verify_suite(out_dir=None) -> list[str]:
    """Small oracle and invariant checks; returns failure descriptions."""
    from .lattice import Constants, build_basis, make_grid
    from .potential import make_potential
    from .propagator import EvolutionConfig, dense_oracle_evolve, evolve_scattering_matrix, oracle_scattering_matrix
    from .spectral_analysis import drive_spectrum

    problems = []
    c = Constants()
    basis = build_basis(make_grid(2.0, 32), c)
    pot = make_potential(
        V1=1.5 * C2, V2=0.5 * C2, D=0.3, W_edge=0.05, omega0=0.5 * C2, delta_omega=0.1 * C2, Omega=0.2 * C2,
        t0=2 / C2, t1=16 / C2,
    )
    cfg = EvolutionConfig(dt=0.01 / C2, t_end=pot.t_end, record_times=(pot.t_end,))
    ev = evolve_scattering_matrix(basis, pot, cfg)
    ref = oracle_scattering_matrix(dense_oracle_evolve(basis, pot, pot.t_end, 400))
    dev = float(np.max(np.abs(ev.final.U - ref)))
    if dev > 1e-5:
        problems.append(f"oracle deviation {dev:.3e}")
    if ev.completeness_deficit.max() > 1e-8:
        problems.append(f"unitarity deficit {ev.completeness_deficit.max():.3e}")
    free = make_potential(V1=0.0, V2=0.0, D=0.3, W_edge=0.05, omega0=0.0, delta_omega=0.0, Omega=0.0, t0=2 / C2, t1=16 / C2)
    ev0 = evolve_scattering_matrix(basis, free, EvolutionConfig(dt=0.05 / C2, t_end=free.t_end))
    if ev0.pair_number.max() > 1e-10:
        problems.append(f"free-field N {ev0.pair_number.max():.3e}")
    ds = drive_spectrum(pot.drive)
    lhs = np.sum(ds.signal**2) * ds.dt
    rhs = np.sum(ds.amplitude**2) * ds.df
    if abs(lhs - rhs) > 1e-8 * lhs:
        problems.append("drive spectrum Parseval mismatch")
    if out_dir is not None and Path(out_dir, "manifest.json").exists():
        problems += [f"checksum mismatch: {name}" for name in verify_manifest(out_dir)]
    return problems


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sauterpair", description="Pair creation in static plus FM Sauter wells.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("run", *COMMAND_KIND, "verify"):
        s = sub.add_parser(name)
        s.add_argument("--config", help="TOML run configuration")
        s.add_argument("--profile", choices=sorted(PROFILES), help="numerical preset (default desk)")
        s.add_argument("--out", help="output directory")
        s.add_argument("--workers", type=int, help="total worker threads")
        s.add_argument("--cache", help="directory of cached single runs")
        s.add_argument("--seedless", action="store_true", help="assert that no random numbers are used")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    saved = (np.random.seed, np.random.default_rng)
    if args.seedless:
        # every computation here is deterministic; poison the global RNG to prove it
        np.random.seed = np.random.default_rng = _no_rng
    try:
        return _dispatch(args)
    finally:
        np.random.seed, np.random.default_rng = saved


def _dispatch(args) -> int:
    try:
        if args.command == "verify":
            problems = verify_suite(args.out)
            for msg in problems:
                print("FAIL", msg)
            print("verify:", "ok" if not problems else f"{len(problems)} failure(s)")
            return 1 if problems else 0
        cfg = _resolve(args, args.command)
        tables, manifest = execute(cfg, args.cache)
        write_outputs(tables, manifest, cfg.out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    for name in tables:
        print(Path(cfg.out_dir) / name)
    if manifest.failures:
        for f in manifest.failures:
            print("FAILED", f, file=sys.stderr)
        return 1
    return 0


def _no_rng(*args, **kwargs):
    raise RuntimeError("random number generation requested in a --seedless run")


if __name__ == "__main__":
    sys.exit(main())
