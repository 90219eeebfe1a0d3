"""Full-scale computations read back by the acceptance suite.

Every single run is cached under ``results/cache`` (keyed by its parameter
hash), so the script can be interrupted and restarted. Summaries are written
to ``results/<target>.json``.

    python scripts/run_full_scale.py                 # all targets
    python scripts/run_full_scale.py dw_scan spectrum   # a subset
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import time
from pathlib import Path

import numpy as np

from sauterpair import experiments as ex
from sauterpair.cli_io import atomic_write, load_config
from sauterpair.experiments import C2, LAMBDA_C, PROFILES, ResultCache
from sauterpair.lattice import Constants, make_grid
from sauterpair.potential import SauterShape
from sauterpair.spectral_analysis import StaticWell, critical_amplitudes, instantaneous_spectrum

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
log = logging.getLogger("full_scale")


def _save(out: Path, name: str, payload: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / f"{name}.json", json.dumps(payload, indent=2, sort_keys=True))
    log.info("wrote %s", out / f"{name}.json")


def target_levels(out, cache, num):
    """Gap levels of the two static wells at the propagation lattice."""
    grid = make_grid(num.L, num.N_z)
    res = {}
    for label, D in (("D4", 4 * LAMBDA_C), ("D10", 10 * LAMBDA_C)):
        a = 1.47 * C2
        fr = instantaneous_spectrum(StaticWell(SauterShape(D, 0.3 * LAMBDA_C), a), 0.0, grid, Constants(num.c), keep_vectors=False)
        res[label] = (fr.energies / C2).tolist()
        log.info("%s levels / c^2: %s", label, np.round(fr.energies / C2, 4))
    _save(out, "bound_levels", {"N_z": num.N_z, "L": num.L, "levels_c2": res})


def target_critical(out, cache, num):
    """Critical depths of the reference well between 1.9 c^2 and the deepest drive excursion."""
    grid = make_grid(num.L, num.N_z)
    shape = SauterShape(10 * LAMBDA_C, 0.3 * LAMBDA_C)
    t = time.time()
    below = instantaneous_spectrum(StaticWell(shape, 1.9 * C2), 0.0, grid, Constants(num.c), keep_vectors=False)
    crit = critical_amplitudes(shape, grid, Constants(num.c), a_min=1.9 * C2, a_max=1.05 * 2.94 * C2, n_sweep=30, rtol=1e-7)
    log.info("critical depths / c^2: %s (%.0f s)", np.round(crit / C2, 5), time.time() - t)
    _save(out, "critical_amplitudes", {
        "N_z": num.N_z, "L": num.L, "a_min_c2": 1.9, "levels_below_sea_at_a_min": int(np.sum(below.energies < -C2)),
        "a_crit_c2": (crit / C2).tolist(),
    })


def _sweep_payload(sweep, extra=None):
    rows = [{"point_c2": [v / C2 for v in pt], "N_final": (None if math.isnan(n) else float(n))}
            for pt, n in zip(sweep.points, sweep.N_final)]
    payload = {"axes": list(sweep.axis_names), "rows": rows, "failures": {str(k): v for k, v in sweep.failures.items()}}
    payload.update(extra or {})
    return payload


def target_dw_scan(out, cache, num):
    spec = load_config(CONFIGS / "fm_scan.toml").experiment
    spec = dataclasses.replace(spec, numerical=num)
    sweep = ex.scan_fm_amplitude(spec, cache=cache)
    _save(out, "dw_scan", _sweep_payload(sweep, {"N_z": num.N_z, "dt_c2": num.dt * C2, "p_cutoff": num.p_cutoff}))


def target_single(out, cache, num, omega0s=(1.0, 0.1)):
    spec = load_config(CONFIGS / "response_single.toml").experiment
    spec = dataclasses.replace(spec, numerical=num, omega0_values=tuple(w * C2 for w in omega0s))
    sweep = ex.frequency_response(spec, cache=cache)
    _save(out, "single_well", _sweep_payload(sweep, {"N_z": num.N_z, "dt_c2": num.dt * C2, "p_cutoff": num.p_cutoff}))


def target_spectrum(out, cache, num):
    spec = load_config(CONFIGS / "spectrum_narrow.toml").experiment
    spec = dataclasses.replace(spec, numerical=num.replace(bin_width=0.02 * C2))
    fixed, fm, runs = ex.spectrum_pair(spec, cache=cache)
    _save(out, "spectrum_pair", {
        "N_z": num.N_z, "bin_width_c2": 0.02,
        "fixed": {"E_c2": (fixed.centers / C2).tolist(), "dN_dE": fixed.density.tolist(), "N": runs[0].N_final},
        "fm": {"E_c2": (fm.centers / C2).tolist(), "dN_dE": fm.density.tolist(), "N": runs[1].N_final},
    })


TARGETS = {
    "levels": target_levels,
    "dw_scan": target_dw_scan,
    "spectrum": target_spectrum,
    "single": target_single,
    "critical": target_critical,
}


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("targets", nargs="*", help=f"any of {', '.join(TARGETS)} (default: all)")
    p.add_argument("--out", default=str(ROOT / "results"))
    p.add_argument("--profile", default="full", choices=sorted(PROFILES))
    args = p.parse_args(argv)
    unknown = set(args.targets) - set(TARGETS)
    if unknown:
        p.error(f"unknown targets: {', '.join(sorted(unknown))}")
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    out = Path(args.out)
    cache = ResultCache(out / "cache")
    num = PROFILES[args.profile]
    for name in args.targets or list(TARGETS):
        t = time.time()
        TARGETS[name](out, cache, num)
        log.info("%s done in %.0f s", name, time.time() - t)


if __name__ == "__main__":
    main()
