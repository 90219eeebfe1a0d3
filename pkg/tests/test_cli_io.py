import dataclasses
import json
import math
from pathlib import Path

import numpy as np
import pytest
from conftest import C2, LC
from hypothesis import given
from hypothesis import strategies as st

from sauterpair import cli
from sauterpair import experiments as ex
from sauterpair.cli_io import (
    ConfigError,
    RunConfig,
    RunManifest,
    csv_text,
    fmt,
    load_config,
    parse_config,
    parse_quantity,
    serialize_config,
    verify_manifest,
    write_outputs,
)
from sauterpair.experiments import ExperimentSpec, NumericalParams, PhysicalParams

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMOKE = CONFIGS / "smoke.toml"

MINIMAL = """
[experiment]
kind = "time_series"
[physical]
V1 = "1.47c2"
V2 = "1.47c2"
D = "10lambdaC"
W_edge = "0.3lambdaC"
omega0 = "0.5c2"
Omega = "0.2c2"
t0 = "5/c2"
t1 = "40pi/c2"
"""


@pytest.mark.parametrize(
    "text, expected",
    [
        ("1.47c2", 1.47 * C2),
        ("5/c2", 5 / C2),
        ("0.3lambdaC", 0.3 * LC),
        ("40pi/c2", 40 * math.pi / C2),
        ("pi", math.pi),
        ("10c", 10 * 137.035999),
        ("-2e-3", -2e-3),
        (0.25, 0.25),
        (3, 3.0),
    ],
)
def test_parse_quantity(text, expected):
    assert parse_quantity(text, 137.035999) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize("bad", ["", "c2", "1.0 eV", "inf", "nan", float("nan"), float("inf"), True, None, [1]])
def test_parse_quantity_rejects(bad):
    with pytest.raises(ConfigError):
        parse_quantity(bad, 137.035999)


def test_minimal_config_matches_reference_defaults():
    cfg = parse_config(MINIMAL)
    p, d = cfg.experiment.physical, PhysicalParams()
    for f in dataclasses.fields(PhysicalParams):
        assert getattr(p, f.name) == pytest.approx(getattr(d, f.name), rel=1e-14, abs=0)
    assert cfg.experiment.numerical == ex.PROFILES["desk"]


def test_fm_scan_preset():
    cfg = load_config(CONFIGS / "fm_scan.toml")
    spec = cfg.experiment
    assert spec.kind == "fm_amplitude_scan" and cfg.profile == "full"
    assert spec.numerical.N_z >= 2048
    assert len(spec.delta_omega_values) == 11
    assert spec.delta_omega_values[4] == pytest.approx(0.2 * C2)
    assert spec.physical.V1 == pytest.approx(1.47 * C2) and spec.physical.t1 == pytest.approx(40 * math.pi / C2)


def test_all_shipped_configs_parse():
    names = sorted(p.name for p in CONFIGS.glob("*.toml"))
    assert names
    for name in names:
        load_config(CONFIGS / name)


@pytest.mark.parametrize("key", ["omega0", "Omega"])
def test_missing_drive_key_is_named(key):
    text = "\n".join(line for line in MINIMAL.splitlines() if not line.startswith(f"{key} ="))
    with pytest.raises(ConfigError, match=f"missing required key physical.{key}"):
        parse_config(text)


def test_static_only_config_needs_no_drive_keys():
    text = "\n".join(line for line in MINIMAL.splitlines() if not line.startswith(("omega0", "Omega", "V2")))
    cfg = parse_config(text + '\nV2 = 0\n')
    assert cfg.experiment.physical.V2 == 0.0


@pytest.mark.parametrize(
    "extra, match",
    [
        ("\n[physical.extra]\nx = 1\n", "unknown key"),
        ("\n[numerical]\nN_z = 7\n", "N_z"),
        ("\n[numerical]\nfoo = 1\n", "unknown key numerical.foo"),
        ("\n[bogus]\nx = 1\n", "bogus"),
    ],
)
def test_config_errors(extra, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(MINIMAL + extra)


def test_axis_range_table():
    text = MINIMAL.replace('kind = "time_series"', 'kind = "fm_amplitude_scan"\ndelta_omega_values = {start = 0, stop = "0.5c2", num = 11}')
    spec = parse_config(text).experiment
    assert spec.delta_omega_values[-1] == pytest.approx(0.5 * C2)
    assert len(spec.delta_omega_values) == 11


finite = st.floats(0.01, 10.0, allow_nan=False)


@given(
    V1=finite, V2=finite, D=finite, dw=st.floats(0, 3), N_z=st.sampled_from([32, 64, 128]),
    dws=st.lists(st.floats(0, 3), max_size=4), workers=st.integers(1, 8),
)
def test_serialize_round_trip(V1, V2, D, dw, N_z, dws, workers):
    phys = PhysicalParams(V1=V1 * C2, V2=V2 * C2, D=D * LC, delta_omega=dw * C2)
    spec = ExperimentSpec(
        kind="fm_amplitude_scan", physical=phys, numerical=NumericalParams(N_z=N_z, p_cutoff=None),
        delta_omega_values=tuple(x * C2 for x in dws),
    )
    cfg = RunConfig(spec, out_dir="some/where", workers=workers)
    back = parse_config(serialize_config(cfg))
    assert back == cfg
    assert back.config_hash == cfg.config_hash


def test_fmt_round_trips_doubles():
    rng = np.random.default_rng(7)
    for x in rng.standard_normal(200) * 10.0 ** rng.integers(-300, 300, 200):
        assert float(fmt(x)) == x
    assert fmt(3) == "3" and fmt(True) == "1"


def test_header_only_csv():
    assert csv_text(["t", "N"], []) == "t,N\n"


def _manifest():
    return RunManifest.for_config(parse_config(SMOKE.read_text()))


def test_manifest_checksums_and_tamper(tmp_path):
    write_outputs({"a.csv": (["x"], [(1.0,)]), "b.csv": (["y"], [])}, _manifest(), tmp_path)
    data = json.loads((tmp_path / "manifest.json").read_text())
    assert set(data["checksums"]) == {"a.csv", "b.csv"}
    assert verify_manifest(tmp_path) == []
    (tmp_path / "a.csv").write_text("x\n2\n")
    assert verify_manifest(tmp_path) == ["a.csv"]


def test_failed_write_leaves_no_partial_files(tmp_path):
    class Boom:
        def __iter__(self):
            raise RuntimeError("disk full")

    with pytest.raises(RuntimeError):
        write_outputs({"a.csv": (["x"], [(1.0,)]), "b.csv": (["y"], Boom())}, _manifest(), tmp_path)
    assert list(tmp_path.iterdir()) == []


def _csvs(out: Path):
    return {p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))}


def test_cli_rerun_and_worker_count_give_identical_bytes(tmp_path, capsys):
    assert cli.main(["run", "--config", str(SMOKE), "--out", str(tmp_path / "a"), "--workers", "1"]) == 0
    assert cli.main(["run", "--config", str(SMOKE), "--out", str(tmp_path / "b"), "--workers", "8"]) == 0
    assert cli.main(["run", "--config", str(SMOKE), "--out", str(tmp_path / "c"), "--workers", "1", "--seedless"]) == 0
    a = _csvs(tmp_path / "a")
    assert a and a == _csvs(tmp_path / "b") == _csvs(tmp_path / "c")
    assert "sweep.csv" in capsys.readouterr().out


def test_cli_failed_point_exits_nonzero(tmp_path, monkeypatch):
    real = ex.run_physical

    def flaky(physical, numerical, **kw):
        if physical.delta_omega > 0:
            raise FloatingPointError("diverged")
        return real(physical, numerical, **kw)

    monkeypatch.setattr(ex, "run_physical", flaky)
    assert cli.main(["run", "--config", str(SMOKE), "--out", str(tmp_path)]) == 1
    rows = (tmp_path / "sweep.csv").read_text().splitlines()
    assert rows[0] == "delta_omega,N_final,failed"
    assert rows[1].endswith(",0") and rows[2].endswith(",1") and "nan" in rows[2]
    assert "diverged" in json.loads((tmp_path / "manifest.json").read_text())["failures"][0]


def test_cli_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text(MINIMAL.replace('omega0 = "0.5c2"\n', ""))
    assert cli.main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "physical.omega0" in capsys.readouterr().err


def test_cli_verify(tmp_path):
    assert cli.main(["run", "--config", str(SMOKE), "--out", str(tmp_path)]) == 0
    assert cli.main(["verify", "--out", str(tmp_path)]) == 0
    (tmp_path / "sweep.csv").write_text("tampered\n")
    assert cli.main(["verify", "--out", str(tmp_path)]) == 1


def test_cli_drive_spectrum_command(tmp_path):
    cfg = CONFIGS / "drive_spectrum.toml"
    assert cli.main(["drivespec", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "drive_spectrum.csv").read_text().splitlines()
    assert lines[0] == "f,amplitude" and len(lines) > 100


def test_seedless_flag_restores_numpy(tmp_path):
    assert cli.main(["run", "--config", str(SMOKE), "--out", str(tmp_path), "--seedless"]) == 0
    np.random.default_rng(0).random()
