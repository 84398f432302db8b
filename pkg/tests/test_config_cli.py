import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from clockspin.cli import main
from clockspin.config import ConfigError, load_config
from synthetic import LINE, LINE_DP, line_trace

SMALL_MAP = """\
sweep:
  field_min_T: 0.15
  field_max_T: 0.18
  points: 7
frequency:
  freq_min_GHz: 8.5
  freq_max_GHz: 10.0
  points: 31
broadening:
  average_samples: 20
"""


def write(tmp_path, text, name="run.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def run(tmp_path, *args, out="out"):
    return main([*args, "--out", str(tmp_path / out)])


def test_defaults_load():
    cfg = load_config()
    assert cfg.system.dimension == 136
    assert len(cfg.fields) == 251 and len(cfg.freqs) == 500
    assert cfg.cavity.kappa == pytest.approx(0.117)
    assert cfg.broadening.t1 == pytest.approx(2e-5)


def test_scientific_notation_without_dot(tmp_path):
    cfg = load_config(write(tmp_path, "broadening:\n  t1_s: 2e-5\n"))
    assert cfg.broadening.t1 == 2e-5


@pytest.mark.parametrize(
    "text, line, key",
    [
        ("sweep:\n  theta_deg: 0\n  points: 0\n", 3, "sweep.points"),
        ("system:\n  g_j: abc\n", 2, "system.g_j"),
        ("sweep:\n  bogus: 1\n", 2, "sweep.bogus"),
        ("\n\ntemperature_K: -1\n", 3, "temperature_K"),
        ("dipolar:\n  mode: lattice_mc\n", 2, "dipolar.mode"),
        ("system:\n  j_electronic: 1.3\n", 2, "system.j_electronic"),
    ],
)
def test_config_errors_name_the_line(tmp_path, capsys, text, line, key):
    path = write(tmp_path, text)
    with pytest.raises(ConfigError, match=rf":{line}: {key}"):
        load_config(path)
    assert run(tmp_path, "levels", "--config", str(path)) == 2
    err = capsys.readouterr().err
    assert f"run.yaml:{line}:" in err


def test_malformed_yaml(tmp_path, capsys):
    path = write(tmp_path, "sweep:\n  points: [1\n")
    assert run(tmp_path, "levels", "--config", str(path)) == 2
    assert "run.yaml:" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert run(tmp_path, "levels", "--config", str(tmp_path / "nope.yaml")) == 2


def test_levels_csv(tmp_path):
    path = write(tmp_path, "sweep:\n  points: 11\n")
    assert run(tmp_path, "levels", "--config", str(path)) == 0
    lines = (tmp_path / "out" / "levels.csv").read_text().splitlines()
    assert len(lines) == 1 + 11 * 136
    assert (tmp_path / "out" / "effective_config.yaml").exists()


def test_levels_json(tmp_path):
    path = write(tmp_path, "sweep:\n  points: 3\n")
    assert run(tmp_path, "levels", "--config", str(path), "--format", "json") == 0
    d = json.loads((tmp_path / "out" / "levels.json").read_text())
    assert np.array(d["energy_GHz"]).shape == (3, 136)


def test_clock_defaults(tmp_path):
    assert run(tmp_path, "clock") == 0
    report = json.loads((tmp_path / "out" / "clock.json").read_text())
    assert len(report) == 4
    assert 0.161 <= report[-1]["field_T"] <= 0.171
    assert all(r["kind"] == "anticrossing" for r in report)


def test_clock_hyperfine_off(tmp_path):
    path = write(tmp_path, "system:\n  A_cm1: 0.0\n")
    assert run(tmp_path, "clock", "--config", str(path), "--format", "csv") == 0
    rows = (tmp_path / "out" / "clock.csv").read_text().splitlines()
    assert len(rows) == 2
    assert float(rows[1].split(",")[0]) < 1e-4


def test_clock_no_tunneling_reports_crossings(tmp_path):
    path = write(tmp_path, "system:\n  B44_cm1: 0.0\n")
    assert run(tmp_path, "clock", "--config", str(path)) == 0
    report = json.loads((tmp_path / "out" / "clock.json").read_text())
    assert len(report) == 4 and all(r["kind"] == "crossing" for r in report)


def test_map_outputs_and_determinism(tmp_path):
    path = write(tmp_path, SMALL_MAP)
    assert run(tmp_path, "map", "--config", str(path), "--threads", "1", out="a") == 0
    assert run(tmp_path, "map", "--config", str(path), "--threads", "2", out="b") == 0
    for name in ("map_raw.csv", "map_normalized.csv", "map_normalized.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    header = json.loads((tmp_path / "a" / "map_normalized.json").read_text())
    assert header["delta_field_T"] == 0.0025
    assert header["temperature_K"] == 4.2
    assert "coupling" in header and "broadening" in header


def test_seed_override_changes_map(tmp_path):
    path = write(tmp_path, SMALL_MAP)
    assert run(tmp_path, "map", "--config", str(path), "--seed", "1", out="a") == 0
    assert run(tmp_path, "map", "--config", str(path), "--seed", "2", out="b") == 0
    assert (tmp_path / "a" / "map_raw.csv").read_bytes() != (tmp_path / "b" / "map_raw.csv").read_bytes()


def test_effective_config_reproduces_run(tmp_path):
    path = write(tmp_path, SMALL_MAP)
    assert run(tmp_path, "map", "--config", str(path), "--seed", "5", out="a") == 0
    effective = tmp_path / "a" / "effective_config.yaml"
    assert run(tmp_path, "map", "--config", str(effective), out="b") == 0
    assert (tmp_path / "a" / "map_raw.csv").read_bytes() == (tmp_path / "b" / "map_raw.csv").read_bytes()
    assert yaml.safe_load(effective.read_text())["dipolar"]["seed"] == 5


def test_cavity_command(tmp_path):
    path = write(tmp_path, "sweep:\n  points: 26\n")
    assert run(tmp_path, "cavity", "--config", str(path)) == 0
    rows = (tmp_path / "out" / "kappa.csv").read_text().splitlines()
    kappa = np.array([float(r.split(",")[1]) for r in rows[1:]])
    assert len(kappa) == 26 and kappa.min() >= 0.117 - 1e-12


def test_fit_command(tmp_path):
    t = line_trace()
    data = tmp_path / "trace.csv"
    data.write_text("x,y\n" + "".join(f"{float(a)!r},{float(b)!r}\n" for a, b in zip(t.x, t.y)))
    assert run(tmp_path, "fit", str(data), "--delta-p", str(LINE_DP)) == 0
    d = json.loads((tmp_path / "out" / "fit_lineshape.json").read_text())
    values = {p["name"]: p["value"] for p in d["parameters"]}
    for k, v in LINE.items():
        assert values[k] == pytest.approx(v, rel=1e-6)


def test_fit_thermal_delta_p(tmp_path):
    t = line_trace()
    data = tmp_path / "trace.csv"
    data.write_text("".join(f"{float(a)!r},{float(b)!r}\n" for a, b in zip(t.x, t.y)))
    assert run(tmp_path, "fit", str(data)) == 0
    d = json.loads((tmp_path / "out" / "fit_lineshape.json").read_text())
    assert 0 < d["delta_p"] < 1


def test_fit_flat_trace_is_numerical_failure(tmp_path):
    data = tmp_path / "flat.csv"
    data.write_text("".join(f"{9 + k / 100},0\n" for k in range(100)))
    assert run(tmp_path, "fit", str(data), "--delta-p", "0.05") == 3


def test_dipolar_command(tmp_path):
    assert run(tmp_path, "dipolar", out="a") == 0
    assert run(tmp_path, "dipolar", out="b") == 0
    summary = json.loads((tmp_path / "a" / "dipolar_summary.json").read_text())
    assert summary["std_T"] == pytest.approx(6e-3, rel=0.03)
    assert summary["broadening_GHz"] == pytest.approx(0.84, abs=0.03)
    assert (tmp_path / "a" / "dipolar_histogram.csv").read_bytes() == (
        tmp_path / "b" / "dipolar_histogram.csv"
    ).read_bytes()


def test_console_script(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "clockspin.cli", "config", "--out", str(tmp_path)],
        capture_output=True, text=True, check=True,
    )
    assert yaml.safe_load(proc.stdout)["temperature_K"] == 4.2
