import json
import subprocess
import sys

import pytest

from beamlab import cli


def write_config(tmp_path, **extra):
    cfg = {
        "experiment": "peb_sweep",
        "output_dir": str(tmp_path / "out"),
        "array": {"rows": 4, "cols": 4},
        "tables": ["K1"],
        "sweep": {"axis": "distance", "values": [1.0]},
        "designs": [{"kind": "random"}],
        "mc_trials": 2,
        "workers": 1,
    }
    cfg.update(extra)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def test_tables_list(capsys):
    assert cli.main(["tables", "list"]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "K1: 2 values" in out and "V: 14 values" in out


def test_tables_validate(tmp_path, capsys):
    good = tmp_path / "good.csv"
    good.write_text("re,im\n0.5,0.5\n-0.5,0\n")
    assert cli.main(["tables", "validate", str(good)]) == cli.EXIT_OK
    bad = tmp_path / "bad.csv"
    bad.write_text("re,im\n0.5,0.5\n1.0,1.0\n")
    assert cli.main(["tables", "validate", str(bad)]) == cli.EXIT_CONFIG
    assert "row 2" in capsys.readouterr().err
    assert cli.main(["tables", "validate", str(tmp_path / "missing.csv")]) == cli.EXIT_CONFIG


def test_peb_command_and_seed_override(tmp_path, monkeypatch):
    path = write_config(tmp_path)
    monkeypatch.setenv("BEAMLAB_SEED", "99")
    assert cli.main(["peb", "--config", str(path)]) == cli.EXIT_OK
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["parameters"]["seed"] == 99


def test_out_flag_overrides_output_dir(tmp_path):
    path = write_config(tmp_path)
    assert cli.main(["peb", "--config", str(path), "--out", str(tmp_path / "elsewhere")]) == 0
    assert (tmp_path / "elsewhere" / "peb_random_K1.csv").exists()


def test_config_errors_exit_2(tmp_path, monkeypatch, capsys):
    path = write_config(tmp_path, tables=["K7"])
    assert cli.main(["peb", "--config", str(path)]) == cli.EXIT_CONFIG
    assert "tables[0].name" in capsys.readouterr().err
    good = write_config(tmp_path)
    assert cli.main(["synth", "--config", str(good)]) == cli.EXIT_CONFIG
    monkeypatch.setenv("BEAMLAB_SEED", "seven")
    assert cli.main(["peb", "--config", str(good)]) == cli.EXIT_CONFIG
    assert cli.main(["peb", "--config", str(tmp_path / "nope.json")]) == cli.EXIT_CONFIG


def test_numerical_failure_exits_3(tmp_path):
    # desired point on the polar axis of the RIS: the spherical frame is singular
    cfg = {
        "experiment": "beam_fidelity",
        "output_dir": str(tmp_path / "out"),
        "array": {"rows": 4, "cols": 4},
        "tables": ["K1"],
        "scenario": {"p_des": [0.0, 0.0, 2.0]},
    }
    path = tmp_path / "polar.json"
    path.write_text(json.dumps(cfg))
    assert cli.main(["synth", "--config", str(path)]) == cli.EXIT_NUMERICAL


def test_synth_command_prints_metrics(tmp_path, capsys):
    cfg = {
        "experiment": "beam_fidelity",
        "output_dir": str(tmp_path / "out"),
        "array": {"rows": 8, "cols": 8},
        "tables": ["unconstrained", "K2"],
        "beams": ["steering"],
        "slice_axes": ["theta"],
    }
    path = tmp_path / "fid.json"
    path.write_text(json.dumps(cfg))
    assert cli.main(["synth", "--config", str(path)]) == 0
    assert "main 36.12 dB" in capsys.readouterr().out


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "beamlab.cli", "tables", "list"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and "unconstrained" in proc.stdout


def test_missing_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as err:
        cli.main([])
    assert err.value.code == 2
