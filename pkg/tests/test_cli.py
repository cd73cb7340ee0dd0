import json

import numpy as np
import pytest

from glonet import config as configmod
from glonet import records
from glonet.cli import main
from glonet.config import ConfigError, RunConfig
from glonet.network import load_checkpoint
from glonet.rcwa import RcwaSettings

SMOKE = {
    "seed": 5,
    "solver": {"fourier_half_order": 8},
    "network": {"segments": 64, "fc_channels": 16, "fc_length": 16, "deconv_channels": [8, 4]},
    "training": {"batch_size": 3, "iterations": 4, "wavelength_range": [800, 1000], "angle_range": [50, 70]},
    "topology": {"iterations": 3},
    "benchmark": {"count": 1, "refine_iterations": 1},
}


@pytest.fixture
def smoke_config(tmp_path):
    path = tmp_path / "smoke.json"
    path.write_text(json.dumps(SMOKE))
    return path


@pytest.fixture
def trained(tmp_path, smoke_config):
    out = tmp_path / "run"
    assert main(["train", "--config", str(smoke_config), "--out", str(out)]) == 0
    return out


# -- configuration --------------------------------------------------------------------------


def test_default_config_round_trips():
    cfg = RunConfig()
    again = configmod.loads(cfg.dumps())
    assert again == cfg
    assert again.hash() == cfg.hash()


def test_smoke_config_round_trips_and_propagates_seed(smoke_config):
    cfg = configmod.load(smoke_config)
    assert cfg.training.seed == cfg.topology.seed == 5
    assert cfg.network.deconv_channels == (8, 4)
    assert configmod.loads(cfg.dumps()) == cfg


def test_hash_ignores_output_dir_but_not_seed():
    cfg = RunConfig()
    assert cfg.hash() == RunConfig(output_dir="elsewhere").hash()
    assert cfg.hash() != cfg.with_seed(1).hash()
    assert cfg.header() == f"# config_hash={cfg.hash()} seed=0\n"


@pytest.mark.parametrize("bad, match", [
    ({"trainingg": {}}, "unknown top-level"),
    ({"training": {"batchsize": 3}}, "unknown key.*batchsize"),
    ({"training": {"seed": 3}}, "unknown key.*seed"),
    ({"schema_version": 2}, "schema_version"),
    ({"seed": -1}, "seed"),
    ({"training": {"batch_size": 0}}, "invalid 'training'"),
    ({"network": {"segments": 100}}, "invalid 'network'"),
])
def test_invalid_configs_rejected(bad, match):
    with pytest.raises(ConfigError, match=match):
        configmod.from_dict(bad)


def test_missing_config_names_the_path(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    with pytest.raises(ConfigError, match="nope.json"):
        configmod.load(missing)
    assert main(["train", "--config", str(missing)]) == 2
    assert "nope.json" in capsys.readouterr().err


def test_malformed_json_is_reported(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError, match="bad.json"):
        configmod.load(path)


# -- records --------------------------------------------------------------------------------


def test_device_record_round_trip_and_verify(tmp_path):
    settings = RcwaSettings(fourier_half_order=8)
    from glonet.adjoint import efficiency
    from glonet.rcwa import OperatingCondition

    device = np.repeat([1.0, -1.0, 1.0, -1.0], 16)
    eff = efficiency(device, OperatingCondition(900.0, 60.0), settings)
    rec = records.DeviceRecord("d0", device, 900.0, 60.0, eff, "baseline", 3)
    records.write_library(tmp_path / "lib", [rec], "# h\n")
    (back,) = records.read_library(tmp_path / "lib")
    np.testing.assert_array_equal(back.device, device)
    assert back.efficiency == eff and back.created == rec.created
    assert back.verify(settings)
    with pytest.raises(ValueError):
        records.DeviceRecord("d1", device, 900.0, 60.0, eff, "magic", 3)


def test_read_device_accepts_text(tmp_path):
    (tmp_path / "d.txt").write_text("1 -1, 1\n-1\n")
    np.testing.assert_array_equal(records.read_device(tmp_path / "d.txt"), [1, -1, 1, -1])


# -- commands -------------------------------------------------------------------------------


def test_train_writes_artifacts_with_headers(trained):
    for name in ("config.json", "history.csv", "timing.csv", "effmax.csv", "checkpoint.npz", "checkpoint_00000.npz"):
        assert (trained / name).is_file(), name
    cfg = configmod.load(trained / "config.json")
    lines = (trained / "history.csv").read_text().splitlines()
    assert lines[0] == f"# config_hash={cfg.hash()} seed=5"
    assert lines[1] == "iteration,mean_eff,max_eff,loss,mean_abs_n"
    assert len(lines) == 2 + 4
    assert load_checkpoint(trained / "checkpoint.npz").architecture == cfg.network


def test_generate_library_and_extrapolation_flag(tmp_path, smoke_config, trained, capsys):
    out = tmp_path / "gen"
    ck = str(trained / "checkpoint.npz")
    assert main(["generate", "--config", str(smoke_config), "--checkpoint", ck, "--wavelength", "900",
                 "--angle", "60", "--count", "3", "--out", str(out)]) == 0
    recs = records.read_library(out / "library")
    assert len(recs) == 3
    assert all(np.all(np.abs(r.device) == 1) and not r.extrapolated for r in recs)
    assert [r.efficiency for r in recs] == sorted((r.efficiency for r in recs), reverse=True)
    assert recs[0].verify(RcwaSettings(fourier_half_order=8))

    far = tmp_path / "far"
    assert main(["generate", "--config", str(smoke_config), "--checkpoint", ck, "--wavelength", "1200",
                 "--angle", "60", "--count", "1", "--out", str(far)]) == 0
    assert records.read_library(far / "library")[0].extrapolated


def test_generate_zero_devices(tmp_path, smoke_config, trained):
    out = tmp_path / "gen0"
    assert main(["generate", "--config", str(smoke_config), "--checkpoint", str(trained / "checkpoint.npz"),
                 "--wavelength", "900", "--angle", "60", "--count", "0", "--out", str(out)]) == 0
    assert records.read_library(out / "library") == []


def test_generate_with_missing_checkpoint_fails(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert main(["generate", "--checkpoint", str(tmp_path / "x.npz"), "--wavelength", "900", "--angle", "60"]) == 2
    assert "not found" in capsys.readouterr().err


def test_refine_rejects_grayscale_naming_the_index(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "d.txt").write_text(" ".join(["1"] * 10 + ["0.3"] + ["-1"] * 5))
    assert main(["refine", "--device", str(tmp_path / "d.txt"), "--wavelength", "900", "--angle", "60"]) == 2
    assert "component 10" in capsys.readouterr().err


def test_refine_binary_device(tmp_path, smoke_config, capsys):
    (tmp_path / "d.txt").write_text(" ".join(["1"] * 32 + ["-1"] * 32))
    assert main(["refine", "--config", str(smoke_config), "--device", str(tmp_path / "d.txt"),
                 "--wavelength", "900", "--angle", "60", "--iterations", "2", "--out", str(tmp_path / "r")]) == 0
    (rec,) = records.read_library(tmp_path / "r" / "refined")
    assert rec.provenance == "boundary-refined" and np.all(np.abs(rec.device) == 1)
    assert "gain +" in capsys.readouterr().out


def test_benchmark_grid_compare_and_histogram(tmp_path, smoke_config, trained, capsys):
    base, glo = tmp_path / "base", tmp_path / "glo"
    assert main(["benchmark", "--config", str(smoke_config), "--out", str(base)]) == 0
    assert main(["benchmark", "--config", str(smoke_config), "--method", "glonet",
                 "--checkpoint", str(trained / "checkpoint.npz"), "--out", str(glo)]) == 0
    lines = (base / "grid.csv").read_text().splitlines()
    assert lines[1] == "lambda_nm,theta_deg,best_eff,device_id"
    assert len(lines) == 2 + 9
    assert len(records.read_library(glo / "library")) == 9

    ana = tmp_path / "ana"
    assert main(["analyze", "--config", str(smoke_config), "--compare", str(base / "grid.csv"), str(glo / "grid.csv"),
                 "--library", str(base / "library"), "--library", str(glo / "library"),
                 "--basis", str(base / "library"), "--checkpoint", str(trained / "checkpoint_00000.npz"),
                 "--checkpoint", str(trained / "checkpoint.npz"), "--wavelength", "900", "--angle", "60",
                 "--count", "4", "--out", str(ana)]) == 0
    out = capsys.readouterr().out
    assert "cells where second >= first" in out
    hist = (ana / "hist.csv").read_text().splitlines()
    assert hist[1] == "bin_lo,bin_hi,count"
    assert sum(int(l.split(",")[2]) for l in hist[2:]) == 18
    pca = (ana / "pca.csv").read_text().splitlines()
    assert pca[1] == "device_id,x,y,eff,iteration"
    assert len(pca) == 2 + 9 + 8
    assert {l.split(",")[4] for l in pca[2:]} == {"-1", "0", "4"}


def test_glonet_benchmark_without_checkpoint_fails(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert main(["benchmark", "--method", "glonet"]) == 2
    assert "checkpoint" in capsys.readouterr().err


def test_analyze_requires_an_action(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert main(["analyze"]) == 2
    assert "at least one of" in capsys.readouterr().err
    assert not (tmp_path / "runs").exists()


def test_validate_quick_passes(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert main(["validate", "--quick"]) == 0
    assert "all 8 checks passed" in capsys.readouterr().out
