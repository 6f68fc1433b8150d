import csv
import json

import numpy as np
import pytest

from excirec import cli
from excirec import dataset as ds_mod
from excirec.nn import checkpoint
from excirec.nn.network import Network, NetworkConfig

GEOM = {"kind": "chain", "n": 5}
SCAN = {"kind": "line", "n_tip": 32, "span": 12.0, "z_dip": 2.0}
ENS = {"geometry": GEOM, "scan": SCAN, "sigma_d": [0.1, 0.5], "realizations": 6}
NET = {"input_shape": [32], "output_dim": 5, "layers": [
    {"type": "conv", "kernel": 3, "channels": 4}, {"type": "relu"}, {"type": "flatten"},
    {"type": "dense", "units": 16}, {"type": "relu"}, {"type": "dense", "units": 5}]}


def write(tmp_path, name, doc):
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps({"schema_version": 1, "master_seed": 5, **doc}))
    return str(path)


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("train")
    cfg = write(tmp, "train", {"command": "train", "ensemble": ENS, "network": NET,
                               "train": {"epochs": 2, "batch_size": 8}, "cache_dir": str(tmp / "cache")})
    assert cli.run(["train", "--config", cfg, "--out", str(tmp / "out")]) == 0
    return tmp / "out" / "model.exnn"


def test_all_presets_validate():
    names = cli.list_presets()
    assert len(names) >= 12
    for name in names:
        doc = cli.load_config(f"preset:{name}")
        assert doc["command"] in cli.COMMANDS


def test_preset_recipe_counts():
    gen = cli.load_config("preset:generate-1d-desk")
    ens = cli._ensemble(gen["ensemble"], gen["master_seed"])
    assert ds_mod.expected_sample_count(ens, 20) == 8000
    gen2 = cli.load_config("preset:generate-2d")
    ens2 = cli._ensemble(gen2["ensemble"], gen2["master_seed"])
    assert ds_mod.expected_sample_count(ens2, 50) == 20_000
    desk = cli.load_config("preset:train-1d-desk")
    assert ds_mod.expected_sample_count(cli._ensemble(desk["ensemble"], 0), 20) >= 50_000
    assert desk["train"]["epochs"] >= 100


@pytest.mark.parametrize("doc,pointer", [
    ({"command": "generate", "ensemble": {"geometry": GEOM, "bogus": 1}}, "/ensemble"),
    ({"command": "generate", "ensemble": {"geometry": {"kind": "chain", "n": 0}}}, "/ensemble/geometry/n"),
    ({"command": "train", "ensemble": ENS, "train": {"epochs": "ten"}}, "/train/epochs"),
    ({"command": "baseline", "methods": ["annealing"]}, "/methods/0"),
    ({"command": "generate"}, ""),
    ({"command": "generate", "ensemble": ENS, "extra": True}, ""),
])
def test_schema_errors_have_pointers(doc, pointer):
    with pytest.raises(cli.ConfigError) as info:
        cli.validate_config({"schema_version": 1, "master_seed": 0, **doc})
    assert info.value.pointer == pointer
    assert str(info.value).startswith(pointer or "/")


def test_schema_version_and_command():
    with pytest.raises(cli.ConfigError) as info:
        cli.validate_config({"command": "generate", "master_seed": 0})
    assert info.value.pointer == "/schema_version"
    with pytest.raises(cli.ConfigError) as info:
        cli.validate_config({"schema_version": 1, "command": "fly", "master_seed": 0})
    assert info.value.pointer == "/command"
    with pytest.raises(cli.ConfigError):
        cli.load_config("preset:nope")


def test_env_seed_override(tmp_path, monkeypatch):
    cfg = write(tmp_path, "g", {"command": "generate", "ensemble": ENS})
    monkeypatch.setenv("EXCIREC_SEED", "77")
    assert cli.load_config(cfg)["master_seed"] == 77
    monkeypatch.setenv("EXCIREC_SEED", "x")
    with pytest.raises(cli.ConfigError):
        cli.load_config(cfg)


def test_config_error_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, "bad", {"command": "generate", "ensemble": {"geometry": GEOM, "realizations": 0}})
    assert cli.run(["generate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "/ensemble/realizations" in capsys.readouterr().err
    good = write(tmp_path, "good", {"command": "generate", "ensemble": ENS})
    assert cli.run(["train", "--config", good, "--out", str(tmp_path / "o")]) == 2
    (tmp_path / "broken.json").write_text("{")
    assert cli.run(["generate", "--config", str(tmp_path / "broken.json")]) == 2


def test_generate_idempotent(tmp_path, capsys):
    cfg = write(tmp_path, "g", {"command": "generate", "ensemble": ENS})
    for d in ("a", "b"):
        assert cli.run(["generate", "--config", cfg, "--out", str(tmp_path / d), "--threads", "1"]) == 0
    assert "samples=60 train=48 validation=12" in capsys.readouterr().out
    for name in ("dataset.exds", "train.exds", "val.exds", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["files"]["dataset"]["n_samples"] == 60
    assert ds_mod.load(tmp_path / "a" / "train.exds").n_samples == 48


def test_train_outputs_and_cache(trained, tmp_path):
    out = trained.parent
    assert len(rows(out / "history.csv")) == 3
    man = json.loads((out / "manifest.json").read_text())
    assert man["summary"]["cached"] is False
    # same recipe again: loaded from the cache, identical model
    cfg = write(tmp_path, "train", {"command": "train", "ensemble": ENS, "network": NET,
                                    "train": {"epochs": 2, "batch_size": 8},
                                    "cache_dir": str(trained.parent.parent / "cache")})
    assert cli.run(["train", "--config", cfg, "--out", str(tmp_path / "again")]) == 0
    assert json.loads((tmp_path / "again" / "manifest.json").read_text())["summary"]["cached"]
    assert (tmp_path / "again" / "model.exnn").read_bytes() == trained.read_bytes()


def test_evaluate(trained, tmp_path, capsys):
    cfg = write(tmp_path, "e", {"command": "evaluate", "checkpoint": str(trained),
                                "test": {"geometry": GEOM, "scan": SCAN, "sigma_d": [0.05, 0.25],
                                         "realizations": 3}})
    for d in ("a", "b"):
        assert cli.run(["evaluate", "--config", cfg, "--out", str(tmp_path / d)]) == 0
    loss_rows = rows(tmp_path / "a" / "losses.csv")
    assert len(loss_rows) == 1 + 2 * 3 * 5
    values = np.array([float(r[-1]) for r in loss_rows[1:]])
    assert np.all(np.isfinite(values)) and np.all((values >= 0) & (values <= 0.5))
    hist = rows(tmp_path / "a" / "histogram.csv")
    assert sum(int(r[-1]) for r in hist[1:]) == 30
    assert len(rows(tmp_path / "a" / "state_loss.csv")) == 1 + 2 * 5
    for name in ("losses.csv", "histogram.csv", "state_loss.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert "sigma_d=0.05" in capsys.readouterr().out


def test_evaluate_shape_mismatch(trained, tmp_path):
    cfg = write(tmp_path, "e", {"command": "evaluate", "checkpoint": str(trained),
                                "test": {"geometry": {"kind": "chain", "n": 6}, "scan": SCAN,
                                         "sigma_d": [0.05], "realizations": 1}})
    assert cli.run(["evaluate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_predict_eigenstate_and_spectrum(trained, tmp_path):
    cfg = write(tmp_path, "p", {"command": "predict", "checkpoint": str(trained),
                                "eigenstate": {"geometry": GEOM, "scan": SCAN, "index": 1}})
    assert cli.run(["predict", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    coef = rows(tmp_path / "a" / "coefficients.csv")
    assert coef[0] == ["site", "coefficient", "truth"] and len(coef) == 6
    c = np.array([float(r[1]) for r in coef[1:]])
    assert np.linalg.norm(c) == pytest.approx(1.0)
    spec = tmp_path / "s.csv"
    spec.write_text("value\n" + "\n".join(str(v) for v in np.linspace(0.1, 2.0, 32)) + "\n")
    cfg2 = write(tmp_path, "p2", {"command": "predict", "checkpoint": str(trained), "spectrum": str(spec)})
    assert cli.run(["predict", "--config", cfg2, "--out", str(tmp_path / "b")]) == 0
    assert rows(tmp_path / "b" / "coefficients.csv")[0] == ["site", "coefficient"]
    both = write(tmp_path, "p3", {"command": "predict", "checkpoint": str(trained), "spectrum": str(spec),
                                  "eigenstate": {"geometry": GEOM, "index": 0}})
    assert cli.run(["predict", "--config", both, "--out", str(tmp_path / "c")]) == 2


def test_missing_checkpoint(tmp_path, capsys):
    cfg = write(tmp_path, "l", {"command": "localfield", "geometry": GEOM,
                                "checkpoint": str(tmp_path / "none.exnn")})
    assert cli.run(["localfield", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "train a model first" in capsys.readouterr().err


def test_corrupt_checkpoint(trained, tmp_path):
    bad = tmp_path / "bad.exnn"
    bad.write_bytes(trained.read_bytes()[:-7])
    cfg = write(tmp_path, "p", {"command": "predict", "checkpoint": str(bad),
                                "eigenstate": {"geometry": GEOM, "scan": SCAN, "index": 0}})
    assert cli.run(["predict", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_degenerate_output_is_numerical_error(tmp_path):
    net = Network.create(NetworkConfig.from_dict(NET), 0)
    net.params[:] = 0
    checkpoint.save(net, tmp_path / "zero.exnn")
    cfg = write(tmp_path, "p", {"command": "predict", "checkpoint": str(tmp_path / "zero.exnn"),
                                "eigenstate": {"geometry": GEOM, "scan": SCAN, "index": 0}})
    assert cli.run(["predict", "--config", cfg, "--out", str(tmp_path / "o")]) == 3


def test_localfield(trained, tmp_path):
    cfg = write(tmp_path, "l", {"command": "localfield", "geometry": GEOM, "checkpoint": str(trained),
                                "resonance": {"gamma_m": 1.0},
                                "scan": {"n_tip": 32, "span": 12.0}, "frequency": {"n_omega": 400}})
    assert cli.run(["localfield", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    grid = rows(tmp_path / "a" / "map.csv")
    assert len(grid) == 401 and len(grid[0]) == 33
    peaks = rows(tmp_path / "a" / "peaks.csv")
    assert 1 <= len(peaks) - 1 <= 5
    coef = rows(tmp_path / "a" / "coefficients.csv")
    assert len(coef) == len(peaks) and len(coef[0]) == 2 + 5
    slices = rows(tmp_path / "a" / "slices.csv")
    assert len(slices) == 33 and len(slices[0]) == len(peaks)
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["summary"]["z_dip_nm"] == pytest.approx(3.75)


def test_baseline_toy_and_nonconvergence(tmp_path):
    assert cli.run(["baseline", "--config", "preset:baseline-toy", "--out", str(tmp_path / "a")]) == 0
    recs = json.loads((tmp_path / "a" / "results.json").read_text())
    assert recs[0]["converged"] and recs[0]["distance_to_minimum"] < 1e-3
    cfg = write(tmp_path, "b", {"command": "baseline", "geometry": GEOM, "methods": ["nelder_mead"],
                                "states": [4], "max_iterations": 20})
    assert cli.run(["baseline", "--config", cfg, "--out", str(tmp_path / "b")]) == 4
    recs = json.loads((tmp_path / "b" / "results.json").read_text())
    assert recs[0]["iterations"] == 20 and "loss" in recs[0]
    trace = rows(tmp_path / "b" / "traces.csv")
    assert len(trace) == 21
    bad = write(tmp_path, "c", {"command": "baseline", "geometry": GEOM, "methods": ["nelder_mead"],
                                "states": [9]})
    assert cli.run(["baseline", "--config", bad, "--out", str(tmp_path / "c")]) == 2


def test_main_entry(monkeypatch, capsys):
    monkeypatch.setattr("sys.argv", ["excirec", "--version"])
    with pytest.raises(SystemExit) as info:
        cli.main()
    assert info.value.code == 0
    assert "excirec" in capsys.readouterr().out
