import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from attnclust.errors import ConfigurationError
from attnclust.harness.cli import main
from attnclust.harness.config import PRESETS, config_hash, preset, validate
from attnclust.harness.experiments import embed_once, run_experiment


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _rows(path):
    with open(os.path.join(path, "rows.csv")) as fh:
        return list(csv.reader(fh))


SMALL_TRAIN = {"optimizer": {"iterations": 30, "batch_size": 16, "init": "sphere", "rho": 0.2}}


def test_presets_validate():
    for name in PRESETS:
        cfg = validate(preset(name))
        assert cfg["experiment"] in name or cfg["experiment"] in ("train", "sweep-reg", "sweep-dim", "embed")


def test_unknown_keys_rejected():
    with pytest.raises(ConfigurationError):
        validate({"optimiser": {}})
    with pytest.raises(ConfigurationError):
        validate({"optimizer": {"gama": 0.1}})
    with pytest.raises(ConfigurationError):
        validate({"optimizer": {"gamma": 0.5}})
    with pytest.raises(ConfigurationError):
        validate({"mixture": {"kind": "dirac", "sigma": 0.3}})
    with pytest.raises(ConfigurationError):
        validate({"mixture": {"K": 6, "d": 5}})


def test_dirac_defaults_sigma_zero():
    assert validate({"mixture": {"kind": "dirac"}})["mixture"]["sigma"] == 0.0


def test_config_hash_stable():
    a, b = validate({"seed": 3}), validate({"seed": 3})
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(validate({"seed": 4}))


def test_cli_unknown_key_exit_code(tmp_path, capsys):
    path = _write(tmp_path, {"optimizer": {"itterations": 5}})
    assert main(["train", "--config", path, "--out", str(tmp_path / "o")]) == 2
    assert "unknown key" in capsys.readouterr().err


def test_cli_missing_file_exit_code(tmp_path):
    assert main(["train", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]) == 2


def test_cli_preset_mismatch(tmp_path):
    assert main(["train", "--preset", "embed-oracle", "--out", str(tmp_path / "o")]) == 2


def test_cli_byte_identical(tmp_path):
    path = _write(tmp_path, SMALL_TRAIN)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["train", "--config", path, "--runs", "3", "--seed", "17", "--out", str(out)]) == 0
        outs.append(out)
    for f in ("rows.csv", "summary.json"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
    summary = json.loads((outs[0] / "summary.json").read_text())
    assert summary["config_hash"] == config_hash(summary["config"])
    assert summary["config"]["seed"] == 17 and [r["seed"] for r in summary["runs"]] == [17, 18, 19]
    assert "kernel_backend" in summary
    band = summary["bands"]["distance"]
    assert len(band["iteration"]) == len(band["p2.5"]) == len(band["p97.5"])
    assert all(lo <= hi for lo, hi in zip(band["p2.5"], band["p97.5"]))


def test_cli_rows_sorted_and_columns(tmp_path):
    out = tmp_path / "o"
    assert main(["train", "--config", _write(tmp_path, SMALL_TRAIN), "--runs", "2", "--out", str(out)]) == 0
    rows = _rows(out)
    assert rows[0] == ["run", "iteration", "metric", "value", "se"]
    keys = [(int(r[0]), int(r[1])) for r in rows[1:]]
    assert keys == sorted(keys)


def test_cli_iterations_zero(tmp_path):
    out = tmp_path / "o"
    cfg = {"optimizer": {"iterations": 0}}
    assert main(["train", "--config", _write(tmp_path, cfg), "--runs", "1", "--out", str(out)]) == 0
    rows = _rows(out)[1:]
    assert {(r[0], r[1]) for r in rows} == {("0", "0")}
    assert {r[2] for r in rows} == {"distance", "signed_distance", "minimal_rmse", "objective"}


def test_workers_give_identical_output(tmp_path, monkeypatch):
    path = _write(tmp_path, SMALL_TRAIN)
    assert main(["train", "--config", path, "--runs", "2", "--out", str(tmp_path / "a")]) == 0
    monkeypatch.setenv("ATTNCLUST_WORKERS", "2")
    assert main(["train", "--config", path, "--runs", "2", "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "rows.csv").read_bytes() == (tmp_path / "b" / "rows.csv").read_bytes()


def test_nan_runs_flagged(tmp_path, capsys):
    cfg = {"predictor": {"lam": 1e300}, **SMALL_TRAIN}
    out = tmp_path / "o"
    assert main(["train", "--config", _write(tmp_path, cfg), "--runs", "2", "--out", str(out)]) == 0
    assert "flagged" in capsys.readouterr().err
    summary = json.loads((out / "summary.json").read_text())
    assert summary["flagged_runs"] == [0, 1]


def test_softmax_train_small(tmp_path):
    out = tmp_path / "o"
    cfg = {"optimizer": {"iterations": 20, "batch_size": 8}}
    assert main(["train", "--preset", "fig-softmax", "--config", _write(tmp_path, cfg), "--runs", "1",
                 "--out", str(out)]) == 0
    metrics = {r[2] for r in _rows(out)[1:]}
    assert {"psi", "lambda", "signed_distance"} <= metrics


def test_verify_commands_small(tmp_path):
    for exp, extra in (("verify-risk", {"verify": {"n_samples": 2000}}),
                       ("verify-moments", {"verify": {"n_samples": 2000, "n_configs": 2}}),
                       ("ctx-stats", {"verify": {"n_samples": 2000}}),
                       ("critical-points", {})):
        out = tmp_path / exp
        args = [exp, "--preset", exp, "--config", _write(tmp_path, extra, f"{exp}.json"), "--out", str(out)]
        assert main(args) == 0, exp
        assert json.loads((out / "summary.json").read_text())["experiment"] == exp
    crit = json.loads((tmp_path / "critical-points" / "summary.json").read_text())
    assert crit["ordering_holds"]
    vr = json.loads((tmp_path / "verify-risk" / "summary.json").read_text())
    assert vr["dirac"]["pass"] and vr["manifold_vs_general"]["pass"]


def test_embed_writes_points(tmp_path):
    out = tmp_path / "o"
    assert main(["embed", "--preset", "embed-ctx", "--runs", "2", "--out", str(out)]) == 0
    with open(out / "points.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["run", "index", "label", "x_in", "y_in", "x_out", "y_out"]
    assert len(rows) == 1 + 2 * 500


def test_embed_sigma_zero_collapses():
    cfg = validate({"experiment": "embed", "L": 50, "mixture": {"kind": "dirac", "d": 6},
                    "predictor": {"kind": "linear", "lam": 0.8}})
    _, _, points = embed_once(cfg, 0)
    pts = np.array([p[2:] for p in points])
    for c in (0, 1):
        out = pts[pts[:, 0] == c][:, 3:]
        assert np.max(np.ptp(out, axis=0)) <= 1e-10


def test_embed_oracle_variance_reduction():
    cfg = validate(preset("embed-oracle") | {"n_runs": 3})
    res = run_experiment(cfg)
    assert res.summary["n_reduced"] == 3


def test_module_entry_point(tmp_path):
    out = tmp_path / "o"
    r = subprocess.run([sys.executable, "-m", "attnclust", "critical-points", "--out", str(out)],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert (out / "summary.json").exists()


@pytest.mark.slow
def test_sweep_reg_dirac_prefers_positive_rho(tmp_path):
    out = tmp_path / "o"
    assert main(["sweep-reg", "--preset", "sweep-reg-dirac", "--runs", "3", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert len(summary["sweep"]) == 15
    assert summary["best_value"] >= 0.05


@pytest.mark.slow
def test_train_manifold_band(tmp_path):
    # the manifold preset: final 95% band entirely below 5e-2
    out = tmp_path / "o"
    assert main(["train", "--preset", "fig-linear-manifold", "--runs", "10", "--out", str(out)]) == 0
    final = json.loads((out / "summary.json").read_text())["bands"]["distance"]
    assert final["p97.5"][-1] <= 5e-2
