import csv
import json

import numpy as np
import pytest

from aeforce.cli import run
from aeforce.config import DEFAULTS, RunConfig

TINY = {
    "synth": {"n": 3, "duration_s": 12.0, "loading_slope_mN_s": 0.1, "drop_rate_hz": 1.0,
              "ae_rate_hz": 25000.0, "carrier_hz": 2500.0, "tail_hz": 1000.0,
              "carrier_duration_s": 0.004, "tail_decay_s": 0.015,
              "noise_center_hz": 5000.0, "noise_bandwidth_hz": 2000.0},
    "forest": {"n_trees": [10], "max_depth": [None], "min_samples_leaf": [5], "max_features": [1.0]},
    "coarse": {"width_s": 3.0, "stride_s": 1.0},
    "events": {"hang_time_s": 0.005, "merge_gap_s": 0.01},
    "wavelet": {"f_min_hz": 500.0, "f_max_hz": 8000.0},
    "fine": {"f_set_hz": [1000.0, 2500.0, 5000.0]},
    "importance": {"n_trees": 5, "n_max": 2},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.json").write_text(json.dumps(TINY))
    assert run(["synth", "--config", str(root / "tiny.json"), "--seed", "7", "--out", str(root / "data")]) == 0
    return root


def _exps(root):
    return [str(root / "data" / f"synth_{i:03d}") for i in range(3)]


def _read(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_unknown_subcommand(capsys):
    assert run(["frobnicate"]) == 2
    assert "usage" in capsys.readouterr().err


def test_bad_set_and_key(tmp_path):
    assert run(["synth", "--set", "nonsense", "--out", str(tmp_path)]) == 2
    assert run(["synth", "--set", "no.such.key=1", "--out", str(tmp_path)]) == 2
    assert run(["synth", "--set", "forest.n_trees=[0]", "--out", str(tmp_path)]) == 2


def test_missing_experiment_is_data_error(tmp_path):
    assert run(["ingest", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 3


def test_synth_byte_identical(workspace, tmp_path):
    out = tmp_path / "again"
    assert run(["synth", "--config", str(workspace / "tiny.json"), "--seed", "7", "--out", str(out)]) == 0
    for name in ("run_config.json", "log.txt", "synth_000/ae.f32", "synth_000/force.csv",
                 "synth_002/truth.csv", "synth_001/meta.json"):
        assert (out / name).read_bytes() == (workspace / "data" / name).read_bytes()


def test_run_config_reproduces(workspace, tmp_path):
    out = tmp_path / "rerun"
    assert run(["synth", "--config", str(workspace / "data" / "run_config.json"), "--out", str(out)]) == 0
    assert (out / "synth_001" / "ae.f32").read_bytes() == (workspace / "data" / "synth_001" / "ae.f32").read_bytes()
    assert (out / "run_config.json").read_bytes() == (workspace / "data" / "run_config.json").read_bytes()


def test_ingest_manifest(workspace):
    out = workspace / "ingest"
    assert run(["ingest", *_exps(workspace), "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert [m["id"] for m in manifest] == ["synth_000", "synth_001", "synth_002"]


def test_ingest_from_raw(tmp_path):
    np.arange(1, 1001, dtype="<f4").tofile(tmp_path / "ae.bin")
    t = np.arange(0, 0.04, 0.005)
    np.savetxt(tmp_path / "f.csv", np.c_[t, t], delimiter=",", header="t,F", comments="")
    rc = run(["ingest", "--from-raw", str(tmp_path / "ae.bin"), str(tmp_path / "f.csv"),
              "--id", "raw1", "--diameter", "8", "--ae-rate", "25000",
              "--dest", str(tmp_path / "raw1"), "--out", str(tmp_path / "o")])
    assert rc == 0
    assert (tmp_path / "raw1" / "meta.json").exists()


def test_stats(workspace):
    out = workspace / "stats"
    assert run(["stats", *_exps(workspace), "--config", str(workspace / "tiny.json"), "--out", str(out)]) == 0
    drops = _read(out / "drops.csv")
    assert list(drops[0]) == ["experiment", "t_start", "t_d_s", "dF_mN"]
    assert (out / "spectrum.csv").exists() and (out / "pdf_magnitude_all.csv").exists()
    assert "all" in json.loads((out / "summary.json").read_text())


def test_train_predict_combine(workspace):
    cfg = str(workspace / "tiny.json")
    e = _exps(workspace)
    assert run(["train-fine", *e[:2], "--config", cfg, "--out", str(workspace / "tf")]) == 0
    assert run(["train-coarse", *e[:2], "--config", cfg, "--out", str(workspace / "tc")]) == 0
    header = _read(workspace / "tf" / "features_fine.csv")[0]
    assert "fi_k2" in header and "target_dF_mN" in header
    assert "target_F_mN" in _read(workspace / "tc" / "features_coarse.csv")[0]

    out = workspace / "pred"
    assert run(["predict", e[2], "--fine-model", str(workspace / "tf" / "model_fine.json"),
                "--coarse-model", str(workspace / "tc" / "model_coarse.json"), "--out", str(out)]) == 0
    rows = _read(out / "prediction.csv")
    assert list(rows[0]) == ["t_s", "F_ground_mN", "F_pred_mN"]
    anchors = _read(out / "coarse_anchors.csv")
    assert len(anchors) == 4
    by_t = {float(r["t_s"]): float(r["F_pred_mN"]) for r in rows}
    for a in anchors:
        assert by_t[float(a["t_s"])] == pytest.approx(float(a["F_pred_mN"]), abs=1e-9)

    # combine subcommand reproduces the combined curve from its two inputs
    fine = _read(out / "fine_increments.csv")
    with open(workspace / "fine_curve.csv", "w") as fh:
        fh.write(f"t_s,f_mN\n0.0,{_f0(e[2])!r}\n")
        for r in fine:
            fh.write(f"{r['t_end_s']},{r['f_pred_mN']}\n")
    with open(workspace / "anchors.csv", "w") as fh:
        fh.write("t_s,F_mN\n")
        for a in anchors:
            fh.write(f"{a['t_s']},{a['F_pred_mN']}\n")
    assert run(["combine", "--fine", str(workspace / "fine_curve.csv"), "--anchors",
                str(workspace / "anchors.csv"), "--config", cfg, "--out", str(workspace / "comb")]) == 0
    comb = _read(workspace / "comb" / "combined.csv")
    np.testing.assert_allclose([float(r["F_pred_mN"]) for r in comb],
                               [float(r["F_pred_mN"]) for r in rows], atol=1e-9)


def _f0(exp_dir):
    from aeforce.signal import read_experiment
    rec = read_experiment(exp_dir)
    return float(rec.force.at(rec.span[0]))


def test_evaluate(workspace):
    out = workspace / "eval"
    rc = run(["evaluate", *_exps(workspace), "--config", str(workspace / "tiny.json"),
              "--set", 'evaluate.modes=["freq_independent","freq_dependent"]', "--out", str(out)])
    assert rc == 0
    rep = json.loads((out / "evaluate.json").read_text())
    assert [r["feature_mode"] for r in rep] == ["freq_independent", "freq_dependent"]
    assert len(rep[0]["per_experiment"]) == 3


def test_importance(workspace):
    out = workspace / "imp"
    rc = run(["importance", *_exps(workspace), "--config", str(workspace / "tiny.json"),
              "--set", "fine.k_grid=[1,2,\"inf\"]", "--out", str(out)])
    assert rc == 0
    rep = json.loads((out / "importance.json").read_text())
    assert rep["features"] == ["fi_k1", "fi_k2", "fi_kinf"]
    assert len(rep["subsets"]["table"]) == 3 + 3


def test_transfer_needs_five(workspace):
    assert run(["transfer", *_exps(workspace), "--config", str(workspace / "tiny.json"),
                "--out", str(workspace / "tr")]) == 3


def test_jobs_do_not_change_models(workspace):
    cfg = str(workspace / "tiny.json")
    e = _exps(workspace)[:2]
    assert run(["train-fine", *e, "--config", cfg, "--jobs", "2", "--out", str(workspace / "tf2")]) == 0
    assert (workspace / "tf2" / "model_fine.json").read_bytes() == (workspace / "tf" / "model_fine.json").read_bytes()


def test_config_defaults_and_nested(tmp_path):
    cfg = RunConfig.resolve({"fine": {"dt_s": 0.25}}, {"seed": 5})
    assert cfg["fine.dt_s"] == 0.25 and cfg.seed == 5
    assert cfg.fine().dt == 0.25
    assert len(cfg.forest_grid()) == 48
    assert set(json.loads(cfg.to_json())) == set(DEFAULTS)
    assert cfg.synth(2).seed == 7 and cfg.synth(2).id == "synth_002"


def test_synth_time_scale(tmp_path):
    cfg = RunConfig.resolve(overrides={"synth.time_scale": 100.0})
    assert cfg.synth(0).ae_rate_hz == 25e3 and cfg.synth(0).carrier_hz == 2.5e3
    assert run(["synth", "--set", "synth.time_scale=0", "--out", str(tmp_path)]) == 2
