import json
import subprocess
import sys

import numpy as np
import pytest

from posekit import cli, simdata
from posekit.augment import load_png, save_png
from posekit.geometry import Quaternion
from posekit.metrics import rotation_error_deg

from oracles import lm_pose


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def close_zero(tmp_path_factory):
    p = tmp_path_factory.mktemp("ds") / "close.jsonl"
    assert run("generate", "--regime", "close", "--n", 500, "--seed", 1, "--out", p) == 0
    return p


@pytest.fixture(scope="module")
def close_noisy(tmp_path_factory):
    p = tmp_path_factory.mktemp("ds") / "noisy.jsonl"
    assert run("generate", "--n", 150, "--seed", 4, "--noise", 1.0, "--out", p) == 0
    return p


def _summary(csv_path):
    return json.loads(csv_path.with_suffix(".json").read_text())["summary"]


def test_generate_far(tmp_path):
    p = tmp_path / "far.jsonl"
    assert run("generate", "--regime", "far", "--n", 500, "--seed", 7, "--out", p) == 0
    d = [np.linalg.norm(s.pose.translation) for s in simdata.read_dataset(p)]
    assert len(d) == 500 and min(d) >= 52 and max(d) <= 197


def test_generate_empty_and_repeatable(tmp_path):
    a, b, e = tmp_path / "a.jsonl", tmp_path / "b.jsonl", tmp_path / "e.jsonl"
    assert run("generate", "--n", 0, "--out", e) == 0
    assert simdata.read_dataset(e) == []
    run("generate", "--n", 20, "--seed", 5, "--noise", 0.7, "--out", a)
    run("--seed", 5, "generate", "--n", 20, "--noise", 0.7, "--out", b)
    assert a.read_bytes() == b.read_bytes()


def test_eval_zero_noise_close(close_zero, tmp_path):
    out = tmp_path / "r.csv"
    assert run("eval", "--dataset", close_zero, "--out", out) == 0
    assert _summary(out)["e_q"]["mean"] < 0.05


def test_eval_deterministic_and_worker_invariant(close_noisy, tmp_path):
    outs = []
    for i, w in enumerate((1, 1, 3)):
        out = tmp_path / f"r{i}.csv"
        assert run("eval", "--dataset", close_noisy, "--workers", w, "--out", out) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1] == outs[2]


def test_eval_workers_env_fallback(close_noisy, tmp_path, monkeypatch):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run("eval", "--dataset", close_noisy, "--out", a)
    monkeypatch.setenv("POSEKIT_WORKERS", "2")
    run("eval", "--dataset", close_noisy, "--out", b)
    assert a.read_bytes() == b.read_bytes()


def test_eval_noisy_matches_lm_oracle(close_noisy, tmp_path):
    out = tmp_path / "r.csv"
    assert run("eval", "--dataset", close_noisy, "--out", out) == 0
    ds = simdata.load_dataset(close_noisy)
    oracle = []
    for s in ds.samples:
        q, _ = lm_pose(ds.model.points, s.keypoints2d_noisy, ds.camera,
                       s.pose.rotation.as_array(), s.pose.translation)
        oracle.append(rotation_error_deg(Quaternion.from_array(q).as_array(),
                                         s.pose.rotation.as_array()))
    ours = _summary(out)["e_q"]["mean"]
    assert abs(ours - np.mean(oracle)) <= 0.1 * np.mean(oracle)


def test_bypass_close_to_heatmap_run(close_noisy, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run("eval", "--dataset", close_noisy, "--out", a)
    run("eval", "--dataset", close_noisy, "--bypass-heatmap", "--out", b)
    ma, mb = _summary(a)["e_q"]["mean"], _summary(b)["e_q"]["mean"]
    assert abs(ma - mb) <= 0.1 * mb


def test_ensemble_reduces_error(close_noisy, tmp_path):
    a, b = tmp_path / "e1.csv", tmp_path / "e3.csv"
    run("eval", "--dataset", close_noisy, "--ensemble", 1, "--out", a)
    run("eval", "--dataset", close_noisy, "--ensemble", 3, "--out", b)
    assert _summary(b)["e_q"]["mean"] <= _summary(a)["e_q"]["mean"]


def _truth_predictions(ds_path, path, drop=None):
    with open(path, "w") as fh:
        for s in simdata.read_dataset(ds_path):
            if s.id == drop:
                continue
            fh.write(json.dumps({"id": s.id, "q_target2cam": s.pose.rotation.as_array().tolist(),
                                 "t_cam": s.pose.translation.tolist()}) + "\n")


def test_score_truth_gives_zero(close_noisy, tmp_path):
    preds, out = tmp_path / "p.jsonl", tmp_path / "s.csv"
    _truth_predictions(close_noisy, preds)
    assert run("score", "--predictions", preds, "--dataset", close_noisy, "--out", out) == 0
    summary = _summary(out)
    for key in ("e_t", "e_q", "e_pose", "e_pose_star"):
        assert summary[key]["max"] == 0.0


def test_score_missing_id(close_noisy, tmp_path, capsys):
    preds = tmp_path / "p.jsonl"
    _truth_predictions(close_noisy, preds, drop="000017")
    code = run("score", "--predictions", preds, "--dataset", close_noisy, "--out", tmp_path / "s.csv")
    assert code == 3
    assert "000017" in capsys.readouterr().err


def test_score_zero_thresholds_starred_equal(close_noisy, tmp_path):
    preds, out = tmp_path / "p.jsonl", tmp_path / "s.csv"
    run("eval", "--dataset", close_noisy, "--predictions", preds, "--out", tmp_path / "e.csv")
    run("score", "--predictions", preds, "--dataset", close_noisy, "--theta-q", 0,
        "--theta-t", 0, "--out", out)
    for row in json.loads(out.with_suffix(".json").read_text())["samples"]:
        assert row["e_q_star"] == row["e_q"] and row["e_pose_star"] == row["e_pose"]


def test_score_hil_thresholds_zero_small_errors(close_zero, tmp_path):
    preds, out = tmp_path / "p.jsonl", tmp_path / "s.csv"
    run("eval", "--dataset", close_zero, "--predictions", preds, "--out", tmp_path / "e.csv")
    run("score", "--predictions", preds, "--dataset", close_zero, "--hil-thresholds", "--out", out)
    summary = _summary(out)
    assert summary["e_q_star"]["mean"] <= summary["e_q"]["mean"]


def _bench(tmp_path, name):
    out = tmp_path / name
    assert run("bench", "--backbone", "toy", "--reps", 30, "--out", out) == 0
    return json.loads(out.read_text())


def test_bench_schema_ordering_and_stability(tmp_path):
    a, b = _bench(tmp_path, "a.json"), _bench(tmp_path, "b.json")
    stages = ("forward_224", "forward_448", "decode", "epnp")
    assert set(a["stages"]) == set(stages)
    assert all(a["stages"][s]["reps"] >= 30 for s in stages)
    assert a["stages"]["forward_448"]["median_s"] > a["stages"]["forward_224"]["median_s"]
    assert a["forward_ratio_448_224"] > 1
    for s in ("forward_224", "forward_448"):
        ma, mb = a["stages"][s]["median_s"], b["stages"][s]["median_s"]
        assert abs(ma - mb) / ((ma + mb) / 2) < 0.2


def test_augment_subcommand(tmp_path, rng):
    src, dst = tmp_path / "in.png", tmp_path / "out.png"
    save_png(rng.random((40, 50)), src)
    assert run("augment", "--image", src, "--sample-index", 2, "--flare-box", 5, 5, 30, 30,
               "--out", dst) == 0
    out = load_png(dst)
    assert out.shape == (40, 50)
    dst2 = tmp_path / "out2.png"
    run("augment", "--image", src, "--sample-index", 2, "--flare-box", 5, 5, 30, 30, "--out", dst2)
    assert dst.read_bytes() == dst2.read_bytes()
    assert run("augment", "--image", src, "--n-ops", 0, "--out", dst2) == 0
    np.testing.assert_array_equal(load_png(dst2), load_png(src))


def test_exit_codes(tmp_path):
    with pytest.raises(SystemExit) as exc:
        cli.main(["eval", "--resolution", "100", "--dataset", "x"])
    assert exc.value.code == 2
    assert run("eval", "--dataset", tmp_path / "missing.jsonl") == 3
    bad = tmp_path / "bad.jsonl"
    bad.write_text("garbage\n")
    assert run("eval", "--dataset", bad) == 3


def test_numerical_failure_exit_4(tmp_path, camera):
    # keypoints collapsed onto one pixel leave EPnP without a solution
    ds = tmp_path / "deg.jsonl"
    spec = simdata.ScenarioSpec("close", n_samples=1, seed=0)
    s = simdata.generate(spec)[0]
    flat = np.repeat(s.keypoints2d_true[:1], len(s.keypoints2d_true), axis=0)
    bad = simdata.Sample(s.id, s.pose, s.roi, s.keypoints2d_true, flat, s.roi_fraction)
    simdata.write_dataset([bad], ds, spec, camera, simdata.default_model())
    assert run("eval", "--dataset", ds, "--bypass-heatmap", "--out", tmp_path / "r.csv") == 4


def test_console_entry_point(tmp_path):
    p = tmp_path / "d.jsonl"
    r = subprocess.run([sys.executable, "-m", "posekit.cli", "generate", "--n", "3", "--out", str(p)],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert "wrote 3 samples" in r.stdout
