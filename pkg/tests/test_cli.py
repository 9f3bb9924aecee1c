import json

import numpy as np
import pytest

from drstereo.cli import main
from drstereo.evaluation import compute_metrics
from drstereo.rectifier import ModelConfig, init_params, run_iterations
from drstereo.stereoio import (ImagePair, read_disparity, read_json, read_pfm, read_pgm,
                               save_checkpoint, write_json, write_pfm)

MODEL = ModelConfig(channels=8, groups=2, max_disp=8, radius=1, hidden=4, total_itr=2)


@pytest.fixture
def model_json(tmp_path):
    p = tmp_path / "model.json"
    write_json(p, {"model": MODEL.to_dict()})
    return p


@pytest.fixture
def scene_dir(tmp_path):
    out = tmp_path / "data"
    assert main(["gen-data", "--seed", "3", "--out", str(out), "--count", "2", "--width", "16",
                 "--height", "12", "--dmax", "6"]) == 0
    return out


def test_gen_data_outputs(scene_dir):
    names = sorted(p.name for p in scene_dir.iterdir())
    assert names == ["disp_0000.pfm", "disp_0001.pfm", "left_0000.pgm", "left_0001.pgm",
                     "right_0000.pgm", "right_0001.pgm"]
    assert read_pgm(scene_dir / "left_0000.pgm").shape == (1, 12, 16)
    dm = read_disparity(scene_dir / "disp_0000.pfm")
    assert (~dm.valid).any() and dm.valid.any()


def test_usage_errors(capsys):
    assert main([]) == 1
    assert main(["bogus"]) == 1
    assert main(["gen-data", "--out", "x"]) == 1
    assert main(["eval", "--pred", "a.pfm", "--gt", "b.pfm", "--out", "c.json", "--nope"]) == 1
    assert "usage error" in capsys.readouterr().err


def test_missing_files_are_data_errors(tmp_path, capsys):
    assert main(["eval", "--pred", str(tmp_path / "none.pfm"), "--gt", str(tmp_path / "gt.pfm"),
                 "--out", str(tmp_path / "r.json")]) == 2
    bad = tmp_path / "bad.pfm"
    bad.write_bytes(b"Pf\n2 2\n0\n" + bytes(16))
    assert main(["eval", "--pred", str(bad), "--gt", str(bad), "--out", str(tmp_path / "r.json")]) == 2
    assert "data error" in capsys.readouterr().err


def test_eval_perfect_prediction(scene_dir, tmp_path):
    gt = scene_dir / "disp_0000.pfm"
    pred = tmp_path / "pred.pfm"
    write_pfm(pred, read_disparity(gt).values)
    out = tmp_path / "r.json"
    assert main(["eval", "--pred", str(pred), "--gt", str(gt), "--out", str(out)]) == 0
    r = read_json(out)
    assert (r["epe"], r["bad1"], r["bad2"], r["bad3"]) == (0.0, 0.0, 0.0, 0.0)
    assert r["error_buckets"]["<=1px"] == 1.0
    assert list(r)[:4] == ["epe", "bad1", "bad2", "bad3"]


def test_stats_known_updates(tmp_path):
    trace = tmp_path / "trace.json"
    write_json(trace, {"steps": [{"updates": [0.5, -2.0]}, {"updates": [4.0, 6.0]}]})
    out = tmp_path / "s.json"
    assert main(["stats", "--trace", str(trace), "--out", str(out)]) == 0
    s = read_json(out)
    assert s["bucket_edges_px"] == [1.0, 3.0, 5.0]
    assert s["updates"] == {"<=1px": 0.25, "(1px,3px]": 0.25, "(3px,5px]": 0.25, ">5px": 0.25}


def test_stats_error_buckets_from_pfm_trace(tmp_path):
    gt = np.zeros((1, 4), dtype=np.float32)
    write_pfm(tmp_path / "gt.pfm", gt)
    write_pfm(tmp_path / "d0.pfm", np.array([[0.5, 2.0, 4.0, 6.0]], np.float32))
    write_pfm(tmp_path / "dudr.pfm", np.array([[0.5, 2.0, 4.0, 6.0]], np.float32))
    write_pfm(tmp_path / "u0.pfm", np.array([[-0.5, -2.0, -4.0, -6.0]], np.float32))
    write_json(tmp_path / "trace.json", {"d0": "d0.pfm", "d_udr": "dudr.pfm",
                                         "steps": [{"delta": "u0.pfm"}]})
    out = tmp_path / "s.json"
    assert main(["stats", "--trace", str(tmp_path / "trace.json"), "--gt", str(tmp_path / "gt.pfm"),
                 "--out", str(out)]) == 0
    s = read_json(out)
    # two maps with one error per bucket plus a perfect map
    assert s["errors"] == {"<=1px": 0.5, "(1px,3px]": 1 / 6, "(3px,5px]": 1 / 6, ">5px": 1 / 6}


def test_stats_rejects_empty_trace(tmp_path):
    write_json(tmp_path / "t.json", {"steps": []})
    assert main(["stats", "--trace", str(tmp_path / "t.json"), "--out", str(tmp_path / "o.json")]) == 2


def _infer(scene_dir, tmp_path, model_json, seed=5):
    ckpt = tmp_path / "p.drsk"
    save_checkpoint(init_params(MODEL, seed), ckpt)
    out = tmp_path / "inf"
    assert main(["infer", "--checkpoint", str(ckpt), "--left", str(scene_dir / "left_0000.pgm"),
                 "--right", str(scene_dir / "right_0000.pgm"), "--out", str(out),
                 "--config", str(model_json)]) == 0
    return ckpt, out


def test_infer_then_eval_matches_memory(scene_dir, tmp_path, model_json):
    ckpt, out = _infer(scene_dir, tmp_path, model_json)
    report = tmp_path / "r.json"
    assert main(["eval", "--pred", str(out / "disparity.pfm"), "--gt", str(scene_dir / "disp_0000.pfm"),
                 "--uncertainty", str(out / "uncertainty.pfm"), "--trace", str(out / "trace.json"),
                 "--out", str(report)]) == 0
    from_files = read_json(report)
    pair = ImagePair(read_pgm(scene_dir / "left_0000.pgm"), read_pgm(scene_dir / "right_0000.pgm"))
    trace = run_iterations(pair, init_params(MODEL, 5), MODEL)
    gt = read_disparity(scene_dir / "disp_0000.pfm")
    mem = compute_metrics(trace.final.value, gt.to_array(), trace.u_final.value, gt.valid,
                          deltas=[s.delta.value for s in trace.steps]).to_dict()
    for key in ("epe", "bad1", "bad2", "bad3", "auc", "pue"):
        assert abs(from_files[key] - mem[key]) <= 1e-6, key
    assert from_files["update_buckets"] == mem["update_buckets"]
    t = read_json(out / "trace.json")
    assert len(t["steps"]) == MODEL.total_itr
    assert t["udr_max_abs"] <= MODEL.s


def test_infer_rejects_mismatched_checkpoint(scene_dir, tmp_path, model_json):
    ckpt = tmp_path / "other.drsk"
    save_checkpoint(init_params(MODEL.with_(hidden=5), 0), ckpt)
    assert main(["infer", "--checkpoint", str(ckpt), "--left", str(scene_dir / "left_0000.pgm"),
                 "--right", str(scene_dir / "right_0000.pgm"), "--out", str(tmp_path / "o"),
                 "--config", str(model_json)]) == 2


def test_train_determinism_and_outputs(tmp_path):
    cfg = tmp_path / "train.json"
    write_json(cfg, {"steps": 3, "width": 12, "height": 10, "d_max": 4.0, "eval_every": 2,
                     "eval_batch": 1, "model": MODEL.to_dict()})
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["train", "--seed", "4", "--out", str(out), "--config", str(cfg)]) == 0
        runs.append(out)
    for f in ("final.drsk", "metrics.jsonl", "config.json"):
        assert (runs[0] / f).read_bytes() == (runs[1] / f).read_bytes()
    lines = (runs[0] / "metrics.jsonl").read_text().splitlines()
    assert [json.loads(x)["step"] for x in lines] == [0, 1, 2]
    assert read_json(runs[0] / "config.json")["seed"] == 4


def test_train_requires_seed(tmp_path):
    assert main(["train", "--out", str(tmp_path)]) == 1


def test_train_rejects_unknown_config_key(tmp_path):
    cfg = tmp_path / "bad.json"
    write_json(cfg, {"stepz": 3})
    assert main(["train", "--seed", "1", "--out", str(tmp_path / "o"), "--config", str(cfg)]) == 2


def test_corrupt_sim_cli(tmp_path, model_json):
    out = tmp_path / "c.json"
    assert main(["corrupt-sim", "--seed", "2", "--region", "2", "2", "8", "10", "--value", "7",
                 "--width", "16", "--height", "12", "--config", str(model_json), "--out", str(out)]) == 0
    r = read_json(out)
    assert len(r["udc_on"]["epe"]) == MODEL.total_itr + 1
    assert max(r["udc_on"]["max_step"]) < 1.5 * MODEL.m
    assert main(["corrupt-sim", "--seed", "2", "--region", "2", "2", "2", "10", "--value", "7",
                 "--width", "16", "--height", "12", "--config", str(model_json),
                 "--out", str(out)]) == 2


def test_gradcheck_cli(tmp_path, capsys):
    out = tmp_path / "g.json"
    assert main(["gradcheck", "--seed", "0", "--instances", "1", "--coords", "2", "--out", str(out)]) == 0
    r = read_json(out)
    assert r["pass"] is True
    assert set(r["params"]) == {"encoder", "cat-projection", "uec-head", "gru", "decoder"}
    assert "PASS" in capsys.readouterr().out


def test_flag_overrides(tmp_path, scene_dir, model_json):
    ckpt, _ = _infer(scene_dir, tmp_path, model_json)
    out = tmp_path / "inf2"
    assert main(["infer", "--checkpoint", str(ckpt), "--left", str(scene_dir / "left_0000.pgm"),
                 "--right", str(scene_dir / "right_0000.pgm"), "--out", str(out),
                 "--config", str(model_json), "--iters", "0", "--udr", "off"]) == 0
    np.testing.assert_array_equal(read_pfm(out / "disparity.pfm"), read_pfm(out / "d0.pfm"))
    assert main(["infer", "--checkpoint", str(ckpt), "--left", "x", "--right", "y", "--out", str(out),
                 "--udc", "maybe"]) == 1
