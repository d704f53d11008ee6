import json

import numpy as np
import pytest

from ccdf import dataio
from ccdf.cli import main

SYNTH_SPEC = {
    "size": [96, 96, 2],
    "style_gain": [1.1, 0.9],
    "style_bias": [0.2, -0.1],
    "noise_sigma": 0.02,
    "change_regions": [{"x": 32, "y": 40, "width": 24, "height": 24,
                        "content": 0.0, "t1_offset": 3.0}],
    "rng_seed": 11,
}

TRAIN_CONFIG = {
    "patch_size": 32,
    "overlap": 4,
    "batch_size": 1,
    "stage_epochs": [2, 2, 1],
    "stage_lr": [[1e-4, 3e-3], [1e-4, 3e-3], [1e-5, 1e-3]],
    "lambda_cont": 0.2,
    "lambda_reg": 0.5,
    "lambda_sem": 0.2,
    "reduction": "mean",
    "rng_seed": 1,
    "gen_base_width": 6,
    "gen_res_blocks": 1,
    "seg_base_width": 6,
    "seg_downsamples": 1,
    "seg_temperature": 4.0,
    "content_extractor": "identity",
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec_path = root / "synth.json"
    spec_path.write_text(json.dumps(SYNTH_SPEC))
    config_path = root / "train.json"
    config_path.write_text(json.dumps(TRAIN_CONFIG))
    data_dir = root / "data"
    assert main(["synth", "--spec", str(spec_path), "--out", str(data_dir)]) == 0
    return root


def test_synth_outputs(workspace):
    data = workspace / "data"
    t1 = dataio.load_raster(data / "t1.tif")
    assert (t1.width, t1.height, t1.channels) == (96, 96, 2)
    ref = dataio.load_reference_map(data / "ref.png", encoding="color")
    assert ref.count(dataio.CHANGED) == 24 * 24


def test_train_infer_evaluate_roundtrip(workspace):
    data = workspace / "data"
    run_dir = workspace / "run"
    assert main(["train", "--t1", str(data / "t1.tif"), "--t2", str(data / "t2.tif"),
                 "--config", str(workspace / "train.json"), "--out", str(run_dir)]) == 0

    report = json.loads((run_dir / "train_report.json").read_text())
    assert set(report["loss_traces"]) == {"stage1", "stage2", "stage3"}
    assert len(report["loss_traces"]["stage1"]) == 2
    assert report["config"]["patch_size"] == 32
    assert (run_dir / "generator_t1_to_t2.pt").exists()
    assert (run_dir / "generator_t2_to_t1.pt").exists()
    assert (run_dir / "segmenter.pt").exists()

    map_path = workspace / "map.tif"
    assert main(["infer", "--t1", str(data / "t1.tif"), "--t2", str(data / "t2.tif"),
                 "--checkpoint", str(run_dir / "segmenter.pt"),
                 "--config", str(workspace / "train.json"),
                 "--out", str(map_path)]) == 0
    prob = dataio.load_change_map(map_path)
    assert prob.shape == (96, 96)
    assert (workspace / "map_binary.png").exists()

    report_path = workspace / "eval.json"
    assert main(["evaluate", "--pred", str(map_path), "--ref", str(data / "ref.png"),
                 "--report", str(report_path)]) == 0
    scores = json.loads(report_path.read_text())
    assert set(scores["metrics_percent"]) == {"oa", "kc", "precision", "recall", "f1", "miou", "ciou"}
    counts = scores["counts"]
    assert counts["tp"] + counts["fp"] + counts["tn"] + counts["fn"] == 96 * 96


def test_train_single_stage_requires_checkpoints(workspace, tmp_path):
    data = workspace / "data"
    with pytest.raises(SystemExit):
        main(["train", "--t1", str(data / "t1.tif"), "--t2", str(data / "t2.tif"),
              "--config", str(workspace / "train.json"), "--out", str(tmp_path / "fresh"),
              "--stage", "2"])


def test_staged_training_resumes_from_checkpoints(workspace):
    data = workspace / "data"
    run_dir = workspace / "staged"
    args = ["--t1", str(data / "t1.tif"), "--t2", str(data / "t2.tif"),
            "--config", str(workspace / "train.json"), "--out", str(run_dir)]
    assert main(["train", *args, "--stage", "1"]) == 0
    assert main(["train", *args, "--stage", "2"]) == 0
    assert main(["train", *args, "--stage", "3"]) == 0
    report = json.loads((run_dir / "train_report.json").read_text())
    assert set(report["loss_traces"]) == {"stage3"}


def test_evaluate_with_integer_reference(workspace, tmp_path):
    labels = np.zeros((8, 8), dtype=np.uint8)
    labels[:4] = dataio.CHANGED
    ref_path = tmp_path / "ref_int.png"
    dataio.save_reference_map(dataio.ReferenceMap(labels), ref_path, encoding="integer")
    pred_path = tmp_path / "pred.png"
    dataio.save_change_map(np.concatenate([np.ones((4, 8)), np.zeros((4, 8))]), pred_path)
    report_path = tmp_path / "eval.json"
    assert main(["evaluate", "--pred", str(pred_path), "--ref", str(ref_path),
                 "--ref-encoding", "integer", "--report", str(report_path)]) == 0
    scores = json.loads(report_path.read_text())
    assert scores["metrics_percent"]["oa"] == 100.0
