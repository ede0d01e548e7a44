import hashlib

import numpy as np
import pytest
import torch
from PIL import Image

from scops.checkpoint import load_checkpoint
from scops.model import build_model, normalize_responses, segment
from scops.pipeline import build_manifest, generate_synthetic, load_config, train
from scops.pipeline.evaluate import evaluate
from scops.pipeline.infer import infer, run_model_on_image
from scops.pipeline.train import TrainingAborted


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe") / "data"
    generate_synthetic(root, 12, seed=0, resolution=32)
    return root


@pytest.fixture(scope="module")
def manifest(dataset):
    return build_manifest(dataset, test_count=3)


def quick_config(**extra):
    base = {
        "model.parts": "3",
        "model.width": "16",
        "train.resolution": "32",
        "train.batch_size": "4",
        "train.iterations": "12",
        "train.checkpoint_interval": "6",
        "train.log_interval": "100",
    }
    base.update(extra)
    return load_config(overrides=base)


@pytest.fixture(scope="module")
def short_run(manifest, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    result = train(quick_config(), manifest, out)
    return out, result


class TestTraining:
    def test_losses_logged_and_finite(self, short_run):
        out, result = short_run
        history = result["history"]
        assert len(history) == 12
        for row in history:
            for key in ("total", "con", "eqv", "sc", "ot"):
                assert np.isfinite(row[key])
        log = (out / "loss_log.csv").read_text().splitlines()
        assert log[0] == "iteration,total,con,eqv,sc,ot"
        assert len(log) == 13

    def test_periodic_and_final_checkpoints(self, short_run):
        out, result = short_run
        assert (out / "checkpoint_000006.pt").exists()
        assert result["checkpoint"] == out / "checkpoint_final.pt"
        payload = load_checkpoint(result["checkpoint"])
        assert payload["iteration"] == 12

    def test_bitwise_determinism(self, manifest, tmp_path):
        a = train(quick_config(), manifest, tmp_path / "a")
        b = train(quick_config(), manifest, tmp_path / "b")
        assert sha(a["checkpoint"]) == sha(b["checkpoint"])
        assert a["history"] == b["history"]

    def test_resume_reproduces_trajectory(self, short_run, manifest, tmp_path):
        _, full = short_run
        part = train(quick_config(), manifest, tmp_path / "c", max_iterations=6)
        assert part["iterations"] == 6
        resumed = train(
            quick_config(), manifest, tmp_path / "c", resume_from=part["checkpoint"]
        )
        assert [r["total"] for r in resumed["history"]] == [
            r["total"] for r in full["history"][6:]
        ]
        assert sha(resumed["checkpoint"]) == sha(full["checkpoint"])

    def test_config_mismatch_on_resume_rejected(self, short_run, manifest, tmp_path):
        _, result = short_run
        other = quick_config(**{"loss.sc": "50"})
        from scops.checkpoint import CheckpointError

        with pytest.raises(CheckpointError, match="fingerprint"):
            train(other, manifest, tmp_path / "d", resume_from=result["checkpoint"])

    def test_zero_weights_leave_parameters_at_init(self, manifest, tmp_path):
        cfg = quick_config(**{"loss.con": "0", "loss.eqv": "0", "loss.sc": "0", "loss.ot": "0"})
        result = train(cfg, manifest, tmp_path / "z")
        payload = load_checkpoint(result["checkpoint"])
        torch.manual_seed(cfg["train.seed"])
        fresh = build_model("tiny", part_count=3, width=16)
        for key, value in fresh.state_dict().items():
            assert torch.equal(payload["model_state"][key], value)

    def test_missing_train_split_aborts(self, dataset, tmp_path):
        m = build_manifest(dataset, test_count=3)
        for r in m.records:
            r.split = "test"
        with pytest.raises(TrainingAborted):
            train(quick_config(), m, tmp_path / "e")


class TestInfer:
    def test_writes_three_documented_files(self, short_run, manifest, tmp_path):
        _, result = short_run
        record = manifest.split("test")[0]
        outputs = infer(result["checkpoint"], manifest.resolve(record.image), tmp_path)
        stem = "00009"
        assert outputs["labels"].name == f"{stem}_labels.png"
        assert outputs["overlay"].name == f"{stem}_overlay.png"
        assert outputs["centers"].name == f"{stem}_centers.csv"
        lines = outputs["centers"].read_text().splitlines()
        assert lines[0] == "part,u,v,mass,empty"
        assert len(lines) == 4

    def test_label_png_roundtrips_segmentation(self, short_run, manifest, tmp_path):
        _, result = short_run
        record = manifest.split("test")[0]
        outputs = infer(result["checkpoint"], manifest.resolve(record.image), tmp_path)
        payload = load_checkpoint(result["checkpoint"])
        from scops.checkpoint import restore_model

        model = restore_model(payload)
        _, _, labels, _ = run_model_on_image(model, manifest.resolve(record.image), 32)
        written = np.asarray(Image.open(outputs["labels"]))
        # source image is 32x32 and training resolution is 32: no resize
        assert np.array_equal(written, labels)


class TestEvaluateRunner:
    def test_iou_rows_schema(self, short_run, manifest, tmp_path):
        _, result = short_run
        rows = evaluate(result["checkpoint"], manifest, "iou", tmp_path / "m.csv")
        assert rows[0].metric == "foreground_iou"
        assert rows[0].method == "scops"
        assert rows[0].n_images == 3
        assert 0.0 <= rows[0].value <= 1.0
        assert (tmp_path / "m.csv").exists()

    def test_landmarks_protocol_runs(self, short_run, manifest, tmp_path):
        _, result = short_run
        rows = evaluate(result["checkpoint"], manifest, "landmarks", tmp_path / "m.csv")
        assert rows[0].metric == "landmark_error_pct"
        assert rows[0].value >= 0.0

    def test_dff_shares_schema(self, manifest, tmp_path):
        rows = evaluate("dff", manifest, "iou", tmp_path / "m.csv", config=quick_config())
        assert rows[0].method == "dff"
        assert rows[0].metric == "foreground_iou"

    def test_unknown_protocol(self, short_run, manifest, tmp_path):
        _, result = short_run
        from scops.evaluation import EvaluationError

        with pytest.raises(EvaluationError):
            evaluate(result["checkpoint"], manifest, "bogus", tmp_path / "m.csv")
