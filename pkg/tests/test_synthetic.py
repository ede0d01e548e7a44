import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from scops.core.transforms import SimilarityTransform
from scops.evaluation import foreground_iou
from scops.pipeline.synthetic import BLOBS, generate_synthetic


def tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth") / "data"
    generate_synthetic(root, 8, seed=0, resolution=40)
    return root


def test_regeneration_is_bit_identical(tmp_path, dataset):
    again = tmp_path / "again"
    generate_synthetic(again, 8, seed=0, resolution=40)
    assert tree_digest(again) == tree_digest(dataset)


def test_different_seed_differs(tmp_path, dataset):
    other = tmp_path / "other"
    generate_synthetic(other, 8, seed=1, resolution=40)
    assert tree_digest(other) != tree_digest(dataset)


def test_layout_and_annotation_fields(dataset):
    anns = [json.loads(l) for l in (dataset / "annotations.jsonl").read_text().splitlines()]
    assert len(anns) == 8
    for ann in anns:
        for key in ("image", "mask", "foreground", "saliency", "centers", "bbox", "transform", "jitter"):
            assert key in ann
        assert (dataset / ann["image"]).exists()
        assert len(ann["centers"]) == len(BLOBS)


def test_centers_match_stored_transform_exactly(dataset):
    base = np.array([[b[0], b[1]] for b in BLOBS])
    for line in (dataset / "annotations.jsonl").read_text().splitlines():
        ann = json.loads(line)
        t = ann["transform"]
        transform = SimilarityTransform(
            rotation=t["rotation"], scale=t["scale"],
            translation=tuple(t["translation"]),
        )
        expected = transform.transform_points(base)
        assert np.abs(expected - np.array(ann["centers"])).max() < 1e-9


def test_gt_masks_self_consistent(dataset):
    for line in (dataset / "annotations.jsonl").read_text().splitlines():
        ann = json.loads(line)
        mask = np.asarray(Image.open(dataset / ann["mask"]))
        fg = np.asarray(Image.open(dataset / ann["foreground"])) > 127
        assert foreground_iou(mask, fg) == 1.0
        assert set(np.unique(mask)) <= {0, 1, 2, 3}


def test_saliency_blurred_foreground(dataset):
    for line in (dataset / "annotations.jsonl").read_text().splitlines()[:3]:
        ann = json.loads(line)
        sal = np.asarray(Image.open(dataset / ann["saliency"]), dtype=np.float64) / 255.0
        fg = np.asarray(Image.open(dataset / ann["foreground"])) > 127
        assert sal.min() >= 0.0 and sal.max() <= 1.0
        # interior of the foreground stays salient, far background stays dark
        if fg.any():
            assert sal[fg].mean() > 0.5
        assert sal[~fg].mean() < 0.3


def test_images_in_unit_range(dataset):
    arr = np.asarray(Image.open(dataset / "images" / "00000.png"))
    assert arr.dtype == np.uint8
    assert arr.shape == (40, 40, 3)
