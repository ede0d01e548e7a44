"""Protocol runner: landmark-regression proxy and foreground IoU.

Works from a trained checkpoint or from the factorization baseline; both
paths share the metrics CSV schema so result tables differ only in the
method column.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from ..checkpoint import load_checkpoint, restore_model
from ..core.geometry import channel_centers
from ..dff import dff_segment
from ..evaluation import (
    BboxNorm,
    EvaluationError,
    InterOcularNorm,
    MetricRow,
    fit_landmark_regressor,
    foreground_iou,
    landmark_error,
    write_metrics_csv,
)
from ..features import build_provider, load_saliency
from ..model import normalize_responses, segment
from .config import TrainConfig, config_from_text
from .infer import run_model_on_image
from .manifest import CollectionManifest


def _load_mask(path, resolution=None) -> np.ndarray:
    img = Image.open(path)
    if resolution is not None and img.size != (resolution, resolution):
        img = img.resize((resolution, resolution), Image.NEAREST)
    return np.asarray(img)


def _record_norm(record, norm_spec):
    if norm_spec == "bbox":
        if record.bbox is None:
            raise EvaluationError(f"record {record.image} has no bbox for normalization")
        u0, v0, u1, v1 = record.bbox
        return BboxNorm(width=max(v1 - v0, 1e-9), height=max(u1 - u0, 1e-9))
    if isinstance(norm_spec, str) and norm_spec.startswith("inter_ocular:"):
        left, right = norm_spec.split(":", 1)[1].split(",")
        return InterOcularNorm(int(left), int(right))
    raise EvaluationError(f"unknown normalization spec {norm_spec!r}")


def _model_centers(model, manifest, records, resolution, units):
    """Stacked center coordinates per image; images with any empty part
    are excluded and counted."""
    rows, kept, excluded = [], [], 0
    for record in records:
        responses, _, _, _ = run_model_on_image(
            model, manifest.resolve(record.image), resolution
        )
        centers, _, empty = channel_centers(responses[1:], units=units)
        if bool(empty.any()):
            excluded += 1
            continue
        rows.append(centers.numpy().reshape(-1))
        kept.append(record)
    return np.array(rows), kept, excluded


def _dff_run(manifest, records, config: TrainConfig, seed: int = 0):
    provider = build_provider(
        config["features.provider"],
        **(
            {"weights_path": config["features.weights_path"] or None}
            if config["features.provider"] == "vgg19"
            else {}
        ),
    )
    resolution = config["train.resolution"]
    images = []
    saliency = []
    for record in records:
        img = Image.open(manifest.resolve(record.image)).convert("RGB")
        if img.size != (resolution, resolution):
            img = img.resize((resolution, resolution), Image.BILINEAR)
        images.append(np.asarray(img, dtype=np.float32) / 255.0)
        if config["dff.mask_features"] and record.saliency is not None:
            saliency.append(
                load_saliency(manifest.resolve(record.saliency), (resolution, resolution)).numpy()
            )
    sal = saliency if (config["dff.mask_features"] and len(saliency) == len(images)) else None
    labels, responses, result = dff_segment(
        images, provider, config.parts, saliency_maps=sal, seed=seed
    )
    return labels, responses


def evaluate(
    source,
    manifest: CollectionManifest,
    protocol: str,
    out_csv,
    config: TrainConfig | None = None,
    fit_split: str = "train",
    eval_split: str = "test",
    norm_spec: str = "bbox",
    ridge: float = 1e-6,
) -> list:
    """Run one protocol and write the metrics CSV; returns the rows.

    ``source`` is a checkpoint path, or the string "dff" for the
    factorization baseline (which then requires ``config``).
    """
    use_dff = isinstance(source, str) and source == "dff"
    if use_dff:
        if config is None:
            raise EvaluationError("DFF evaluation needs a config for provider and K")
        method = "dff"
        model = None
    else:
        payload = load_checkpoint(source)
        config = config_from_text(payload["config_text"])
        model = restore_model(payload)
        method = "scops"
    resolution = config["train.resolution"]
    units = config["coords.units"]
    parts = config.parts
    rows = []

    if protocol == "landmarks":
        fit_records = [r for r in manifest.split(fit_split) if r.landmarks is not None]
        eval_records = [r for r in manifest.split(eval_split) if r.landmarks is not None]
        if not fit_records or not eval_records:
            raise EvaluationError(
                f"landmark protocol needs landmark annotations in splits "
                f"{fit_split!r} and {eval_split!r}"
            )
        if use_dff:
            all_records = fit_records + eval_records
            labels, responses = _dff_run(manifest, all_records, config)
            centers_all, excl_all = [], []
            for resp in responses:
                centers, _, empty = channel_centers(
                    torch.from_numpy(resp[1:]), units=units
                )
                centers_all.append(centers.numpy().reshape(-1))
                excl_all.append(bool(empty.any()))
            fit_centers = np.array(
                [c for c, e, r in zip(centers_all, excl_all, all_records) if not e and r in fit_records]
            )
            fit_kept = [r for e, r in zip(excl_all, all_records) if not e and r in fit_records]
            n_fit_excl = sum(e for e, r in zip(excl_all, all_records) if r in fit_records)
            eval_centers = np.array(
                [c for c, e, r in zip(centers_all, excl_all, all_records) if not e and r in eval_records]
            )
            eval_kept = [r for e, r in zip(excl_all, all_records) if not e and r in eval_records]
            n_eval_excl = sum(e for e, r in zip(excl_all, all_records) if r in eval_records)
        else:
            fit_centers, fit_kept, n_fit_excl = _model_centers(
                model, manifest, fit_records, resolution, units
            )
            eval_centers, eval_kept, n_eval_excl = _model_centers(
                model, manifest, eval_records, resolution, units
            )
        fit_landmarks = np.array([np.asarray(r.landmarks).reshape(-1) for r in fit_kept])
        fit = fit_landmark_regressor(fit_centers, fit_landmarks, ridge=ridge)
        preds = fit.predict(eval_centers)
        errors = []
        for pred_flat, record in zip(preds, eval_kept):
            gt = np.asarray(record.landmarks, dtype=np.float64)
            errors.append(
                landmark_error(pred_flat.reshape(-1, 2), gt, _record_norm(record, norm_spec))
            )
        rows.append(
            MetricRow(
                split=eval_split,
                method=method,
                parts=parts,
                metric="landmark_error_pct",
                value=float(np.mean(errors)),
                n_images=len(eval_kept),
                n_excluded=n_eval_excl,
            )
        )

    elif protocol == "iou":
        records = [r for r in manifest.split(eval_split) if r.foreground is not None]
        if not records:
            raise EvaluationError(f"IoU protocol needs foreground masks in split {eval_split!r}")
        if use_dff:
            labels_list, _ = _dff_run(manifest, records, config)
        else:
            labels_list = [
                run_model_on_image(model, manifest.resolve(r.image), resolution)[2]
                for r in records
            ]
        ious = []
        for labels, record in zip(labels_list, records):
            gt = _load_mask(manifest.resolve(record.foreground), resolution) > 127
            ious.append(foreground_iou(labels, gt))
        rows.append(
            MetricRow(
                split=eval_split,
                method=method,
                parts=parts,
                metric="foreground_iou",
                value=float(np.mean(ious)),
                n_images=len(records),
            )
        )
    else:
        raise EvaluationError(f"unknown protocol {protocol!r} (have: landmarks, iou)")

    if out_csv is not None:
        write_metrics_csv(out_csv, rows)
    return rows
