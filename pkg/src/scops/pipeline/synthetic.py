"""Desk-scale synthetic collection: colored blobs on textured backgrounds.

Each image shows the same rigid arrangement of three distinct-colored
elliptical blobs under a random in-range similarity transform plus color
jitter. Ground truth (part masks, exact blob centers, foreground mask)
comes from the analytic scene description; the oracle saliency map is
the blurred foreground mask. Everything is deterministic per seed.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter, zoom

from ..core.transforms import ColorJitter, SimilarityTransform

# Canonical scene: (center_u, center_v, radius_u, radius_v, rgb color).
BLOBS = (
    (0.36, 0.37, 0.14, 0.11, (0.85, 0.20, 0.20)),
    (0.36, 0.63, 0.11, 0.10, (0.20, 0.35, 0.90)),
    (0.63, 0.50, 0.12, 0.16, (0.20, 0.80, 0.25)),
)


@dataclass(frozen=True)
class SceneRanges:
    """Transform/jitter ranges for the generator (inside the training
    augmentation ranges, milder so blobs mostly stay in frame)."""

    rotation_deg: float = 60.0
    shift_frac: float = 0.1
    scale_min: float = 0.8
    scale_max: float = 1.4
    brightness: float = 0.15
    contrast: float = 0.15
    saturation: float = 0.10
    hue: float = 0.05


def _background(rng: np.random.Generator, resolution: int) -> np.ndarray:
    coarse = rng.uniform(0.30, 0.62, size=(6, 6, 3))
    coarse = coarse.mean(axis=2, keepdims=True) + 0.08 * (coarse - coarse.mean(axis=2, keepdims=True))
    tex = zoom(coarse, (resolution / 6, resolution / 6, 1), order=1)
    return np.clip(tex[:resolution, :resolution], 0.0, 1.0)


def _render(transform: SimilarityTransform, resolution: int, rng: np.random.Generator):
    """Rasterize labels analytically: a pixel belongs to the blob whose
    canonical-frame preimage falls inside the ellipse."""
    axis = np.linspace(0.0, 1.0, resolution)
    uu, vv = np.meshgrid(axis, axis, indexing="ij")
    pts = np.stack([uu.ravel(), vv.ravel()], axis=1)
    src = transform.inverse_points(pts)
    labels = np.zeros(pts.shape[0], dtype=np.int64)
    colors = np.zeros((pts.shape[0], 3))
    for idx, (cu, cv, ru, rv, color) in enumerate(BLOBS, start=1):
        inside = ((src[:, 0] - cu) / ru) ** 2 + ((src[:, 1] - cv) / rv) ** 2 <= 1.0
        labels[inside] = idx
        colors[inside] = color
    labels = labels.reshape(resolution, resolution)
    image = _background(rng, resolution)
    fg = labels > 0
    image[fg] = colors.reshape(resolution, resolution, 3)[fg]
    return image, labels


def generate_synthetic(
    out_dir,
    count: int,
    seed: int = 0,
    resolution: int = 64,
    ranges: SceneRanges = SceneRanges(),
) -> dict:
    """Write ``count`` images with ground truth under ``out_dir``.

    Layout: images/, masks/ (palette labels, 0 = background),
    foreground/, saliency/ and annotations.jsonl with exact centers,
    bbox fractions, and the per-image transform/jitter parameters.
    """
    out = Path(out_dir)
    for sub in ("images", "masks", "foreground", "saliency"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    base_centers = np.array([[b[0], b[1]] for b in BLOBS])
    annotations = []
    for i in range(count):
        stem = f"{i:05d}"
        rotation = np.radians(rng.uniform(-ranges.rotation_deg, ranges.rotation_deg))
        scale = rng.uniform(ranges.scale_min, ranges.scale_max)
        shift = rng.uniform(-ranges.shift_frac, ranges.shift_frac, size=2)
        transform = SimilarityTransform(
            rotation=rotation, scale=scale, translation=(shift[0], shift[1])
        )
        jitter = ColorJitter(
            brightness=rng.uniform(-ranges.brightness, ranges.brightness),
            contrast=rng.uniform(-ranges.contrast, ranges.contrast),
            saturation=rng.uniform(-ranges.saturation, ranges.saturation),
            hue=rng.uniform(-ranges.hue, ranges.hue),
        )

        image, labels = _render(transform, resolution, rng)
        image = jitter.apply(image)
        centers = transform.transform_points(base_centers)

        fg = labels > 0
        if fg.any():
            rows, cols = np.where(fg)
            h = resolution - 1
            bbox = [rows.min() / h, cols.min() / h, (rows.max() + 1) / h, (cols.max() + 1) / h]
        else:
            bbox = [0.0, 0.0, 0.0, 0.0]
        # Fixed 1px blur: the saliency softness sets how far past the true
        # boundary the semantic loss tolerates foreground response, so the
        # blur radius must not grow with resolution.
        saliency = gaussian_filter(fg.astype(np.float64), sigma=1.0)
        saliency = np.clip(saliency, 0.0, 1.0)

        Image.fromarray((np.clip(image, 0, 1) * 255).round().astype(np.uint8)).save(
            out / "images" / f"{stem}.png"
        )
        mask_img = Image.fromarray(labels.astype(np.uint8), mode="P")
        mask_img.putpalette(_label_palette(len(BLOBS)))
        mask_img.save(out / "masks" / f"{stem}.png")
        Image.fromarray((fg * 255).astype(np.uint8)).save(out / "foreground" / f"{stem}.png")
        Image.fromarray((saliency * 255).round().astype(np.uint8)).save(
            out / "saliency" / f"{stem}.png"
        )

        annotations.append(
            {
                "image": f"images/{stem}.png",
                "mask": f"masks/{stem}.png",
                "foreground": f"foreground/{stem}.png",
                "saliency": f"saliency/{stem}.png",
                "centers": centers.tolist(),
                "bbox": bbox,
                "transform": {
                    "rotation": float(rotation),
                    "scale": float(scale),
                    "translation": [float(shift[0]), float(shift[1])],
                },
                "jitter": {
                    "brightness": jitter.brightness,
                    "contrast": jitter.contrast,
                    "saturation": jitter.saturation,
                    "hue": jitter.hue,
                },
            }
        )

    with (out / "annotations.jsonl").open("w") as fh:
        for ann in annotations:
            fh.write(json.dumps(ann, sort_keys=True) + "\n")
    return {"count": count, "resolution": resolution, "parts": len(BLOBS), "out": str(out)}


def _label_palette(parts: int):
    from .palette import PART_PALETTE

    pal = [0, 0, 0]
    for k in range(parts):
        pal.extend(PART_PALETTE[k % len(PART_PALETTE)])
    pal.extend([0] * (768 - len(pal)))
    return pal
