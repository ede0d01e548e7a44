"""Single-image inference: label map, overlay, and part centers on disk."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from ..checkpoint import load_checkpoint, restore_model
from ..core.geometry import channel_centers
from ..model import normalize_responses, segment
from .config import config_from_text
from .palette import PART_PALETTE


def _label_png(labels: np.ndarray) -> Image.Image:
    img = Image.fromarray(labels.astype(np.uint8), mode="P")
    pal = [0, 0, 0]
    for color in PART_PALETTE:
        pal.extend(color)
    pal.extend([0] * (768 - len(pal)))
    img.putpalette(pal)
    return img


def _overlay(image: np.ndarray, labels: np.ndarray, alpha: float = 0.5) -> Image.Image:
    out = image.astype(np.float64).copy()
    for k in range(1, labels.max() + 1):
        color = np.array(PART_PALETTE[(k - 1) % len(PART_PALETTE)], dtype=np.float64)
        sel = labels == k
        out[sel] = (1 - alpha) * out[sel] + alpha * color
    return Image.fromarray(out.round().astype(np.uint8))


def run_model_on_image(model, image_path, resolution: int):
    """Forward one image at the training resolution; returns
    (responses [K+1,h,w], normalized, labels, original RGB array)."""
    img = Image.open(image_path).convert("RGB")
    original = np.asarray(img)
    resized = img.resize((resolution, resolution), Image.BILINEAR)
    x = torch.from_numpy(np.asarray(resized, dtype=np.float32) / 255.0)
    x = x.permute(2, 0, 1).unsqueeze(0)
    with torch.no_grad():
        responses = model(x)[0]
    normalized = normalize_responses(responses)
    labels = segment(normalized)
    return responses, normalized, labels, original


def infer(checkpoint_path, image_path, out_dir) -> dict:
    """Write <stem>_labels.png, <stem>_overlay.png and <stem>_centers.csv.

    The label map is computed at the training resolution and resized back
    to the original image size with nearest-neighbor sampling; centers are
    reported in normalized coordinates.
    """
    payload = load_checkpoint(checkpoint_path)
    config = config_from_text(payload["config_text"])
    model = restore_model(payload)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(image_path).stem

    responses, normalized, labels, original = run_model_on_image(
        model, image_path, config["train.resolution"]
    )
    h0, w0 = original.shape[:2]
    labels_full = np.asarray(
        _label_png(labels).resize((w0, h0), Image.NEAREST), dtype=np.int64
    )

    label_path = out / f"{stem}_labels.png"
    _label_png(labels_full).save(label_path)
    overlay_path = out / f"{stem}_overlay.png"
    _overlay(original, labels_full).save(overlay_path)

    centers, mass, empty = channel_centers(
        responses[1:], units=config["coords.units"]
    )
    centers_path = out / f"{stem}_centers.csv"
    with centers_path.open("w") as fh:
        fh.write("part,u,v,mass,empty\n")
        for k in range(centers.shape[0]):
            fh.write(
                f"{k + 1},{float(centers[k, 0]):.8f},{float(centers[k, 1]):.8f},"
                f"{float(mass[k]):.8f},{int(empty[k])}\n"
            )
    return {"labels": label_path, "overlay": overlay_path, "centers": centers_path}
