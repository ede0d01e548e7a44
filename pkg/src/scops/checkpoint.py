"""Checkpoint archive: model weights, part basis, optimizer, RNG, config.

Single torch archive keyed by hierarchical names and stamped with the
magic string "SCOPS1". Loading verifies the magic and, when the caller
supplies the active config, its fingerprint; a fingerprint mismatch is an
error rather than a silent retrain-from-other-settings.
"""
from __future__ import annotations

from pathlib import Path

import torch

MAGIC = "SCOPS1"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(
    path,
    *,
    model_arch: str,
    model_kwargs: dict,
    model_state: dict,
    basis: torch.Tensor,
    optimizer_state: dict,
    iteration: int,
    config_text: str,
    config_hash: str,
    numpy_rng_state: dict,
    torch_rng_state: torch.Tensor,
) -> None:
    payload = {
        "magic": MAGIC,
        "format_version": FORMAT_VERSION,
        "model_arch": model_arch,
        "model_kwargs": model_kwargs,
        "model_state": model_state,
        "basis": basis,
        "optimizer_state": optimizer_state,
        "iteration": iteration,
        "config_text": config_text,
        "config_hash": config_hash,
        "numpy_rng_state": numpy_rng_state,
        "torch_rng_state": torch_rng_state,
    }
    torch.save(payload, Path(path))


def load_checkpoint(path, expected_config_hash: str | None = None) -> dict:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("magic") != MAGIC:
        raise CheckpointError(f"{path} is not a {MAGIC} checkpoint")
    if payload.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format {payload.get('format_version')}"
        )
    if expected_config_hash is not None and payload["config_hash"] != expected_config_hash:
        raise CheckpointError(
            "config fingerprint mismatch: checkpoint was written with different settings "
            f"({payload['config_hash'][:12]} != {expected_config_hash[:12]})"
        )
    return payload


def restore_model(payload: dict):
    """Rebuild the segmentation network stored in a checkpoint payload."""
    from .model import build_model

    model = build_model(payload["model_arch"], **payload["model_kwargs"])
    model.load_state_dict(payload["model_state"])
    model.eval()
    return model
