"""Training loop joining the four losses over a manifest collection.

One iteration: sample a batch, draw a per-element spatial transform and
color jitter, forward both the original and transformed branches, apply
the enabled losses, and take a single combined SGD step on the network
and the part basis. Losses with a zero weight are skipped entirely, so
ablations are pure config changes. With a fixed seed the loss trajectory
and checkpoints are bitwise reproducible on CPU, and checkpoints carry
the RNG states needed to resume mid-run exactly.
"""
from __future__ import annotations

import csv
import logging
import time
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from ..checkpoint import load_checkpoint, save_checkpoint
from ..features import build_provider, load_saliency
from ..losses import (
    LossError,
    concentration_loss,
    equivariance_loss,
    orthonormal_loss,
    semantic_consistency_loss,
    total_loss,
)
from ..model import build_model
from ..core.transforms import apply_transform_to_map, sample_transform
from .config import TrainConfig
from .manifest import CollectionManifest

log = logging.getLogger(__name__)

LOG_COLUMNS = ("iteration", "total", "con", "eqv", "sc", "ot")


class TrainingAborted(RuntimeError):
    pass


def _load_image(path: Path, resolution: int) -> np.ndarray:
    img = Image.open(path).convert("RGB")
    if img.size != (resolution, resolution):
        img = img.resize((resolution, resolution), Image.BILINEAR)
    return np.asarray(img, dtype=np.float32) / 255.0


def _model_kwargs(config: TrainConfig) -> dict:
    kwargs = {"part_count": config.parts}
    if config["model.arch"] == "tiny":
        kwargs["width"] = config["model.width"]
    elif config["model.weights_path"]:
        kwargs["weights_path"] = config["model.weights_path"]
    return kwargs


def _build_optimizer(model, basis, config: TrainConfig):
    return torch.optim.SGD(
        [
            {"params": list(model.parameters()), "lr": config["train.lr_model"]},
            {"params": [basis], "lr": config["train.lr_basis"]},
        ],
        momentum=config["train.momentum"],
    )


def _init_basis(provider, images, saliency, parts: int, probe: int = 8) -> torch.Tensor:
    """Seed the part basis with farthest-point-sampled salient features.

    A random basis makes the all-background response a local optimum of
    the semantic loss (reconstructing nothing beats reconstructing with
    unrelated vectors, and dead responses stop the basis from learning).
    Starting from actual feature vectors spread across the collection
    makes foreground activation pay from the first step. Deterministic:
    no RNG, starts from the highest-energy salient pixel.
    """
    samples = []
    for i in range(min(probe, len(images))):
        feats = provider.extract(torch.from_numpy(images[i]).permute(2, 0, 1))
        masked = feats * torch.from_numpy(saliency[i]).unsqueeze(0)
        flat = masked.reshape(feats.shape[0], -1).T
        keep = torch.from_numpy(saliency[i]).reshape(-1) > 0.5
        if keep.any():
            samples.append(flat[keep])
    if not samples:
        return torch.rand(parts, provider.channels) * 0.9 + 0.1
    pool = torch.cat(samples)
    chosen = [int(pool.norm(dim=1).argmax())]
    dist = torch.full((pool.shape[0],), float("inf"))
    while len(chosen) < parts:
        dist = torch.minimum(dist, (pool - pool[chosen[-1]]).norm(dim=1))
        chosen.append(int(dist.argmax()))
    # Scaled down so the initial reconstruction undershoots the features:
    # a full-scale start makes the early gradient slam all foreground
    # responses toward background before the network can discriminate.
    return pool[chosen].clone() * 0.25 + 0.01


def _save_with_retry(path, **payload):
    try:
        save_checkpoint(path, **payload)
    except OSError:
        log.warning("checkpoint write failed once, retrying: %s", path)
        save_checkpoint(path, **payload)


def train(
    config: TrainConfig,
    manifest: CollectionManifest,
    out_dir,
    resume_from=None,
    max_iterations: int | None = None,
) -> dict:
    """Run the optimization; returns final checkpoint path and loss history.

    ``max_iterations`` caps this call (for interrupt/resume tests) without
    changing the configured total.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    resolution = config["train.resolution"]
    batch_size = config["train.batch_size"]
    iterations = config["train.iterations"]
    weights = config.loss_weights()
    units = config["coords.units"]
    ranges = config.transform_ranges()
    jitter_ranges = config.jitter_ranges()
    config_text = config.canonical_text()
    config_hash = config.fingerprint()

    records = manifest.split("train")
    if not records:
        raise TrainingAborted("manifest has no training split")

    images = np.stack([_load_image(manifest.resolve(r.image), resolution) for r in records])
    saliency = []
    for r in records:
        if r.saliency is not None:
            sal = load_saliency(manifest.resolve(r.saliency), (resolution, resolution))
        else:
            sal = load_saliency(
                manifest.root / "saliency" / (Path(r.image).stem + ".png"),
                (resolution, resolution),
                policy=config["saliency.policy"],
            )
        saliency.append(sal.numpy())
    saliency = np.stack(saliency)

    provider = build_provider(
        config["features.provider"],
        **(
            {"weights_path": config["features.weights_path"] or None}
            if config["features.provider"] == "vgg19"
            else {}
        ),
    )

    torch.manual_seed(config["train.seed"])
    rng = np.random.default_rng(config["train.seed"])
    model = build_model(config["model.arch"], **_model_kwargs(config))
    basis = _init_basis(provider, images, saliency, config.parts)
    basis.requires_grad_(True)
    optimizer = _build_optimizer(model, basis, config)

    start_iteration = 0
    if resume_from is not None:
        payload = load_checkpoint(resume_from, expected_config_hash=config_hash)
        model.load_state_dict(payload["model_state"])
        with torch.no_grad():
            basis.copy_(payload["basis"])
        optimizer.load_state_dict(payload["optimizer_state"])
        rng.bit_generator.state = payload["numpy_rng_state"]
        torch.set_rng_state(payload["torch_rng_state"])
        start_iteration = payload["iteration"]

    model.train()
    history = []
    stop_at = iterations if max_iterations is None else min(iterations, start_iteration + max_iterations)
    started = time.time()

    def checkpoint_payload():
        return dict(
            model_arch=config["model.arch"],
            model_kwargs=_model_kwargs(config),
            model_state={k: v.clone() for k, v in model.state_dict().items()},
            basis=basis.detach().clone(),
            optimizer_state=optimizer.state_dict(),
            iteration=iteration + 1,
            config_text=config_text,
            config_hash=config_hash,
            numpy_rng_state=rng.bit_generator.state,
            torch_rng_state=torch.get_rng_state(),
        )

    for iteration in range(start_iteration, stop_at):
        idx = rng.choice(len(records), size=batch_size, replace=len(records) < batch_size)
        batch_np = images[idx]
        batch = torch.from_numpy(batch_np).permute(0, 3, 1, 2).contiguous()
        responses = model(batch)

        terms = {}
        if weights.con > 0:
            terms["con"] = concentration_loss(responses, units=units)
        if weights.eqv > 0:
            transforms = []
            warped_imgs = []
            for b in range(batch.shape[0]):
                spatial, jitter = sample_transform(rng, ranges, jitter_ranges)
                transforms.append(spatial)
                jittered = torch.from_numpy(
                    jitter.apply(batch_np[b]).astype(np.float32)
                ).permute(2, 0, 1)
                warped, _ = apply_transform_to_map(jittered, spatial)
                warped_imgs.append(warped)
            transformed = model(torch.stack(warped_imgs))
            eqv = responses.new_zeros(())
            for b in range(batch.shape[0]):
                eqv = eqv + equivariance_loss(
                    responses[b],
                    transformed[b],
                    transforms[b],
                    lambda_s=weights.eqv_s,
                    lambda_c=weights.eqv_c,
                    units=units,
                )
            terms["eqv"] = eqv / batch.shape[0]
        if weights.sc > 0:
            feats = torch.stack([provider.extract(batch[b]) for b in range(batch.shape[0])])
            sal = torch.from_numpy(saliency[idx])
            terms["sc"] = semantic_consistency_loss(feats, responses, basis, sal)
        if weights.ot > 0:
            terms["ot"] = orthonormal_loss(basis)

        try:
            loss, breakdown = total_loss(terms, weights)
        except LossError as exc:
            raise TrainingAborted(f"iteration {iteration}: {exc}") from exc

        if terms:
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

        row = {
            "iteration": iteration,
            "total": breakdown.get("total", 0.0),
            "con": breakdown.get("con", 0.0),
            "eqv": breakdown.get("eqv", 0.0),
            "sc": breakdown.get("sc", 0.0),
            "ot": breakdown.get("ot", 0.0),
        }
        history.append(row)
        if iteration % config["train.log_interval"] == 0:
            log.info(
                "iter %d total %.5f con %.5f eqv %.5f sc %.5f ot %.5f",
                iteration, row["total"], row["con"], row["eqv"], row["sc"], row["ot"],
            )
        if (iteration + 1) % config["train.checkpoint_interval"] == 0 and iteration + 1 < stop_at:
            _save_with_retry(out / f"checkpoint_{iteration + 1:06d}.pt", **checkpoint_payload())

    iteration = stop_at - 1
    final_path = out / "checkpoint_final.pt"
    if stop_at > start_iteration:
        _save_with_retry(final_path, **checkpoint_payload())
    elif not final_path.exists():
        raise TrainingAborted("nothing to train: start iteration beyond configured total")

    _write_log(out / "loss_log.csv", history, append=start_iteration > 0)
    log.info("trained %d iterations in %.1fs", stop_at - start_iteration, time.time() - started)
    return {"checkpoint": final_path, "history": history, "iterations": stop_at}


def _write_log(path, history, append: bool):
    with Path(path).open("a" if append else "w", newline="") as fh:
        writer = csv.writer(fh)
        if fh.tell() == 0:
            writer.writerow(LOG_COLUMNS)
        for row in history:
            writer.writerow([row[c] if c == "iteration" else f"{row[c]:.8f}" for c in LOG_COLUMNS])
