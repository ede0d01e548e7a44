"""The four training losses and their weighted combination.

All losses are plain tensor functions, differentiable with respect to
every tensor argument, and reduce over pixels with means so the default
weights transfer across resolutions. Channels whose response mass is
below the empty-part threshold are skipped rather than producing NaN
gradients.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .core.geometry import EMPTY_MASS_EPS, channel_centers, coordinate_grid
from .core.transforms import SpatialTransform, apply_transform_to_map

KL_CLAMP = 1e-8


class LossError(RuntimeError):
    """A loss term became non-finite or structurally invalid."""


@dataclass(frozen=True)
class LossWeights:
    """Outer weights of the combined objective plus the inner
    equivariance coefficients (distribution vs center term)."""

    con: float = 0.1
    eqv: float = 10.0
    sc: float = 100.0
    ot: float = 0.1
    eqv_s: float = 10.0
    eqv_c: float = 1.0

    def __post_init__(self):
        for name in ("con", "eqv", "sc", "ot", "eqv_s", "eqv_c"):
            val = getattr(self, name)
            if not (val >= 0 and val == val and val != float("inf")):
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {val}")


def _as_batched(t: torch.Tensor, dims: int):
    if t.dim() == dims:
        return t.unsqueeze(0), True
    if t.dim() == dims + 1:
        return t, False
    raise ValueError(f"expected {dims}D or {dims + 1}D tensor, got shape {tuple(t.shape)}")


def concentration_loss(
    responses: torch.Tensor, units: str = "normalized", eps: float = EMPTY_MASS_EPS
) -> torch.Tensor:
    """Response-weighted squared distance to each part center.

    Sums over the K foreground channels (background is not geometrically
    concentrated); empty channels contribute zero. Batched input is
    averaged over the batch.
    """
    r, _ = _as_batched(responses, 3)
    b, ch, h, w = r.shape
    if ch < 2:
        raise ValueError("need at least one foreground channel")
    uu, vv = coordinate_grid(h, w, units, dtype=r.dtype)
    uu = uu.to(r.device)
    vv = vv.to(r.device)
    total = r.new_zeros(())
    for i in range(b):
        fg = r[i, 1:]
        centers, mass, empty = channel_centers(fg, units=units, eps=eps)
        keep = ~empty
        if not keep.any():
            continue
        du = uu.unsqueeze(0) - centers[:, 0].view(-1, 1, 1)
        dv = vv.unsqueeze(0) - centers[:, 1].view(-1, 1, 1)
        per_part = ((du**2 + dv**2) * fg).sum(dim=(1, 2)) / mass.clamp_min(eps)
        total = total + (per_part * keep.to(r.dtype)).sum()
    return total / b


def equivariance_loss(
    responses: torch.Tensor,
    transformed_responses: torch.Tensor,
    transform: SpatialTransform,
    lambda_s: float = 10.0,
    lambda_c: float = 1.0,
    units: str = "normalized",
    eps: float = EMPTY_MASS_EPS,
) -> torch.Tensor:
    """Distribution KL plus part-center mismatch under a spatial warp.

    ``responses`` comes from the original image, ``transformed_responses``
    from the warped image. The original map is warped with the same
    transform; the KL between per-pixel distributions is averaged over
    pixels whose warp source stayed in bounds, and part centers of the
    warped branch are compared against the exactly transformed centers.
    """
    if responses.shape != transformed_responses.shape:
        raise ValueError("response maps must share a shape")
    if responses.dim() != 3:
        raise ValueError("equivariance loss operates on single (K+1)xHxW maps")

    warped, valid = apply_transform_to_map(responses, transform)
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise LossError("no valid pixels after warping; transform too extreme for grid")

    per_pixel_sum = warped.sum(dim=0, keepdim=True)
    renormed = warped / per_pixel_sum.clamp_min(eps)
    q = renormed.clamp_min(KL_CLAMP)
    p = transformed_responses.clamp_min(KL_CLAMP)
    kl = (transformed_responses * (torch.log(p) - torch.log(q))).sum(dim=0)
    kl_term = (kl * valid.to(kl.dtype)).sum() / n_valid

    centers, _, empty = channel_centers(responses[1:], units=units, eps=eps)
    centers_t, _, empty_t = channel_centers(transformed_responses[1:], units=units, eps=eps)
    keep = ~(empty | empty_t)
    if keep.any():
        moved = transform.transform_points(centers)
        center_term = ((centers_t - moved) ** 2).sum(dim=1)
        center_term = (center_term * keep.to(center_term.dtype)).sum()
    else:
        center_term = responses.new_zeros(())
    return lambda_s * kl_term + lambda_c * center_term


def semantic_consistency_loss(
    features: torch.Tensor,
    responses: torch.Tensor,
    basis: torch.Tensor,
    saliency: torch.Tensor | None = None,
) -> torch.Tensor:
    """Squared error between saliency-masked features and the
    response-weighted part basis reconstruction, mean over pixels.

    The basis is rectified before use so reconstructions stay in the
    non-negative feature cone. With a zero saliency map this reduces to
    pushing background responses into the basis null space.
    """
    v, single_v = _as_batched(features, 3)
    r, single_r = _as_batched(responses, 3)
    if single_v != single_r:
        raise ValueError("features and responses must both be batched or both single")
    if basis.dim() != 2:
        raise ValueError(f"basis must be KxC, got {tuple(basis.shape)}")
    k, c = basis.shape
    if v.shape[1] != c:
        raise ValueError(f"feature dim {v.shape[1]} does not match basis dim {c}")
    if r.shape[1] != k + 1:
        raise ValueError(f"expected {k + 1} response channels, got {r.shape[1]}")
    if v.shape[2:] != r.shape[2:]:
        raise ValueError("feature and response grids must share a spatial size")
    if saliency is not None:
        d, _ = _as_batched(saliency, 2)
        if d.shape[1:] != v.shape[2:] or d.shape[0] != v.shape[0]:
            raise ValueError("saliency map must match the feature grid")
        target = v * d.unsqueeze(1)
    else:
        target = v
    recon = torch.einsum("bkhw,kc->bchw", r[:, 1:], torch.relu(basis))
    sq = ((target - recon) ** 2).sum(dim=1)
    return sq.mean()


def orthonormal_loss(basis: torch.Tensor, eps: float = EMPTY_MASS_EPS) -> torch.Tensor:
    """Frobenius distance of the rectified, row-normalized basis Gram
    matrix from the identity. Rows with ~zero rectified norm are excluded."""
    if basis.dim() != 2:
        raise ValueError(f"basis must be KxC, got {tuple(basis.shape)}")
    rect = torch.relu(basis)
    norms = torch.linalg.norm(rect, dim=1)
    keep = norms > eps
    if not keep.any():
        raise LossError("all basis rows are zero after rectification")
    rows = rect[keep] / norms[keep].unsqueeze(1)
    gram = rows @ rows.T
    eye = torch.eye(rows.shape[0], dtype=basis.dtype, device=basis.device)
    return ((gram - eye) ** 2).sum()


def basis_zero_rows(basis: torch.Tensor, eps: float = EMPTY_MASS_EPS) -> int:
    """Number of basis rows excluded by rectification (monitoring aid)."""
    return int((torch.linalg.norm(torch.relu(basis), dim=1) <= eps).sum())


def total_loss(terms: dict, weights: LossWeights):
    """Weighted sum of the available loss terms.

    Returns (total, breakdown) where breakdown maps each term name to its
    raw float value plus the weighted total. A non-finite term aborts
    with the offending name, so training failures are attributable.
    """
    weight_of = {"con": weights.con, "eqv": weights.eqv, "sc": weights.sc, "ot": weights.ot}
    unknown = set(terms) - set(weight_of)
    if unknown:
        raise ValueError(f"unknown loss terms {sorted(unknown)}")
    total = None
    breakdown = {}
    for name, value in terms.items():
        if not torch.isfinite(value):
            raise LossError(f"loss term '{name}' is not finite ({float(value.detach())})")
        breakdown[name] = float(value.detach())
        contrib = weight_of[name] * value
        total = contrib if total is None else total + contrib
    if total is None:
        total = torch.zeros(())
    breakdown["total"] = float(total.detach())
    return total, breakdown
