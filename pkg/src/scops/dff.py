"""Deep-feature-factorization baseline: collection-wide NMF of features.

Multiplicative Frobenius updates, which are monotone in the objective;
the residual history doubles as a runtime invariant. Segmentation reuses
the same max-normalization and background-floor argmax as the trained
model so comparisons differ only in how the responses were produced.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .features import mask_features
from .model import normalize_responses, segment

_EPS = 1e-12


class NmfError(ValueError):
    pass


@dataclass
class NmfResult:
    coefficients: np.ndarray  # (M, K) per-pixel responses
    basis: np.ndarray  # (K, C)
    residual_history: list = field(default_factory=list)
    converged: bool = False


def nmf(values: np.ndarray, k: int, max_iters: int = 500, tol: float = 1e-6, seed: int = 0) -> NmfResult:
    """Factor a non-negative M x C matrix into (M x K) @ (K x C).

    Stops at ``max_iters`` or when the relative residual improvement in
    one iteration drops below ``tol``. Seeded init, so runs repeat.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2:
        raise NmfError(f"expected an MxC matrix, got shape {v.shape}")
    if (v < 0).any():
        raise NmfError("input matrix must be non-negative")
    m, c = v.shape
    if k < 1 or k > min(m, c):
        raise NmfError(f"rank k={k} must be in [1, min(M={m}, C={c})]")
    v_norm = np.linalg.norm(v)
    if v_norm == 0:
        raise NmfError("input matrix is identically zero")

    rng = np.random.default_rng(seed)
    scale = np.sqrt(v.mean() / k)
    coeff = scale * rng.uniform(0.1, 1.0, size=(m, k))
    basis = scale * rng.uniform(0.1, 1.0, size=(k, c))

    history = [float(np.linalg.norm(v - coeff @ basis))]
    converged = False
    for _ in range(max_iters):
        coeff *= (v @ basis.T) / (coeff @ (basis @ basis.T) + _EPS)
        basis *= (coeff.T @ v) / ((coeff.T @ coeff) @ basis + _EPS)
        resid = float(np.linalg.norm(v - coeff @ basis))
        prev = history[-1]
        history.append(resid)
        if prev > 0 and (prev - resid) / prev < tol:
            converged = True
            break
    return NmfResult(coefficients=coeff, basis=basis, residual_history=history, converged=converged)


def dff_segment(
    images,
    provider,
    k: int,
    saliency_maps=None,
    max_iters: int = 500,
    tol: float = 1e-6,
    seed: int = 0,
):
    """Factor the whole collection's features and segment every image.

    Returns (labels_list, responses_list, NmfResult); responses are the
    (K+1) x H x W maps fed through the shared normalize/argmax path.
    """
    images = list(images)
    if len(images) < 2:
        raise NmfError("DFF requires a collection (got a single image)")
    if saliency_maps is not None and len(saliency_maps) != len(images):
        raise NmfError("need one saliency map per image")

    flat = []
    shapes = []
    for i, image in enumerate(images):
        feats = provider.extract(image)
        if saliency_maps is not None:
            feats = mask_features(feats, torch.as_tensor(saliency_maps[i], dtype=feats.dtype))
        c, h, w = feats.shape
        shapes.append((h, w))
        flat.append(feats.reshape(c, h * w).T.numpy())
    if len({s for s in shapes}) != 1:
        raise NmfError("all images in the collection must share a resolution")
    h, w = shapes[0]

    stacked = np.concatenate(flat, axis=0)
    result = nmf(stacked, k, max_iters=max_iters, tol=tol, seed=seed)

    labels_list = []
    responses_list = []
    px = h * w
    for i in range(len(images)):
        rows = result.coefficients[i * px : (i + 1) * px]
        response = np.zeros((k + 1, h, w), dtype=np.float64)
        response[1:] = rows.T.reshape(k, h, w)
        normalized = normalize_responses(torch.from_numpy(response))
        labels_list.append(segment(normalized))
        responses_list.append(response)
    return labels_list, responses_list, result
