"""Shared test utilities: finite differences and naive loss oracles.

The oracles are deliberately written as plain triple loops over pixels
and channels, independent of the vectorized implementations they check.
"""
import numpy as np
import torch


def fd_gradient(fn, tensor, step=1e-5):
    """Central finite-difference gradient of scalar fn w.r.t. one tensor."""
    base = tensor.detach().to(torch.float64).clone()
    grad = torch.zeros_like(base)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + step
        up = float(fn(base))
        flat[i] = orig - step
        down = float(fn(base))
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return grad


def analytic_gradient(fn, tensor):
    t = tensor.detach().to(torch.float64).requires_grad_(True)
    value = fn(t)
    value.backward()
    return t.grad.detach().clone()


def gradient_relative_error(fn, tensor, step=1e-5):
    """Max-norm relative error between autograd and central differences."""
    ana = analytic_gradient(fn, tensor)
    fd = fd_gradient(fn, tensor, step=step)
    denom = max(float(fd.abs().max()), 1e-8)
    return float((ana - fd).abs().max()) / denom


def random_simplex_maps(rng, channels, h, w, dtype=torch.float64):
    """Per-pixel distributions bounded away from zero (safe for logs/FD)."""
    logits = torch.from_numpy(rng.uniform(-1.5, 1.5, size=(channels, h, w))).to(dtype)
    return torch.softmax(logits, dim=0)


def concentration_brute(responses, units="normalized"):
    """Naive concentration loss: explicit loops, foreground channels only."""
    r = np.asarray(responses, dtype=np.float64)
    k1, h, w = r.shape
    us = np.linspace(0.0, 1.0, h) if (units == "normalized" and h > 1) else (
        np.zeros(h) if units == "normalized" else np.arange(h, dtype=np.float64))
    vs = np.linspace(0.0, 1.0, w) if (units == "normalized" and w > 1) else (
        np.zeros(w) if units == "normalized" else np.arange(w, dtype=np.float64))
    total = 0.0
    for k in range(1, k1):
        z = 0.0
        for i in range(h):
            for j in range(w):
                z += r[k, i, j]
        if z < 1e-8:
            continue
        cu = 0.0
        cv = 0.0
        for i in range(h):
            for j in range(w):
                cu += us[i] * r[k, i, j] / z
                cv += vs[j] * r[k, i, j] / z
        for i in range(h):
            for j in range(w):
                total += ((us[i] - cu) ** 2 + (vs[j] - cv) ** 2) * r[k, i, j] / z
    return total


def semantic_brute(features, responses, basis, saliency=None):
    """Naive semantic consistency loss: loops over pixels and channels."""
    v = np.asarray(features, dtype=np.float64)
    r = np.asarray(responses, dtype=np.float64)
    wmat = np.maximum(np.asarray(basis, dtype=np.float64), 0.0)
    c, h, w = v.shape
    k = wmat.shape[0]
    d = np.ones((h, w)) if saliency is None else np.asarray(saliency, dtype=np.float64)
    total = 0.0
    for i in range(h):
        for j in range(w):
            for ch in range(c):
                recon = 0.0
                for kk in range(k):
                    recon += r[kk + 1, i, j] * wmat[kk, ch]
                total += (d[i, j] * v[ch, i, j] - recon) ** 2
    return total / (h * w)
