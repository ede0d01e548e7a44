"""Grid coordinates and response-map moments (soft-argmax part centers).

Coordinates are normalized per axis: a pixel at (row, col) of an HxW grid
sits at (row/(H-1), col/(W-1)), so every map lives on the unit square and
loss magnitudes are resolution independent. Pixel units remain available
via ``units="pixel"`` for the index-summing variant.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

# Below this total mass a channel is considered empty; callers skip it.
EMPTY_MASS_EPS = 1e-8


@dataclass(frozen=True)
class PartCenter:
    """Soft-argmax of one response channel. ``empty`` flags mass < eps."""

    u: float
    v: float
    mass: float
    empty: bool

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.v], dtype=np.float64)


def axis_coords(n: int, units: str = "normalized", dtype=torch.float64) -> torch.Tensor:
    """Coordinates of an n-sample axis: i/(n-1) normalized, or raw indices."""
    if n < 1:
        raise ValueError(f"axis needs at least one sample, got {n}")
    if units == "pixel":
        return torch.arange(n, dtype=dtype)
    if units != "normalized":
        raise ValueError(f"unknown units {units!r}")
    if n == 1:
        return torch.zeros(1, dtype=dtype)
    return torch.linspace(0.0, 1.0, n, dtype=dtype)


def coordinate_grid(h: int, w: int, units: str = "normalized", dtype=torch.float64):
    """(U, V) grids of shape HxW holding per-pixel coordinates."""
    uu = axis_coords(h, units, dtype).view(h, 1).expand(h, w)
    vv = axis_coords(w, units, dtype).view(1, w).expand(h, w)
    return uu, vv


def _to_tensor(arr):
    if isinstance(arr, torch.Tensor):
        return arr, False
    return torch.as_tensor(np.asarray(arr), dtype=torch.float64), True


def channel_centers(maps, units: str = "normalized", eps: float = EMPTY_MASS_EPS):
    """Per-channel soft-argmax centers of a KxHxW stack.

    Returns (centers [K,2], mass [K], empty [K] bool). Centers of empty
    channels are set to the grid midpoint and detached from the graph;
    callers must mask them out using the flag. Differentiable w.r.t. the
    maps everywhere the channel is non-empty.
    """
    maps, _ = _to_tensor(maps)
    if maps.dim() != 3:
        raise ValueError(f"expected KxHxW maps, got shape {tuple(maps.shape)}")
    k, h, w = maps.shape
    uu, vv = coordinate_grid(h, w, units, dtype=maps.dtype)
    uu = uu.to(maps.device)
    vv = vv.to(maps.device)
    mass = maps.sum(dim=(1, 2))
    empty = mass < eps
    safe_mass = mass.clamp_min(eps)
    cu = (maps * uu).sum(dim=(1, 2)) / safe_mass
    cv = (maps * vv).sum(dim=(1, 2)) / safe_mass
    mid_u = float(uu.max() + uu.min()) / 2.0
    mid_v = float(vv.max() + vv.min()) / 2.0
    fill = torch.stack(
        [torch.full_like(cu, mid_u), torch.full_like(cv, mid_v)], dim=1
    )
    centers = torch.stack([cu, cv], dim=1)
    centers = torch.where(empty.unsqueeze(1), fill, centers)
    return centers, mass, empty


def part_center(map_channel, units: str = "normalized", eps: float = EMPTY_MASS_EPS) -> PartCenter:
    """Response-weighted mean coordinate of a single non-negative HxW grid.

    Returns a flagged empty result when the total mass is below ``eps``
    instead of dividing by ~0; the caller decides how to treat it.
    """
    t, _ = _to_tensor(map_channel)
    if t.dim() != 2:
        raise ValueError(f"expected an HxW grid, got shape {tuple(t.shape)}")
    if not torch.isfinite(t).all():
        raise ValueError("map contains non-finite entries")
    if (t < 0).any():
        raise ValueError("map contains negative entries")
    centers, mass, empty = channel_centers(t.unsqueeze(0), units=units, eps=eps)
    return PartCenter(
        u=float(centers[0, 0]),
        v=float(centers[0, 1]),
        mass=float(mass[0]),
        empty=bool(empty[0]),
    )
