"""Invertible spatial transforms on the unit square, warping, color jitter.

Points are (u, v) with u = row/(H-1) and v = col/(W-1). Transforms act on
these normalized coordinates, so one parameter set applies consistently
to images, response maps, and point sets of any resolution.

Scale follows the sampling-grid convention: warping with scale s samples
source coordinates s*(q - center), so s > 1 shrinks the content (zoom
out) and s < 1 magnifies it. Map warping is inverse mapping + bilinear
sampling with zero fill and an explicit validity mask.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

CENTER = (0.5, 0.5)

_NEWTON_TOL = 1e-12
_NEWTON_MAX_ITERS = 50


class TransformError(ValueError):
    """Raised for non-invertible or degenerate transform parameters."""


def _points_in(points):
    """Normalize point input to a float64 tensor; remember numpy-ness."""
    if isinstance(points, torch.Tensor):
        return points, False
    arr = np.asarray(points, dtype=np.float64)
    return torch.from_numpy(arr), True


def _points_out(t: torch.Tensor, was_numpy: bool):
    return t.numpy() if was_numpy else t


class SpatialTransform:
    """Base class: an invertible map of normalized (u, v) coordinates."""

    kind = "base"

    def transform_points(self, points):
        """Forward map applied to an (..., 2) point array (exact, no sampling)."""
        raise NotImplementedError

    def inverse_points(self, points):
        """Inverse map: source coordinates that land on the given points."""
        raise NotImplementedError


@dataclass(frozen=True)
class SimilarityTransform(SpatialTransform):
    """Rotation about the grid center, scaling, and translation.

    rotation is in radians; translation is a (du, dv) shift as a fraction
    of the unit square; scale uses the sampling-grid convention (see
    module docstring).
    """

    rotation: float = 0.0
    scale: float = 1.0
    translation: tuple = (0.0, 0.0)

    kind = "similarity"

    def __post_init__(self):
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise TransformError(f"scale must be positive and finite, got {self.scale}")
        if not math.isfinite(self.rotation):
            raise TransformError("rotation must be finite")
        if len(self.translation) != 2 or not all(math.isfinite(t) for t in self.translation):
            raise TransformError(f"bad translation {self.translation!r}")

    def _apply(self, points, cos_t, sin_t, scale, shift):
        pts, was_numpy = _points_in(points)
        u = pts[..., 0] - CENTER[0]
        v = pts[..., 1] - CENTER[1]
        out_u = (cos_t * u - sin_t * v) * scale + CENTER[0] + shift[0]
        out_v = (sin_t * u + cos_t * v) * scale + CENTER[1] + shift[1]
        return _points_out(torch.stack([out_u, out_v], dim=-1), was_numpy)

    def transform_points(self, points):
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        return self._apply(points, c, s, 1.0 / self.scale, self.translation)

    def inverse_points(self, points):
        # Undo translation first, then rotate back and rescale.
        pts, was_numpy = _points_in(points)
        shifted = pts - torch.as_tensor(self.translation, dtype=pts.dtype)
        c, s = math.cos(-self.rotation), math.sin(-self.rotation)
        out = self._apply(shifted, c, s, self.scale, (0.0, 0.0))
        return _points_out(out, was_numpy)


def _tps_kernel(r2: torch.Tensor) -> torch.Tensor:
    # U(r) = r^2 log r = 0.5 * r^2 * log(r^2); exactly 0 at r = 0.
    return 0.5 * r2 * torch.log(r2.clamp_min(1e-30))


class TpsTransform(SpatialTransform):
    """Thin-plate-spline warp from control-point displacements.

    The displacement field is anchored in the *backward* (sampling)
    direction: inverse_points is the closed-form spline, which is what
    map warping consumes per pixel. transform_points inverts that field
    with Newton iterations (the displacements in range keep the map a
    diffeomorphism, which is checked at construction).
    """

    kind = "tps"

    def __init__(self, control_offsets):
        offsets = np.asarray(control_offsets, dtype=np.float64)
        if offsets.ndim != 3 or offsets.shape[0] != offsets.shape[1] or offsets.shape[2] != 2:
            raise TransformError(f"control offsets must be GxGx2, got {offsets.shape}")
        g = offsets.shape[0]
        if g < 2:
            raise TransformError("TPS grid must be at least 2x2")
        axis = np.linspace(0.0, 1.0, g)
        cu, cv = np.meshgrid(axis, axis, indexing="ij")
        ctrl = np.stack([cu.ravel(), cv.ravel()], axis=1)  # (G^2, 2)
        n = ctrl.shape[0]

        d2 = ((ctrl[:, None, :] - ctrl[None, :, :]) ** 2).sum(-1)
        kern = 0.5 * d2 * np.log(np.maximum(d2, 1e-30))
        p = np.concatenate([np.ones((n, 1)), ctrl], axis=1)
        lhs = np.zeros((n + 3, n + 3))
        lhs[:n, :n] = kern
        lhs[:n, n:] = p
        lhs[n:, :n] = p.T
        rhs = np.concatenate([offsets.reshape(n, 2), np.zeros((3, 2))], axis=0)
        try:
            sol = np.linalg.solve(lhs, rhs)
        except np.linalg.LinAlgError as exc:
            raise TransformError("degenerate TPS system") from exc

        self.grid_size = g
        self.control_offsets = offsets
        self._ctrl = torch.from_numpy(ctrl)
        self._weights = torch.from_numpy(sol[:n])  # (G^2, 2)
        self._affine = torch.from_numpy(sol[n:])  # (3, 2)
        self._check_invertible()

    def _displacement(self, pts: torch.Tensor) -> torch.Tensor:
        ctrl = self._ctrl.to(pts.dtype)
        w = self._weights.to(pts.dtype)
        a = self._affine.to(pts.dtype)
        diff = pts.unsqueeze(-2) - ctrl  # (..., G^2, 2)
        r2 = (diff**2).sum(-1)
        basis = _tps_kernel(r2)  # (..., G^2)
        disp = basis @ w  # (..., 2)
        disp = disp + a[0] + pts[..., :1] * a[1] + pts[..., 1:] * a[2]
        return disp

    def _backward_map(self, pts: torch.Tensor) -> torch.Tensor:
        return pts + self._displacement(pts)

    def _backward_jacobian(self, pts: torch.Tensor) -> torch.Tensor:
        """Jacobian of the backward map at each point, shape (..., 2, 2)."""
        ctrl = self._ctrl.to(pts.dtype)
        w = self._weights.to(pts.dtype)
        a = self._affine.to(pts.dtype)
        diff = pts.unsqueeze(-2) - ctrl  # (..., n, 2)
        r2 = (diff**2).sum(-1, keepdim=True)
        # dU/dp = (log r^2 + 1) * (p - c); the r -> 0 limit is 0.
        g = (torch.log(r2.clamp_min(1e-30)) + 1.0) * diff
        g = torch.where(r2 > 1e-30, g, torch.zeros_like(g))
        # jac[..., d, e] = d f_d / d p_e for the displacement field f.
        jac = torch.einsum("...ne,nd->...de", g, w) + a[1:].T
        return torch.eye(2, dtype=pts.dtype) + jac

    def _check_invertible(self, samples: int = 21, min_det: float = 1e-3):
        axis = torch.linspace(0.0, 1.0, samples, dtype=torch.float64)
        uu, vv = torch.meshgrid(axis, axis, indexing="ij")
        pts = torch.stack([uu.ravel(), vv.ravel()], dim=1)
        det = torch.linalg.det(self._backward_jacobian(pts))
        if (det <= min_det).any():
            raise TransformError(
                "TPS offsets fold the sampling grid (non-invertible warp)"
            )

    def _newton_invert(self, targets: torch.Tensor) -> torch.Tensor:
        y = targets.clone()
        for _ in range(_NEWTON_MAX_ITERS):
            resid = self._backward_map(y) - targets
            if resid.abs().max() < _NEWTON_TOL:
                break
            jac = self._backward_jacobian(y)
            step = torch.linalg.solve(jac, resid.unsqueeze(-1)).squeeze(-1)
            y = y - step
        return y

    def inverse_points(self, points):
        pts, was_numpy = _points_in(points)
        return _points_out(self._backward_map(pts), was_numpy)

    def transform_points(self, points):
        pts, was_numpy = _points_in(points)
        out = _TpsForwardPoints.apply(pts, self)
        return _points_out(out, was_numpy)


class _TpsForwardPoints(torch.autograd.Function):
    """Newton inversion of the backward spline, with implicit-function grad."""

    @staticmethod
    def forward(ctx, points, tps):
        with torch.no_grad():
            y = tps._newton_invert(points.detach().to(torch.float64))
        y = y.to(points.dtype)
        ctx.tps = tps
        ctx.save_for_backward(y)
        return y

    @staticmethod
    def backward(ctx, grad_out):
        (y,) = ctx.saved_tensors
        jac = ctx.tps._backward_jacobian(y.to(torch.float64))
        grad = torch.linalg.solve(
            jac.transpose(-1, -2), grad_out.to(torch.float64).unsqueeze(-1)
        ).squeeze(-1)
        return grad.to(grad_out.dtype), None


class CompositeTransform(SpatialTransform):
    """Applies member transforms left to right (parts[0] first)."""

    kind = "composite"

    def __init__(self, parts):
        parts = list(parts)
        if not parts:
            raise TransformError("composite needs at least one transform")
        self.parts = parts

    def transform_points(self, points):
        out = points
        for t in self.parts:
            out = t.transform_points(out)
        return out

    def inverse_points(self, points):
        out = points
        for t in reversed(self.parts):
            out = t.inverse_points(out)
        return out


def apply_transform_to_points(points, transform: SpatialTransform):
    """Exact parametric forward mapping of an (N, 2) point set."""
    return transform.transform_points(points)


def apply_transform_to_map(maps, transform: SpatialTransform):
    """Inverse-warp a CxHxW stack; returns (warped, valid_mask).

    Each output pixel is bilinearly sampled at the source location the
    inverse transform assigns to it. Pixels whose source falls outside
    the unit square are zero-filled and marked invalid. Differentiable
    w.r.t. the input maps.
    """
    t, was_numpy = _points_in(maps)
    if t.dim() != 3:
        raise ValueError(f"expected CxHxW maps, got shape {tuple(t.shape)}")
    c, h, w = t.shape
    from .geometry import coordinate_grid

    uu, vv = coordinate_grid(h, w, dtype=torch.float64)
    pts = torch.stack([uu, vv], dim=-1).reshape(-1, 2)
    src = transform.inverse_points(pts)
    if isinstance(src, np.ndarray):
        src = torch.from_numpy(src)
    valid = (
        (src[:, 0] >= 0.0)
        & (src[:, 0] <= 1.0)
        & (src[:, 1] >= 0.0)
        & (src[:, 1] <= 1.0)
    ).reshape(h, w)
    # grid_sample expects x (width axis) first, in [-1, 1], align_corners=True
    # matching the i/(n-1) coordinate convention.
    grid = torch.stack([2.0 * src[:, 1] - 1.0, 2.0 * src[:, 0] - 1.0], dim=-1)
    grid = grid.reshape(1, h, w, 2).to(t.dtype)
    warped = F.grid_sample(
        t.unsqueeze(0), grid, mode="bilinear", padding_mode="zeros", align_corners=True
    )[0]
    warped = warped * valid.to(t.dtype)
    if was_numpy:
        return warped.numpy(), valid.numpy()
    return warped, valid


def _rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.maximum(maxc, 1e-12), 0.0)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    safe = np.maximum(delta, 1e-12)
    h = np.where(
        maxc == r, (g - b) / safe, np.where(maxc == g, 2.0 + (b - r) / safe, 4.0 + (r - g) / safe)
    )
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, maxc], axis=-1)


def _hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0).astype(int) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    lut = np.stack(
        [
            np.stack([v, t, p], -1),
            np.stack([q, v, p], -1),
            np.stack([p, v, t], -1),
            np.stack([p, q, v], -1),
            np.stack([t, p, v], -1),
            np.stack([v, p, q], -1),
        ],
        axis=0,
    )
    return np.take_along_axis(lut, i[None, ..., None], axis=0)[0]


@dataclass(frozen=True)
class ColorJitter:
    """Signed fractional appearance perturbation of an RGB image in [0,1].

    Steps with a zero parameter are skipped, so the all-zero jitter is an
    exact no-op. Output is clamped back to [0,1].
    """

    brightness: float = 0.0
    contrast: float = 0.0
    saturation: float = 0.0
    hue: float = 0.0

    def apply(self, image: np.ndarray) -> np.ndarray:
        img = np.asarray(image, dtype=np.float64)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError(f"expected HxWx3 image, got {img.shape}")
        if self.brightness != 0.0:
            img = img * (1.0 + self.brightness)
        if self.contrast != 0.0:
            gray_mean = img.mean()
            img = gray_mean + (img - gray_mean) * (1.0 + self.contrast)
        if self.saturation != 0.0:
            gray = img.mean(axis=2, keepdims=True)
            img = gray + (img - gray) * (1.0 + self.saturation)
        if self.hue != 0.0:
            hsv = _rgb_to_hsv(np.clip(img, 0.0, 1.0))
            hsv[..., 0] = (hsv[..., 0] + self.hue) % 1.0
            img = _hsv_to_rgb(hsv)
        return np.clip(img, 0.0, 1.0)


@dataclass(frozen=True)
class TransformRanges:
    """Sampling ranges for the random spatial transform."""

    rotation_deg: float = 60.0
    shift_frac: float = 0.2
    scale_min: float = 0.3
    scale_max: float = 2.0
    tps_grid: int = 5
    tps_shift_frac: float = 0.1

    def validate(self):
        if self.rotation_deg < 0 or self.shift_frac < 0 or self.tps_shift_frac < 0:
            raise ValueError("transform ranges must be non-negative")
        if self.scale_min <= 0 or self.scale_max <= 0:
            raise ValueError("scale range must be positive")
        if self.scale_min > self.scale_max:
            raise ValueError(
                f"degenerate scale range [{self.scale_min}, {self.scale_max}]"
            )
        if self.tps_shift_frac > 0 and self.tps_grid < 2:
            raise ValueError("TPS grid must be at least 2 when TPS shifts are enabled")


@dataclass(frozen=True)
class JitterRanges:
    """Sampling ranges for the random color jitter."""

    brightness: float = 0.3
    contrast: float = 0.3
    saturation: float = 0.2
    hue: float = 0.2

    def validate(self):
        if min(self.brightness, self.contrast, self.saturation, self.hue) < 0:
            raise ValueError("jitter ranges must be non-negative")


def sample_transform(
    rng: np.random.Generator,
    ranges: TransformRanges = TransformRanges(),
    jitter: JitterRanges = JitterRanges(),
):
    """Draw a random (SpatialTransform, ColorJitter) pair within the ranges.

    Deterministic for a given generator state. TPS offsets that fold the
    grid are resampled (rare in range); sampling order is fixed so a seed
    pins the parameter vector bitwise.
    """
    ranges.validate()
    jitter.validate()
    rot = math.radians(rng.uniform(-ranges.rotation_deg, ranges.rotation_deg))
    scale = rng.uniform(ranges.scale_min, ranges.scale_max)
    shift = rng.uniform(-ranges.shift_frac, ranges.shift_frac, size=2)
    sim = SimilarityTransform(rotation=rot, scale=scale, translation=(shift[0], shift[1]))

    spatial: SpatialTransform = sim
    if ranges.tps_shift_frac > 0 and ranges.tps_grid >= 2:
        for _ in range(100):
            offs = rng.uniform(
                -ranges.tps_shift_frac,
                ranges.tps_shift_frac,
                size=(ranges.tps_grid, ranges.tps_grid, 2),
            )
            try:
                tps = TpsTransform(offs)
                break
            except TransformError:
                continue
        else:
            raise TransformError("could not sample an invertible TPS in 100 tries")
        spatial = CompositeTransform([sim, tps])

    cj = ColorJitter(
        brightness=rng.uniform(-jitter.brightness, jitter.brightness),
        contrast=rng.uniform(-jitter.contrast, jitter.contrast),
        saturation=rng.uniform(-jitter.saturation, jitter.saturation),
        hue=rng.uniform(-jitter.hue, jitter.hue),
    )
    return spatial, cj
