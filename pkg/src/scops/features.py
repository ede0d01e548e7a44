"""Frozen feature providers and saliency ingestion.

Feature maps are non-negative C x H x W grids at image resolution; the
provider is frozen, so no gradients ever reach it. Saliency maps are
precomputed offline and read from disk as grayscale images.
"""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

log = logging.getLogger(__name__)

# relu5_2 / relu5_4 activation indices in the torchvision VGG-19 feature stack.
_VGG19_TAP_INDICES = (31, 35)

VGG19_WEIGHTS_URL = "https://download.pytorch.org/models/vgg19-dcbb9e9d.pth"


class FeatureProviderError(RuntimeError):
    pass


def _image_to_tensor(image) -> torch.Tensor:
    """Accept HxWx3 arrays or [3,H,W] tensors; return float32 [3,H,W]."""
    if isinstance(image, torch.Tensor):
        t = image.detach().to(torch.float32)
        if t.dim() == 3 and t.shape[0] == 3:
            return t
        raise ValueError(f"expected [3,H,W] tensor, got {tuple(image.shape)}")
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got {arr.shape}")
    return torch.from_numpy(arr).permute(2, 0, 1).contiguous()


class SyntheticFeatureProvider:
    """Deterministic 8-channel provider for the CPU test suite.

    Channels: the 3 color planes, 2 coordinate ramps, and 3 rectified
    fixed random projections of the color planes. Everything is
    non-negative and reproducible, with no pretrained weights involved.
    """

    name = "synthetic"
    channels = 8

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed)
        self._projection = torch.from_numpy(
            rng.normal(size=(3, 3)).astype(np.float32)
        )

    def extract(self, image) -> torch.Tensor:
        x = _image_to_tensor(image)
        _, h, w = x.shape
        uu = torch.linspace(0.0, 1.0, h).view(h, 1).expand(h, w) if h > 1 else torch.zeros(h, w)
        vv = torch.linspace(0.0, 1.0, w).view(1, w).expand(h, w) if w > 1 else torch.zeros(h, w)
        proj = torch.einsum("pc,chw->phw", self._projection, x)
        feats = torch.cat(
            [x, uu.unsqueeze(0), vv.unsqueeze(0), torch.relu(proj)], dim=0
        )
        return feats.detach()


class VggFeatureProvider:
    """relu5_2 and relu5_4 of VGG-19, concatenated and upsampled (C=1024).

    Weights must be provided as a local torchvision state dict; passing
    ``weights_path=None`` builds a randomly initialized backbone, which is
    only good for plumbing tests and logs a warning.
    """

    name = "vgg19"
    channels = 1024

    def __init__(self, weights_path: str | None = None):
        from torchvision.models import vgg19

        net = vgg19(weights=None)
        if weights_path is not None:
            path = Path(weights_path)
            if not path.exists():
                raise FeatureProviderError(
                    f"VGG-19 weights not found at {path}; download the torchvision "
                    f"checkpoint from {VGG19_WEIGHTS_URL} and point features.weights_path at it"
                )
            state = torch.load(path, map_location="cpu", weights_only=True)
            net.load_state_dict(state)
        else:
            log.warning("VGG-19 provider built without pretrained weights")
        cut = max(_VGG19_TAP_INDICES) + 1
        self._features = net.features[:cut].eval()
        for p in self._features.parameters():
            p.requires_grad_(False)
        # ImageNet normalization of the [0,1] inputs.
        self._mean = torch.tensor([0.485, 0.456, 0.406]).view(3, 1, 1)
        self._std = torch.tensor([0.229, 0.224, 0.225]).view(3, 1, 1)

    def extract(self, image) -> torch.Tensor:
        x = _image_to_tensor(image)
        _, h, w = x.shape
        x = ((x - self._mean) / self._std).unsqueeze(0)
        taps = []
        with torch.no_grad():
            out = x
            for idx, layer in enumerate(self._features):
                out = layer(out)
                if idx in _VGG19_TAP_INDICES:
                    taps.append(out)
        feats = torch.cat(taps, dim=1)
        feats = torch.relu(feats)
        feats = F.interpolate(feats, size=(h, w), mode="bilinear", align_corners=False)
        return feats[0].detach()


PROVIDER_REGISTRY = {
    "synthetic": SyntheticFeatureProvider,
    "vgg19": VggFeatureProvider,
}


def build_provider(name: str, **kwargs):
    if name not in PROVIDER_REGISTRY:
        raise FeatureProviderError(
            f"unknown feature provider {name!r}; have {sorted(PROVIDER_REGISTRY)}"
        )
    return PROVIDER_REGISTRY[name](**kwargs)


def mask_features(features: torch.Tensor, saliency: torch.Tensor) -> torch.Tensor:
    """Per-pixel scalar soft-mask broadcast across feature channels."""
    if features.dim() != 3:
        raise ValueError(f"expected CxHxW features, got {tuple(features.shape)}")
    if saliency.shape != features.shape[1:]:
        raise ValueError(
            f"saliency size {tuple(saliency.shape)} does not match feature grid "
            f"{tuple(features.shape[1:])}"
        )
    return features * saliency.unsqueeze(0)


def load_saliency(path, size: tuple[int, int] | None = None, policy: str = "error") -> torch.Tensor:
    """Read a grayscale saliency image, scale to [0,1], resize bilinearly.

    ``policy`` controls missing files: "error" raises, "ones" substitutes
    an all-foreground prior with a warning.
    """
    if policy not in ("error", "ones"):
        raise ValueError(f"unknown saliency policy {policy!r}")
    path = Path(path)
    if not path.exists():
        if policy == "error":
            raise FileNotFoundError(f"saliency map missing: {path}")
        log.warning("saliency map missing (%s); falling back to all-ones", path)
        if size is None:
            raise ValueError("size is required for the all-ones fallback")
        return torch.ones(size)
    img = Image.open(path).convert("L")
    if size is not None:
        img = img.resize((size[1], size[0]), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return torch.from_numpy(np.clip(arr, 0.0, 1.0))
