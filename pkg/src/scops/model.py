"""Part segmentation networks, response normalization, and argmax labels.

A segmentation network maps a [B,3,H,W] image batch to [B,K+1,H,W]
per-pixel distributions over K parts plus background (channel 0), with
score maps bilinearly upsampled to the input size before the softmax.
"""
from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

BACKGROUND_LEVEL = 0.1


class SizingError(ValueError):
    """Input spatial size below the network's minimum."""


class SegmentationNetwork(nn.Module):
    """Base FCN contract: subclasses emit logits via score_maps()."""

    min_input_size = 8
    output_stride = 1

    def __init__(self, part_count: int):
        super().__init__()
        if part_count < 1:
            raise ValueError(f"need at least one part, got {part_count}")
        self.part_count = part_count

    def score_maps(self, x: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"expected [B,3,H,W] input, got {tuple(x.shape)}")
        h, w = x.shape[2], x.shape[3]
        if h < self.min_input_size or w < self.min_input_size:
            raise SizingError(
                f"input {h}x{w} below minimum {self.min_input_size} for {type(self).__name__}"
            )
        logits = self.score_maps(x)
        if logits.shape[2:] != (h, w):
            logits = F.interpolate(
                logits, size=(h, w), mode="bilinear", align_corners=False
            )
        return torch.softmax(logits, dim=1)


class TinyConvNet(SegmentationNetwork):
    """Small 4-layer FCN used for CPU tests and the synthetic suite."""

    min_input_size = 8
    output_stride = 2

    def __init__(self, part_count: int, width: int = 32):
        super().__init__(part_count)
        self.width = width
        self.body = nn.Sequential(
            nn.Conv2d(3, width, 3, padding=1),
            nn.GroupNorm(4, width),
            nn.ReLU(inplace=True),
            nn.Conv2d(width, 2 * width, 3, stride=2, padding=1),
            nn.GroupNorm(4, 2 * width),
            nn.ReLU(inplace=True),
            nn.Conv2d(2 * width, 2 * width, 3, padding=2, dilation=2),
            nn.GroupNorm(4, 2 * width),
            nn.ReLU(inplace=True),
        )
        self.head = nn.Conv2d(2 * width, part_count + 1, 1)
        # Start with the background logit low: the early semantic-loss
        # gradient is dominated by background pixels and a saturated
        # softmax cannot recover foreground channels afterwards.
        with torch.no_grad():
            self.head.bias[0] = -2.0

    def score_maps(self, x):
        return self.head(self.body(x))


class AtrousResNet50(SegmentationNetwork):
    """Dilated ResNet50 backbone with a multi-dilation classifier head.

    The reference architecture for training on real collections; weights
    for the backbone can be loaded from a local torchvision state dict.
    Without a weights path the backbone is randomly initialized (useful
    only for plumbing tests, and warned about).
    """

    min_input_size = 32
    output_stride = 8

    def __init__(self, part_count: int, weights_path: str | None = None):
        super().__init__(part_count)
        from torchvision.models import resnet50

        net = resnet50(weights=None, replace_stride_with_dilation=[False, True, True])
        if weights_path is not None:
            state = torch.load(weights_path, map_location="cpu", weights_only=True)
            net.load_state_dict(state)
        self.backbone = nn.Sequential(
            net.conv1, net.bn1, net.relu, net.maxpool,
            net.layer1, net.layer2, net.layer3, net.layer4,
        )
        self.heads = nn.ModuleList(
            [nn.Conv2d(2048, part_count + 1, 3, padding=d, dilation=d) for d in (6, 12, 18, 24)]
        )

    def score_maps(self, x):
        feats = self.backbone(x)
        out = self.heads[0](feats)
        for head in self.heads[1:]:
            out = out + head(feats)
        return out


MODEL_REGISTRY = {
    "tiny": TinyConvNet,
    "atrous_resnet50": AtrousResNet50,
}


def build_model(arch: str, part_count: int, **kwargs) -> SegmentationNetwork:
    if arch not in MODEL_REGISTRY:
        raise ValueError(f"unknown architecture {arch!r}; have {sorted(MODEL_REGISTRY)}")
    return MODEL_REGISTRY[arch](part_count, **kwargs)


def normalize_responses(responses: torch.Tensor) -> torch.Tensor:
    """Rescale each foreground channel to peak 1; background becomes 0.1.

    Channels that are identically zero are left at zero instead of being
    divided. Accepts [K+1,H,W] or [B,K+1,H,W].
    """
    single = responses.dim() == 3
    r = responses.unsqueeze(0) if single else responses
    if r.dim() != 4:
        raise ValueError(f"expected (B,)K+1,H,W responses, got {tuple(responses.shape)}")
    fg = r[:, 1:]
    peak = fg.amax(dim=(2, 3), keepdim=True)
    scaled = torch.where(peak > 0, fg / peak.clamp_min(1e-30), fg)
    bg = torch.full_like(r[:, :1], BACKGROUND_LEVEL)
    out = torch.cat([bg, scaled], dim=1)
    return out[0] if single else out


def segment(normalized) -> np.ndarray:
    """Per-pixel argmax labels; ties go to the lowest channel index."""
    if isinstance(normalized, torch.Tensor):
        arr = normalized.detach().cpu().numpy()
    else:
        arr = np.asarray(normalized)
    if arr.ndim == 3:
        return np.argmax(arr, axis=0).astype(np.int64)
    if arr.ndim == 4:
        return np.argmax(arr, axis=1).astype(np.int64)
    raise ValueError(f"expected (B,)K+1,H,W responses, got {arr.shape}")
