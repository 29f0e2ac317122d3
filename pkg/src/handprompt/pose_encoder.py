"""Convolutional pyramid, per-axis lixel logits, joint decoding and pose embeddings."""
import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .domain import NUM_JOINTS
from .errors import DegenerateGeometry, ShapeMismatch


def _padding_for(n_in, n_out, stride, k=3):
    for p in range(k + 1):
        if (n_in + 2 * p - k) // stride + 1 == n_out:
            return p
    raise ValueError(f"no padding maps {n_in} -> {n_out} with stride {stride}")


def _conv_bn(c_in, c_out, stride=1, padding=1):
    return [nn.Conv2d(c_in, c_out, 3, stride=stride, padding=padding, bias=False),
            nn.BatchNorm2d(c_out), nn.ReLU()]


class Upsample2x(nn.Module):
    """Stride-2 learned upsampling: nearest x2 then a 3x3 conv (replicate padding).

    Equivalent to a kernel-4/stride-2 transposed convolution with parity-tied
    weights; it maps constant inputs to constant outputs (no checkerboard).
    """

    def __init__(self, c_in, c_out, dim=2):
        super().__init__()
        conv = nn.Conv2d if dim == 2 else nn.Conv1d
        self.conv = conv(c_in, c_out, 3, padding=1, padding_mode="replicate")

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2, mode="nearest"))


class AxisHead(nn.Module):
    """(B, C, n) collapsed stream -> (B, 21, L) logits."""

    def __init__(self, channels, n_in, length):
        super().__init__()
        self.length = length
        ups = max(0, math.ceil(math.log2(length / n_in)))
        self.up = nn.ModuleList(Upsample2x(channels, channels, dim=1) for _ in range(ups))
        self.out = nn.Conv1d(channels, NUM_JOINTS, 3, padding=1, padding_mode="replicate")

    def forward(self, x):
        for up in self.up:
            x = F.relu(up(x))
        if x.shape[-1] != self.length:
            x = F.interpolate(x, size=self.length, mode="linear", align_corners=False)
        return self.out(x)


class DepthHead(nn.Module):
    """Flattened spatial stream -> depth logits through a multi-layer 1D stack."""

    def __init__(self, channels, n_in, length):
        super().__init__()
        self.resample = nn.Linear(n_in, length)
        self.conv1 = nn.Conv1d(channels, channels, 3, padding=1, padding_mode="replicate")
        self.conv2 = nn.Conv1d(channels, NUM_JOINTS, 3, padding=1, padding_mode="replicate")

    def forward(self, x):
        x = F.relu(self.resample(x))
        return self.conv2(F.relu(self.conv1(x)))


class PoseEncoder(nn.Module):
    def __init__(self, preset, convs_per_stage=None):
        super().__init__()
        self.preset = preset
        if convs_per_stage is None:
            convs_per_stage = 1 if preset.name == "paper" else 2
        L = preset.heatmap_resolution
        shapes = preset.pyramid

        stem, c, n = [], 3, preset.image_size
        while n > shapes[0][1]:
            stem += _conv_bn(c, shapes[0][0], stride=2)
            c, n = shapes[0][0], (n + 1) // 2
        if n != shapes[0][1]:
            raise ValueError("image size incompatible with f0 size")
        self.stem = nn.Sequential(*stem)

        self.stages = nn.ModuleList()
        for (c_in, n_in, _), (c_out, n_out, _) in zip(shapes, shapes[1:]):
            stride = max(1, round(n_in / n_out))
            layers = _conv_bn(c_in, c_out, stride, _padding_for(n_in, n_out, stride))
            for _ in range(convs_per_stage - 1):
                layers += _conv_bn(c_out, c_out)
            self.stages.append(nn.Sequential(*layers))

        c4, h4, w4 = shapes[-1]
        cl = preset.lixel_channels
        self.deconv = Upsample2x(c4, cl)
        self.head_x = AxisHead(cl, 2 * w4, L)
        self.head_y = AxisHead(cl, 2 * h4, L)
        self.head_z = DepthHead(cl, 4 * h4 * w4, L)
        self.pool = nn.ModuleList(nn.Linear(NUM_JOINTS * L, preset.embed_dim) for _ in range(3))
        # He init keeps activations from fading through the ReLU stack
        for mod in self.modules():
            if isinstance(mod, (nn.Conv1d, nn.Conv2d)):
                nn.init.kaiming_normal_(mod.weight, nonlinearity="relu")
                if mod.bias is not None:
                    nn.init.zeros_(mod.bias)

    def encode_image(self, images):
        """(B, H, W, 3) images -> [f0, f1, f2, f3, f4] channel-major tensors."""
        if images.dim() == 3:
            images = images.unsqueeze(0)
        if tuple(images.shape[1:]) != self.preset.image_shape:
            raise ShapeMismatch(f"bad image shape {tuple(images.shape[1:])}")
        x = self.stem(images.permute(0, 3, 1, 2))
        feats = [x]
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats

    def collapse(self, f4):
        """Deconvolve f4 and unfold it into the x, y and z streams."""
        fl = F.relu(self.deconv(f4))
        return fl.mean(dim=2), fl.mean(dim=3), fl.flatten(2)

    def lixel_features(self, f4):
        sx, sy, sz = self.collapse(f4)
        return self.head_x(sx), self.head_y(sy), self.head_z(sz)

    def pool_embeddings(self, lixels, normalize=True):
        """Per-axis (B, 21, L) logits -> (B, E) embeddings."""
        out = []
        for proj, lx in zip(self.pool, lixels):
            e = proj(lx.flatten(1))
            if normalize:
                norm = e.norm(dim=-1, keepdim=True)
                if bool((norm == 0).any()):
                    raise DegenerateGeometry("degenerate embedding")
                e = e / norm
            out.append(e)
        return tuple(out)

    def forward(self, images):
        pyramid = self.encode_image(images)
        lixels = self.lixel_features(pyramid[-1])
        return pyramid, lixels


def stack_lixels(lixels):
    """(hx, hy, hz) each (..., 21, L) -> (..., 21, 3, L)."""
    return torch.stack(tuple(torch.as_tensor(h) for h in lixels), dim=-2)


def decode_joints_soft(lixels):
    """Expected bin index under the per-joint softmax; differentiable."""
    logits = stack_lixels(lixels)
    bins = torch.arange(logits.shape[-1], dtype=logits.dtype)
    return (logits.softmax(-1) * bins).sum(-1)


def decode_joints_hard(lixels):
    """Index of the maximum response per joint and axis; ties resolve to the lowest index."""
    logits = stack_lixels(lixels)
    # softmax is monotone, so the raw-logit argmax is the softmax argmax
    return logits.detach().cpu().numpy().argmax(-1).astype(np.float64)
