"""Pose-text logit matrices and the symmetric contrastive loss."""
import math
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ShapeMismatch

TAU_INIT = 1.0 / 0.07
TAU_MAX = 100.0
AXIS_MATRICES = ("m_lr", "m_tb", "m_nf")


class Temperatures(nn.Module):
    """Learnable log-temperatures, one per axis; exp is clamped to TAU_MAX."""

    def __init__(self, init=TAU_INIT):
        super().__init__()
        self.log_tau = nn.Parameter(torch.full((3,), math.log(init)))

    def forward(self):
        return self.log_tau.clamp(max=math.log(TAU_MAX)).exp()


def logit_matrix(pose, text, taus):
    """Three (B, B) matrices ``tau * pose_i . text_j`` for unit-norm embeddings.

    ``pose`` and ``text`` are (px, py, pz) / (fx, fy, fz) tuples of (B, E) tensors.
    """
    out = []
    for p, t, tau in zip(pose, text, taus):
        if p.shape != t.shape:
            raise ShapeMismatch(f"batch mismatch: {tuple(p.shape)} vs {tuple(t.shape)}")
        out.append(tau * p @ t.T)
    return tuple(out)


def clip_loss_axis(m):
    if m.dim() != 2 or m.shape[0] != m.shape[1]:
        raise ShapeMismatch(f"batch mismatch: logit matrix of shape {tuple(m.shape)}")
    labels = torch.arange(m.shape[0])
    return 0.5 * (F.cross_entropy(m, labels) + F.cross_entropy(m.T, labels))


def clip_loss(matrices):
    """Mean over axes of the symmetric (row + column) cross-entropy, each halved."""
    return sum(clip_loss_axis(m) for m in matrices) / len(matrices)


def retrieval_top1(m):
    """Fraction of rows whose argmax is the diagonal entry."""
    m = torch.as_tensor(m)
    return (m.argmax(dim=1) == torch.arange(m.shape[0])).double().mean().item()


def export_matrices(matrices, out_dir, prefix="logits", pgm=False):
    """Write each matrix as CSV (six significant digits), optionally as an 8-bit PGM."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, m in zip(AXIS_MATRICES, matrices):
        m = np.asarray(torch.as_tensor(m).detach().cpu(), dtype=np.float64)
        path = out_dir / f"{prefix}_{name}.csv"
        np.savetxt(path, m, fmt="%.6g", delimiter=",")
        paths.append(path)
        if pgm:
            lo, hi = m.min(), m.max()
            scaled = np.zeros_like(m) if hi == lo else (m - lo) / (hi - lo)
            img = np.round(scaled * 255).astype(np.uint8)
            pgm_path = out_dir / f"{prefix}_{name}.pgm"
            header = f"P5\n{m.shape[1]} {m.shape[0]}\n255\n".encode()
            pgm_path.write_bytes(header + img.tobytes())
            paths.append(pgm_path)
    return paths


def read_matrix(path):
    return np.atleast_2d(np.loadtxt(path, delimiter=","))
