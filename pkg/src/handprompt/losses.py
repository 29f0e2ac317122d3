"""Training objectives: supervised L1, normal/edge, cross-view consistency, weighted total.

Per-sample reductions are sums over joints/vertices/faces; a leading batch
dimension, when present, is averaged.
"""
from dataclasses import asdict, dataclass

import torch

from .errors import DegenerateGeometry, HandPromptError, ShapeMismatch

TERMS = ("l_p", "l_v", "l_n", "l_e", "l_c2d", "l_c3d", "l_clip")


@dataclass(frozen=True)
class LossWeights:
    a1: float = 1.0
    a2: float = 0.05
    a3: float = 0.1
    a4: float = 0.1


@dataclass
class LossReport:
    l_p: float = 0.0
    l_v: float = 0.0
    l_n: float = 0.0
    l_e: float = 0.0
    l_c2d: float = 0.0
    l_c3d: float = 0.0
    l_clip: float = 0.0
    total: float = 0.0

    def as_dict(self):
        return asdict(self)


def _batch_mean(per_sample):
    return per_sample.mean() if per_sample.dim() else per_sample


def _check_same(pred, gt):
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")


def pose_loss(pred, gt):
    """Sum over joints of the L1 norm of the 3-vector error."""
    pred, gt = torch.as_tensor(pred), torch.as_tensor(gt)
    _check_same(pred, gt)
    return _batch_mean((pred - gt).abs().sum(dim=(-2, -1)))


vertex_loss = pose_loss


def _edges(verts, faces):
    # (..., F, 3 edges, 3 coords): directed edges (0,1), (1,2), (2,0) per face
    a = verts[..., faces, :]
    return a - a.roll(-1, dims=-2)


def face_normals(verts, faces, eps=1e-12):
    a = verts[..., faces, :]
    n = torch.linalg.cross(a[..., 1, :] - a[..., 0, :], a[..., 2, :] - a[..., 0, :], dim=-1)
    return n / n.norm(dim=-1, keepdim=True).clamp_min(eps)


def normal_loss(pred, gt, faces):
    """Sum over faces and their edges of |unit(pred edge) . gt face normal|."""
    pred, gt = torch.as_tensor(pred), torch.as_tensor(gt)
    _check_same(pred, gt)
    faces = torch.as_tensor(faces, dtype=torch.long)
    e = _edges(pred, faces)
    length = e.norm(dim=-1, keepdim=True)
    if bool((length == 0).any()):
        raise DegenerateGeometry("degenerate edge")
    n = face_normals(gt, faces).detach().unsqueeze(-2)
    return _batch_mean(((e / length) * n).sum(-1).abs().sum(dim=(-2, -1)))


def edge_loss(pred, gt, faces):
    """Sum over faces and their edges of |pred edge length - gt edge length|."""
    pred, gt = torch.as_tensor(pred), torch.as_tensor(gt)
    _check_same(pred, gt)
    faces = torch.as_tensor(faces, dtype=torch.long)
    diff = _edges(pred, faces).norm(dim=-1) - _edges(gt, faces).norm(dim=-1)
    return _batch_mean(diff.abs().sum(dim=(-2, -1)))


def apply_affine(aff, pts):
    """(..., 2, 3) affine applied to (..., N, 2) points."""
    return pts @ aff[..., :2].transpose(-1, -2) + aff[..., 2].unsqueeze(-2)


def apply_view_transform(aff, pts):
    """View-1 -> view-2 map of uvd points: uv through ``aff``, depth unchanged."""
    uv = apply_affine(aff, pts[..., :2])
    return torch.cat([uv, pts[..., 2:]], dim=-1)


def consistency_terms(aff, pose1_2d, pose2_2d, verts1, verts2):
    """(l_c2d, l_c3d) from batched affine matrices and paired predictions."""
    aff = torch.as_tensor(aff)
    l2d = (apply_affine(aff.to(pose1_2d.dtype), pose1_2d) - pose2_2d).abs().sum(dim=(-2, -1))
    l3d = (apply_view_transform(aff.to(verts1.dtype), verts1) - verts2).abs().sum(dim=(-2, -1))
    return _batch_mean(l2d), _batch_mean(l3d)


def consistency_losses(pair, pred1_pose2d, pred2_pose2d, pred1_verts, pred2_verts):
    return consistency_terms(torch.as_tensor(pair.aff), torch.as_tensor(pred1_pose2d),
                             torch.as_tensor(pred2_pose2d), torch.as_tensor(pred1_verts),
                             torch.as_tensor(pred2_verts))


def total_loss(terms, weights=LossWeights()):
    """a1 (l_p + l_v) + a2 (l_n + l_e) + a3 (l_c2d + l_c3d) + a4 l_clip."""
    t = {k: terms.get(k, 0.0) if isinstance(terms, dict) else getattr(terms, k) for k in TERMS}
    for k, v in t.items():
        value = float(v.detach()) if torch.is_tensor(v) else float(v)
        if value < 0:
            raise HandPromptError(f"invalid loss term {k}={value}", code="invalid_loss")
    return (weights.a1 * (t["l_p"] + t["l_v"]) + weights.a2 * (t["l_n"] + t["l_e"])
            + weights.a3 * (t["l_c2d"] + t["l_c3d"]) + weights.a4 * t["l_clip"])
