"""Pose and mesh evaluation measures: PJPE, Procrustes alignment, PCK/AUC, F-score."""
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateGeometry, HandPromptError, ShapeMismatch


@dataclass
class MetricReport:
    pjpe: float
    median_pjpe: float
    pa_pjpe: float
    auc: float
    f_near: float
    f_far: float
    pck_curve: list = field(default_factory=list)
    pvpe: float = float("nan")
    pa_pvpe: float = float("nan")
    retrieval: dict = field(default_factory=dict)
    units: str = "bins"

    def as_dict(self):
        return asdict(self)


def _pair(pred, gt):
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return pred, gt


def point_errors(pred, gt):
    pred, gt = _pair(pred, gt)
    return np.linalg.norm(pred - gt, axis=-1)


def pjpe(pred, gt):
    """(mean, median) Euclidean error over all points."""
    err = point_errors(pred, gt)
    return float(err.mean()), float(np.median(err))


def procrustes_align(pred, gt):
    """Similarity transform of ``pred`` (N, 3) minimising squared distance to ``gt``."""
    pred, gt = _pair(pred, gt)
    mu_p, mu_g = pred.mean(0), gt.mean(0)
    x, y = pred - mu_p, gt - mu_g
    var_x = (x**2).sum()
    if len(pred) < 3 or np.linalg.matrix_rank(x, tol=1e-9 * max(1.0, np.sqrt(var_x))) < 2:
        raise DegenerateGeometry("degenerate alignment")
    u, s, vt = np.linalg.svd(x.T @ y)
    d = np.sign(np.linalg.det(u @ vt))
    flip = np.diag([1.0, 1.0, d])
    r = u @ flip @ vt
    scale = (s * np.diag(flip)).sum() / var_x
    return scale * x @ r + mu_g


def pa_pjpe(pred, gt):
    return float(point_errors(procrustes_align(pred, gt), gt).mean())


def pck_auc(errors, t_min=0.0, t_max=30.0, steps=31):
    """PCK at evenly spaced thresholds and the trapezoid AUC normalised to [0, 1]."""
    errors = np.asarray(errors, dtype=np.float64).ravel()
    if errors.size == 0:
        raise HandPromptError("empty error list")
    if not t_max > t_min >= 0 or steps < 2:
        raise HandPromptError("need t_max > t_min >= 0 and steps >= 2")
    thresholds = np.linspace(t_min, t_max, steps)
    pck = (errors[None, :] <= thresholds[:, None]).mean(1)
    auc = np.trapezoid(pck, thresholds) / (t_max - t_min)
    return list(zip(thresholds.tolist(), pck.tolist())), float(auc)


def f_score(pred_cloud, gt_cloud, threshold):
    pred_cloud = np.asarray(pred_cloud, dtype=np.float64)
    gt_cloud = np.asarray(gt_cloud, dtype=np.float64)
    if len(pred_cloud) == 0 or len(gt_cloud) == 0:
        raise HandPromptError("empty cloud")
    d_pred, _ = cKDTree(gt_cloud).query(pred_cloud)
    d_gt, _ = cKDTree(pred_cloud).query(gt_cloud)
    precision = (d_pred <= threshold).mean()
    recall = (d_gt <= threshold).mean()
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))
