"""Deterministic synthetic hands: forward kinematics, blob rendering, paired views, dataset files."""
import colorsys
import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from scipy.spatial.transform import Rotation

from .domain import FINGERS, NUM_JOINTS, PARENTS, RunPreset, check_pose, get_preset
from .errors import AugmentationFailed, HandPromptError
from .topology import icosphere_topology

BLOB_SIGMA_PX = 2.0
SPEC_SEED = 1234


@dataclass(frozen=True)
class SkeletonSpec:
    """Bone hierarchy plus length/angle ranges; lengths are in canonical hand units
    and converted to bins by the projection scale."""

    parents: tuple = PARENTS
    # (lo, hi) per finger for the palm bone and the three phalanges
    palm_length: tuple = ((0.80, 0.95), (0.85, 1.0), (0.85, 1.0), (0.80, 0.95), (0.75, 0.9))
    phalanx_length: tuple = ((0.40, 0.50), (0.25, 0.33), (0.18, 0.24))
    # degrees: MCP flexion, PIP flexion, DIP flexion, MCP abduction
    mcp_flex: tuple = (-15.0, 80.0)
    pip_flex: tuple = (0.0, 100.0)
    dip_flex: tuple = (0.0, 70.0)
    abduction: tuple = (-15.0, 15.0)
    # fraction of the frame occupied by the hand's bounding radius
    radius_fraction: tuple = (0.30, 0.37)
    center_jitter: float = 0.04
    seed: int = SPEC_SEED

    def __post_init__(self):
        p = self.parents
        if len(p) != NUM_JOINTS or p[0] != -1 or any(not 0 <= p[j] < j for j in range(1, NUM_JOINTS)):
            raise HandPromptError("skeleton hierarchy must be a tree rooted at the wrist")
        lengths = np.array(self.palm_length + self.phalanx_length)
        if np.any(lengths <= 0):
            raise HandPromptError("bone lengths must be positive")


@dataclass
class HandSample:
    image: np.ndarray
    pose_gt: np.ndarray
    verts_gt: np.ndarray
    sample_id: int = 0
    seed: int = 0


@dataclass
class AugmentedPair:
    view1: HandSample
    view2: HandSample
    # maps view-1 uv (bins) to view-2 uv
    aff: np.ndarray
    # in-plane rotation lifted to 3D; depth axis fixed
    rot: np.ndarray
    scale: float = 1.0

    def transform_points(self, pts):
        return apply_pair_transform(self.aff, pts)


def apply_pair_transform(aff, pts):
    """uvd points (..., N, 3) through (..., 2, 3) affines on uv; depth unchanged."""
    aff = np.asarray(aff, dtype=np.float64)
    pts = np.asarray(pts, dtype=np.float64)
    out = pts.copy()
    out[..., :2] = pts[..., :2] @ np.swapaxes(aff[..., :2], -1, -2) + aff[..., None, :, 2]
    return out


# finger base directions (degrees from the palm axis) and lateral offsets
_SPREAD = {"thumb": 50.0, "index": 10.0, "middle": 0.0, "ring": -9.0, "little": -18.0}
_OFFSET = {"thumb": 0.35, "index": 0.28, "middle": 0.05, "ring": -0.17, "little": -0.36}


def _rotate(v, axis, deg):
    return Rotation.from_rotvec(np.radians(deg) * axis).apply(v)


def forward_kinematics(rng, spec=SkeletonSpec()):
    """Joint positions (21, 3) in canonical hand units; wrist at the origin."""
    joints = np.zeros((NUM_JOINTS, 3))
    normal = np.array([0.0, 0.0, 1.0])
    for f, name in enumerate(FINGERS):
        base = 1 + 4 * f
        spread = np.radians(_SPREAD[name])
        palm_dir = np.array([np.sin(spread), np.cos(spread), 0.0])
        palm_len = rng.uniform(*spec.palm_length[f]) * (0.45 if name == "thumb" else 1.0)
        joints[base] = palm_len * palm_dir + np.array([_OFFSET[name] * 0.3, 0.0, 0.0])
        direction = palm_dir.copy()
        axis = np.cross(direction, normal)
        axis /= np.linalg.norm(axis)
        if name == "thumb":
            # thumb flexes across the palm, roughly about its own long axis tilt
            axis = _rotate(axis, direction, 60.0)
        abd = rng.uniform(*spec.abduction)
        direction = _rotate(direction, normal, abd)
        axis = _rotate(axis, normal, abd)
        flexes = (rng.uniform(*spec.mcp_flex), rng.uniform(*spec.pip_flex), rng.uniform(*spec.dip_flex))
        for s in range(3):
            direction = _rotate(direction, axis, flexes[s])
            length = rng.uniform(*spec.phalanx_length[s]) * (1.1 if name == "thumb" else 1.0)
            joints[base + s + 1] = joints[base + s] + length * direction
    return joints


def rest_pose():
    """Mid-range canonical joint positions, used to anchor the vertex blend."""
    spec = SkeletonSpec()
    mid = lambda r: (r[0] + r[1]) / 2
    flat = SkeletonSpec(
        palm_length=tuple((mid(r), mid(r)) for r in spec.palm_length),
        phalanx_length=tuple((mid(r), mid(r)) for r in spec.phalanx_length),
        mcp_flex=(20.0, 20.0), pip_flex=(20.0, 20.0), dip_flex=(10.0, 10.0), abduction=(0.0, 0.0),
    )
    return forward_kinematics(np.random.default_rng(0), flat)


@lru_cache(maxsize=8)
def blend_matrix(num_vertices, seed=SPEC_SEED, sharpness=6.0):
    """Fixed row-stochastic (num_vertices, 21) map from joints to ground-truth vertices.

    Each vertex blends the joints whose rest-pose direction (from the rest
    centroid) is closest to the vertex's direction on a unit sphere, so
    neighbouring sphere vertices get similar weights.
    """
    rng = np.random.default_rng(seed)
    desk = icosphere_topology(4)
    if num_vertices == desk.num_vertices:
        dirs = desk.positions[-1]
    else:
        dirs = rng.normal(size=(num_vertices, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    rest = rest_pose()
    anchors = rest - rest.mean(0)
    anchors /= np.linalg.norm(anchors, axis=1, keepdims=True)
    # seeded random orientation of the anchor set relative to the sphere
    anchors = Rotation.random(random_state=rng).apply(anchors)
    logits = sharpness * dirs @ anchors.T
    w = np.exp(logits - logits.max(1, keepdims=True))
    w /= w.sum(1, keepdims=True)
    w.flags.writeable = False
    return w


def joint_colors():
    cols = [(0.8, 0.8, 0.8)]
    for f in range(5):
        for s in range(4):
            cols.append(colorsys.hsv_to_rgb(f / 5.0 + s * 0.03, 1.0 - 0.15 * s, 1.0 - 0.12 * s))
    return np.array(cols)


def bins_to_pixels(uv, resolution, image_size):
    k = image_size / resolution
    return k * np.asarray(uv) + (k - 1) / 2


def render_blobs(pose, resolution, image_size, sigma_px=BLOB_SIGMA_PX):
    """(S, S, 3) image: one coloured Gaussian per joint, brighter when nearer."""
    px = bins_to_pixels(pose[:, :2], resolution, image_size)
    grid = np.arange(image_size, dtype=np.float64)
    gx = np.exp(-0.5 * (grid[None, :] - px[:, :1]) ** 2 / sigma_px**2)  # (21, S) over columns
    gy = np.exp(-0.5 * (grid[None, :] - px[:, 1:]) ** 2 / sigma_px**2)  # (21, S) over rows
    amp = 1.0 - 0.5 * pose[:, 2] / resolution
    colors = joint_colors() * amp[:, None]
    img = np.einsum("jr,jc,jk->rck", gy, gx, colors)
    return np.clip(img, 0.0, 1.0)


def project(joints, rng, spec, resolution):
    """Random global rotation + scaled orthographic projection into uvd bins."""
    rot = Rotation.random(random_state=rng)
    x = rot.apply(joints)
    x -= x.mean(0)
    radius = np.linalg.norm(x, axis=1).max()
    scale = rng.uniform(*spec.radius_fraction) * resolution / radius
    center = (resolution - 1) / 2 + rng.uniform(-1, 1, size=3) * spec.center_jitter * resolution
    return np.clip(scale * x + center, 0.0, resolution - 1)


def sample_hand(seed, spec=SkeletonSpec(), preset: RunPreset = None, sample_id=0):
    preset = preset or get_preset("desk")
    L = preset.heatmap_resolution
    rng = np.random.default_rng(seed)
    joints = forward_kinematics(rng, spec)
    pose = project(joints, rng, spec, L)
    blend = blend_matrix(preset.levels[-1], spec.seed)
    return HandSample(
        image=render_blobs(pose, L, preset.image_size).astype(np.float32),
        pose_gt=pose.astype(np.float32),
        verts_gt=(blend @ pose).astype(np.float32),
        sample_id=sample_id,
        seed=seed,
    )


def sample_affine(rng, resolution, max_angle=45.0, scale_range=(0.8, 1.2), max_shift=0.1):
    theta = np.radians(rng.uniform(-max_angle, max_angle))
    s = rng.uniform(*scale_range)
    shift = rng.uniform(-max_shift, max_shift, size=2) * resolution
    c, sn = np.cos(theta), np.sin(theta)
    r2 = np.array([[c, -sn], [sn, c]])
    center = np.full(2, (resolution - 1) / 2)
    aff = np.hstack([s * r2, (center + shift - s * r2 @ center)[:, None]])
    rot = np.eye(3)
    rot[:2, :2] = r2
    return aff, rot, s


def in_frame(pts, resolution):
    return bool(np.all(pts >= 0) and np.all(pts <= resolution - 1))


def warp_images(images, aff, resolution):
    """Apply per-sample bin-space affines (B, 2, 3) to (B, S, S, 3) images."""
    images = torch.as_tensor(images)
    aff = torch.as_tensor(aff, dtype=torch.float64)
    size = images.shape[1]
    k = size / resolution
    o = (k - 1) / 2
    a = aff[:, :, :2]
    # pixel-space forward map q = A p + t_pix, sampled through its inverse
    t_pix = k * aff[:, :, 2] + o - (a @ torch.full((2, 1), o, dtype=torch.float64)).squeeze(-1)
    a_inv = torch.linalg.inv(a)
    grid = torch.arange(size, dtype=torch.float64)
    qy, qx = torch.meshgrid(grid, grid, indexing="ij")
    q = torch.stack([qx, qy], -1).reshape(1, -1, 2) - t_pix[:, None, :]
    p = q @ a_inv.transpose(1, 2)
    norm = ((2 * p + 1) / size - 1).reshape(-1, size, size, 2)
    out = F.grid_sample(images.permute(0, 3, 1, 2).to(torch.float64), norm, mode="bilinear",
                        padding_mode="zeros", align_corners=False)
    return out.permute(0, 2, 3, 1).to(images.dtype)


def augment_pair(sample, seed, resolution=None, max_angle=45.0, scale_range=(0.8, 1.2),
                 max_shift=0.1, attempts=10):
    """Second view of ``sample`` under a seeded in-plane similarity.

    The image and uv coordinates go through ``aff``; depth is unchanged, so
    the vertex map is the in-plane rotation ``rot`` plus the affine's scale
    and shift on uv.
    """
    L = resolution or get_preset("desk").heatmap_resolution
    rng = np.random.default_rng(seed)
    pose = sample.pose_gt.astype(np.float64)
    for _ in range(attempts):
        aff, rot, s = sample_affine(rng, L, max_angle, scale_range, max_shift)
        pair = AugmentedPair(sample, sample, aff, rot, s)
        pose2 = pair.transform_points(pose)
        if in_frame(pose2, L):
            break
    else:
        raise AugmentationFailed("augmentation failed")
    image2 = warp_images(sample.image[None], aff[None], L)[0].numpy()
    pair.view2 = HandSample(
        image=image2.astype(np.float32),
        pose_gt=pose2.astype(np.float32),
        verts_gt=pair.transform_points(sample.verts_gt).astype(np.float32),
        sample_id=sample.sample_id,
        seed=sample.seed,
    )
    return pair


# --- dataset files -----------------------------------------------------------

DATA_FILE = "data.bin"
MANIFEST_FILE = "manifest.json"


def record_layout(preset):
    s = preset.image_size
    return {"image": (s, s, 3), "pose": (NUM_JOINTS, 3), "verts": (preset.levels[-1], 3)}


def make_dataset(out_dir, count, seed, preset="desk", spec=SkeletonSpec()):
    """Write ``count`` samples (seeds seed..seed+count-1) plus a JSON manifest."""
    if count < 1:
        raise HandPromptError("count must be >= 1")
    preset = get_preset(preset) if isinstance(preset, str) else preset
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise HandPromptError(f"unwritable path {out}: {exc}", code="io") from exc
    layout = record_layout(preset)
    record_floats = sum(int(np.prod(v)) for v in layout.values())
    offsets = []
    with open(out / DATA_FILE, "wb") as fh:
        for i in range(count):
            smp = sample_hand(seed + i, spec, preset, sample_id=i)
            offsets.append(fh.tell())
            for arr in (smp.image, smp.pose_gt, smp.verts_gt):
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    manifest = {
        "count": count,
        "preset": preset.name,
        "seed": seed,
        "spec_seed": spec.seed,
        "dtype": "<f4",
        "layout": {k: list(v) for k, v in layout.items()},
        "record_bytes": 4 * record_floats,
        "offsets": offsets,
    }
    (out / MANIFEST_FILE).write_text(json.dumps(manifest, indent=1))
    return manifest


def load_manifest(data_dir):
    path = Path(data_dir) / MANIFEST_FILE
    if not path.is_file():
        raise HandPromptError(f"missing dataset: {path}", code="missing_dataset")
    manifest = json.loads(path.read_text())
    size = (Path(data_dir) / DATA_FILE).stat().st_size
    if size != manifest["count"] * manifest["record_bytes"]:
        raise HandPromptError("dataset file length disagrees with manifest", code="bad_dataset")
    return manifest


def load_dataset(data_dir):
    """Arrays ``images`` (N, S, S, 3), ``poses`` (N, 21, 3), ``verts`` (N, n, 3), float32."""
    manifest = load_manifest(data_dir)
    raw = np.fromfile(Path(data_dir) / DATA_FILE, dtype=manifest["dtype"])
    raw = raw.reshape(manifest["count"], -1)
    out, start = {}, 0
    for key, name in (("image", "images"), ("pose", "poses"), ("verts", "verts")):
        shape = tuple(manifest["layout"][key])
        n = int(np.prod(shape))
        out[name] = raw[:, start:start + n].reshape((-1,) + shape).astype(np.float32)
        start += n
    out["manifest"] = manifest
    return out


def read_sample(data_dir, index):
    data = load_dataset(data_dir)
    return HandSample(data["images"][index], data["poses"][index], data["verts"][index],
                      sample_id=index, seed=data["manifest"]["seed"] + index)


def load_annotation_json(joints_path, verts_path, preset="desk", images=None):
    """Map FreiHAND-style annotations (per-sample 21x3 joints and Nx3 vertices as
    JSON arrays) into HandSamples in the preset's uvd frame. Evaluation only.

    Coordinates are normalised per sample by an orthographic fit of the joints
    into the frame; ``images`` (optional, HxWx3 arrays in [0, 1]) are resized to
    the preset image size, otherwise the blob rendering of the joints is used.
    """
    preset = get_preset(preset) if isinstance(preset, str) else preset
    L, size = preset.heatmap_resolution, preset.image_size
    joints_all = json.loads(Path(joints_path).read_text())
    verts_all = json.loads(Path(verts_path).read_text())
    samples = []
    for i, (j, v) in enumerate(zip(joints_all, verts_all)):
        j, v = np.asarray(j, dtype=np.float64), np.asarray(v, dtype=np.float64)
        check_pose(j)
        center = j.mean(0)
        radius = np.linalg.norm(j - center, axis=1).max() or 1.0
        scale = 0.3 * L / radius
        mid = (L - 1) / 2
        pose = np.clip(scale * (j - center) + mid, 0, L - 1)
        verts = scale * (v - center) + mid
        if images is not None:
            img = torch.as_tensor(np.asarray(images[i], dtype=np.float32)).permute(2, 0, 1)[None]
            img = F.interpolate(img, size=(size, size), mode="bilinear", align_corners=False)
            image = img[0].permute(1, 2, 0).numpy()
        else:
            image = render_blobs(pose, L, size).astype(np.float32)
        samples.append(HandSample(image, pose.astype(np.float32), verts.astype(np.float32), i, 0))
    return samples
