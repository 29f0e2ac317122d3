"""Joint heatmaps and the sparse-to-dense, coarse-to-fine mesh regressor."""
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .blocks import TransformerBlock
from .domain import NUM_JOINTS
from .errors import HandPromptError, TopologyError

DEFAULT_SIGMA = 2.0


@dataclass(frozen=True)
class JointHeatmapPlanes:
    hxy: np.ndarray
    hxz: np.ndarray
    hyz: np.ndarray
    sigma: float


def heatmap_planes(pose, sigma=DEFAULT_SIGMA, resolution=16):
    """(..., 21, 3) uvd pose -> (..., 3, 21, R, R) Gaussian planes xy, xz, yz.

    Plane ``ab`` at grid point (i, j) is exp(-((i - a_j)^2 + (j - b_j)^2) / (2 sigma^2)).
    """
    if sigma <= 0:
        raise HandPromptError("invalid sigma", code="invalid_sigma")
    pose = torch.as_tensor(pose)
    grid = torch.arange(resolution, dtype=pose.dtype)
    # per-axis 1D Gaussians: (..., 21, 3, R)
    g = torch.exp(-0.5 * (grid - pose.unsqueeze(-1)) ** 2 / sigma**2)
    gx, gy, gz = g.unbind(-2)
    outer = lambda a, b: a.unsqueeze(-1) * b.unsqueeze(-2)
    return torch.stack([outer(gx, gy), outer(gx, gz), outer(gy, gz)], dim=-4)


def joint_heatmap(pose, sigma=DEFAULT_SIGMA, resolution=16):
    pose = torch.as_tensor(np.asarray(pose, dtype=np.float64))
    planes = heatmap_planes(pose, sigma, resolution).numpy()
    return JointHeatmapPlanes(planes[0], planes[1], planes[2], float(sigma))


def pyramid_project(pyramid, pose_uv, resolution):
    """Bilinearly sample each pyramid level at the joints' uv positions.

    ``pose_uv`` is (B, 21, 2) in bins of a ``resolution``-wide frame; bin u is
    centred at (u + 0.5) / resolution of the image width. Out-of-frame
    positions clamp to the border. Returns a list of (B, 21, C_l).
    """
    grid = (2.0 * (pose_uv + 0.5) / resolution - 1.0).unsqueeze(2)  # (B, 21, 1, 2)
    out = []
    for level in pyramid:
        s = F.grid_sample(level, grid.to(level.dtype), mode="bilinear",
                          padding_mode="border", align_corners=False)
        out.append(s.squeeze(-1).transpose(1, 2))
    return out


class MeshRegressor(nn.Module):
    def __init__(self, preset, topology, sparse_to_dense=True, projection=True):
        super().__init__()
        if tuple(topology.levels) != tuple(preset.levels):
            raise TopologyError(f"ladder mismatch: {topology.levels} vs {preset.levels}")
        self.preset = preset
        self.sparse_to_dense = sparse_to_dense
        self.projection = projection
        self.resolution = preset.heatmap_resolution
        dims = preset.stage_dims
        c0, s0, _ = preset.pyramid[0]

        self.init_conv = nn.Conv2d(3 * NUM_JOINTS + c0, NUM_JOINTS, 3, padding=1)
        self.init_mlp = nn.Sequential(nn.Linear(s0 * s0, dims[0]), nn.GELU(),
                                      nn.Linear(dims[0], dims[0]))
        self.coord_embed = nn.Linear(3, dims[0])

        n0 = preset.levels[0]
        self.bridge_logits = nn.Parameter(torch.randn(n0, NUM_JOINTS) * 0.1)
        for l, m in enumerate(topology.upsample_maps):
            self.register_buffer(f"up{l}", torch.as_tensor(m, dtype=torch.float32))

        counts = self.stage_counts()
        d_prev = dims[0]
        # deepest pyramid level feeds the coarsest stage
        pyr_channels = [preset.pyramid[len(preset.pyramid) - 1 - l][0] for l in range(len(dims))]
        self.dim_proj = nn.ModuleList()
        self.refine = nn.ModuleList()
        self.inject = nn.ModuleList()
        self.pos = nn.ParameterList()
        self.blocks = nn.ModuleList()
        for l, (d, n, h) in enumerate(zip(dims, counts, preset.stage_heads)):
            self.dim_proj.append(nn.Linear(d_prev, d))
            ref = nn.Sequential(nn.Linear(d, d), nn.GELU(), nn.Linear(d, d))
            nn.init.zeros_(ref[-1].weight)
            nn.init.zeros_(ref[-1].bias)
            self.refine.append(ref)
            self.inject.append(nn.Linear(pyr_channels[l], d))
            self.pos.append(nn.Parameter(torch.randn(n, d) * 0.02))
            self.blocks.append(TransformerBlock(d, h))
            d_prev = d
        self.head = nn.Linear(dims[-1], 3)

    def stage_counts(self):
        levels = self.preset.levels
        return list(levels) if self.sparse_to_dense else [levels[-1]] * len(levels)

    def upsample_maps(self):
        """Token maps applied at each stage: joints->level0, then level l-1 -> l."""
        ups = [getattr(self, f"up{l}") for l in range(len(self.preset.levels) - 1)]
        bridge = self.bridge_logits.softmax(-1)
        if self.sparse_to_dense:
            return [bridge] + ups
        full = bridge
        for u in ups:
            full = u.to(full.dtype) @ full
        eye = torch.eye(full.shape[0], dtype=full.dtype)
        return [full] + [eye] * len(ups)

    def init_tokens(self, heatmaps, f0, pose):
        """heatmaps (B, 3, 21, R, R), f0 (B, C0, S, S), pose (B, 21, 3) -> (B, 21, d0)."""
        b = f0.shape[0]
        planes = heatmaps.clone()
        # xy plane is indexed [u, v]; transpose to image layout [v, u]
        planes[:, 0] = heatmaps[:, 0].transpose(-1, -2)
        planes = planes.reshape(b, 3 * NUM_JOINTS, *planes.shape[-2:])
        if planes.shape[-1] != f0.shape[-1]:
            planes = F.interpolate(planes, size=f0.shape[-2:], mode="bilinear", align_corners=False)
        x = F.relu(self.init_conv(torch.cat([planes.to(f0.dtype), f0], dim=1)))
        x = self.init_mlp(x.flatten(2))
        return x + self.coord_embed(pose.to(x.dtype) / self.resolution)

    def forward(self, pyramid, pose, sigma=DEFAULT_SIGMA, return_tokens=False):
        """Vertices (B, n_final, 3) in uvd bins from the pyramid and a (B, 21, 3) pose."""
        pose = pose.to(pyramid[0].dtype)
        heat = heatmap_planes(pose, sigma, self.resolution)
        x = self.init_tokens(heat, pyramid[0], pose)
        return self.run_stages(x, pyramid, pose, return_tokens)

    def run_stages(self, x, pyramid, pose, return_tokens=False):
        """Level-0 joint tokens (B, 21, d0) -> vertices through every stage."""
        joint_feats = pyramid_project(pyramid, pose[..., :2], self.resolution) if self.projection else None
        chain = None
        tokens = []
        for l, u in enumerate(self.upsample_maps()):
            u = u.to(x.dtype)
            chain = u if chain is None else u @ chain
            x = self.dim_proj[l](u @ x)
            x = x + self.refine[l](x)
            if joint_feats is not None:
                j = self.inject[l](joint_feats[len(pyramid) - 1 - l])
                x = x + chain @ j
            x = self.blocks[l](x + self.pos[l])
            tokens.append(x)
        # offsets on top of the joint blend carried through the same chain
        verts = chain @ pose + self.head(x)
        return (verts, tokens) if return_tokens else verts


def regress_mesh(level0, pyramid, pose, topo, regressor):
    if tuple(topo.levels) != tuple(regressor.preset.levels):
        raise TopologyError(f"ladder mismatch: {topo.levels} vs {regressor.preset.levels}")
    return regressor.run_stages(level0, pyramid, pose.to(level0.dtype))
