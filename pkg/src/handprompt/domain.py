"""Hand skeleton vocabulary, pose validation and run presets."""
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import HandPromptError, InvalidPose

NUM_JOINTS = 21
FINGERS = ("thumb", "index", "middle", "ring", "little")
SEGMENTS = ("MCP", "PIP", "DIP", "fingertip")

# wrist first, then thumb..little, each proximal to distal
JOINT_NAMES = ("wrist",) + tuple(f"{f} {s}" for f in FINGERS for s in SEGMENTS)

# parent index per joint; wrist is the root
PARENTS = (-1,) + tuple(
    0 if s == 0 else 1 + 4 * f + s - 1 for f in range(5) for s in range(4)
)


def canonical_joint_names():
    return JOINT_NAMES


def joint_index(name):
    return JOINT_NAMES.index(name)


def check_pose(pose, resolution=None):
    """Return ``pose`` as a (21, 3) float array, raising ``InvalidPose`` otherwise."""
    arr = np.asarray(pose, dtype=np.float64)
    if arr.shape != (NUM_JOINTS, 3):
        raise InvalidPose(f"invalid pose: expected shape (21, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidPose("invalid pose: non-finite coordinate")
    if resolution is not None and (arr.min() < 0 or arr.max() >= resolution):
        raise InvalidPose(f"invalid pose: coordinates outside [0, {resolution})")
    return arr


@dataclass(frozen=True)
class RunPreset:
    name: str
    image_size: int
    heatmap_resolution: int
    # (channels, height, width) of f0..f4
    pyramid: tuple
    levels: tuple
    stage_dims: tuple
    embed_dim: int
    batch_size: int
    lixel_channels: int
    # heads per mesh stage
    stage_heads: tuple
    text_dim: int = 64
    text_depth: int = 2
    text_heads: int = 4
    text_head_depth: int = 1
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def channel_widths(self):
        return tuple(c for c, _, _ in self.pyramid)

    @property
    def image_shape(self):
        return (self.image_size, self.image_size, 3)

    def with_(self, **kw):
        return replace(self, **kw)


PAPER = RunPreset(
    name="paper",
    image_size=224,
    heatmap_resolution=56,
    pyramid=((56, 56, 56), (256, 56, 56), (512, 28, 28), (1024, 14, 14), (2048, 8, 8)),
    levels=(21, 98, 389, 778),
    stage_dims=(256, 128, 64, 32),
    embed_dim=512,
    batch_size=48,
    lixel_channels=256,
    stage_heads=(8, 8, 4, 4),
)

DESK = RunPreset(
    name="desk",
    image_size=64,
    heatmap_resolution=16,
    pyramid=((16, 16, 16), (16, 16, 16), (32, 8, 8), (64, 8, 8), (128, 4, 4)),
    levels=(12, 42, 162, 642),
    stage_dims=(32, 32, 16, 8),
    embed_dim=32,
    batch_size=32,
    lixel_channels=64,
    stage_heads=(4, 4, 2, 1),
)

PRESETS = {"paper": PAPER, "desk": DESK}


def get_preset(name):
    try:
        return PRESETS[name]
    except KeyError:
        raise HandPromptError(f"unknown preset {name!r}", code="bad_preset") from None
