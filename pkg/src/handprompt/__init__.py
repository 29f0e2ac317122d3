"""Pose-to-text prompts, contrastive pose/text matching, lixel pose decoding and
coarse-to-fine hand mesh regression on deterministic synthetic hands."""
from .domain import JOINT_NAMES, NUM_JOINTS, PRESETS, RunPreset, get_preset
from .errors import HandPromptError
from .model import HandModel
from .prompts import SelectionSpec, generate_prompts, order_joints

__all__ = ["JOINT_NAMES", "NUM_JOINTS", "PRESETS", "RunPreset", "get_preset", "HandPromptError",
           "HandModel", "SelectionSpec", "generate_prompts", "order_joints"]
