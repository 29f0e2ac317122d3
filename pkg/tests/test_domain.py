import numpy as np
import pytest

from handprompt.domain import (NUM_JOINTS, PARENTS, canonical_joint_names,
                               check_pose, get_preset, joint_index)
from handprompt.errors import HandPromptError, InvalidPose


def test_joint_table_has_21_unique_names():
    names = canonical_joint_names()
    assert len(names) == NUM_JOINTS == 21
    assert len(set(names)) == 21
    assert names[0] == "wrist"


@pytest.mark.parametrize("name", ["index MCP", "thumb fingertip", "little PIP", "middle DIP",
                                  "ring fingertip"])
def test_prompt_example_names_present(name):
    assert name in canonical_joint_names()


def test_joint_table_is_stable():
    assert canonical_joint_names() == canonical_joint_names()
    assert joint_index("thumb fingertip") == 4


def test_parents_form_tree_rooted_at_wrist():
    assert PARENTS[0] == -1
    for j in range(1, NUM_JOINTS):
        # walking parents always reaches the wrist
        k, steps = j, 0
        while k != 0:
            k = PARENTS[k]
            steps += 1
            assert steps <= 4
    # each finger chain: MCP attaches to the wrist, then consecutive
    for f in range(5):
        base = 1 + 4 * f
        assert PARENTS[base] == 0
        assert [PARENTS[base + s] for s in (1, 2, 3)] == [base, base + 1, base + 2]


def test_check_pose_rejects_bad_input():
    with pytest.raises(InvalidPose, match="invalid pose"):
        check_pose(np.zeros((20, 3)))
    bad = np.zeros((21, 3))
    bad[3, 1] = np.nan
    with pytest.raises(InvalidPose, match="invalid pose"):
        check_pose(bad)
    with pytest.raises(InvalidPose):
        check_pose(np.full((21, 3), 16.0), resolution=16)
    assert check_pose(np.full((21, 3), 15.5), resolution=16).shape == (21, 3)


def test_paper_preset_values():
    p = get_preset("paper")
    assert p.image_shape == (224, 224, 3)
    assert p.heatmap_resolution == 56
    assert p.pyramid == ((56, 56, 56), (256, 56, 56), (512, 28, 28), (1024, 14, 14), (2048, 8, 8))
    assert p.stage_dims == (256, 128, 64, 32)
    assert p.levels == (21, 98, 389, 778)
    assert p.batch_size == 48


def test_desk_preset_values():
    p = get_preset("desk")
    assert p.image_shape == (64, 64, 3)
    assert p.heatmap_resolution == 16
    assert p.channel_widths == (16, 16, 32, 64, 128)
    assert p.stage_dims == (32, 32, 16, 8)
    assert p.levels == (12, 42, 162, 642)
    assert p.batch_size == 32
    assert p.embed_dim == 32


def test_unknown_preset():
    with pytest.raises(HandPromptError, match="unknown preset"):
        get_preset("laptop")
