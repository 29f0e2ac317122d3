import numpy as np
import pytest
import torch
from hypothesis import settings

from handprompt.domain import get_preset
from handprompt.synthetic import make_dataset, load_dataset
from handprompt.topology import build_topology, synthetic_ladder_topology

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def desk():
    return get_preset("desk")


@pytest.fixture(scope="session")
def paper():
    return get_preset("paper")


@pytest.fixture(scope="session")
def desk_topology(desk):
    return build_topology(desk)


@pytest.fixture(scope="session")
def paper_topology(paper):
    return synthetic_ladder_topology(paper.levels, seed=0)


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    make_dataset(root / "train", 48, 0)
    make_dataset(root / "val", 16, 5000)
    return {"root": root, "train": load_dataset(root / "train"), "val": load_dataset(root / "val")}


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(acceptance_log.LINES):
            terminalreporter.write_line(acceptance_log.LINES[k])
