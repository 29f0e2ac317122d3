import numpy as np
import pytest
from scipy.spatial import ConvexHull

from handprompt.errors import TopologyError
from handprompt.topology import (MeshTopology, build_topology, face_edges, read_topology,
                                 synthetic_ladder_topology, write_topology)


def test_desk_levels(desk_topology):
    assert desk_topology.levels == (12, 42, 162, 642)
    assert [10 * 4**k + 2 for k in range(4)] == list(desk_topology.levels)


def test_desk_maps_are_midpoint_maps(desk_topology):
    for m in desk_topology.upsample_maps:
        assert np.allclose(m.sum(1), 1.0, atol=1e-12)
        n_prev = m.shape[1]
        # carried vertices are one-hot on themselves
        assert np.array_equal(m[:n_prev], np.eye(n_prev))
        for row in m[n_prev:]:
            nz = np.sort(row[row != 0])
            assert np.array_equal(nz, [0.5, 0.5])


def test_desk_faces_are_closed_surfaces(desk_topology):
    sets = list(desk_topology.faces_per_level) or [desk_topology.faces]
    for faces in sets + [desk_topology.faces]:
        n = faces.max() + 1
        edges = np.unique(np.sort(face_edges(faces), axis=1), axis=0)
        # Euler characteristic of a sphere
        assert n - len(edges) + len(faces) == 2


def test_build_is_deterministic(desk):
    a, b = build_topology(desk), build_topology(desk)
    assert all(np.array_equal(x, y) for x, y in zip(a.upsample_maps, b.upsample_maps))
    assert np.array_equal(a.faces, b.faces)


def test_chain_stays_in_convex_hull(desk_topology, rng):
    base = rng.normal(size=(12, 3))
    pts = base
    for m in desk_topology.upsample_maps:
        pts = m @ pts
    assert pts.shape == (642, 3)
    hull = ConvexHull(base)
    # every facet inequality a.x + b <= 0 holds up to rounding
    assert np.max(pts @ hull.equations[:, :3].T + hull.equations[:, 3]) < 1e-9


def test_paper_preset_needs_file(paper):
    with pytest.raises(TopologyError, match="topology file missing"):
        build_topology(paper)


def test_paper_preset_from_file(paper, paper_topology, tmp_path):
    path = tmp_path / "paper.topo"
    write_topology(paper_topology, path)
    topo = build_topology(paper, path)
    assert topo.levels == (21, 98, 389, 778)
    for a, b in zip(topo.upsample_maps, paper_topology.upsample_maps):
        assert np.array_equal(a, b)


def test_ladder_mismatch(paper, desk_topology, tmp_path):
    path = tmp_path / "desk.topo"
    write_topology(desk_topology, path)
    with pytest.raises(TopologyError, match="ladder mismatch"):
        build_topology(paper, path)


def test_file_round_trip(desk_topology, tmp_path):
    path = tmp_path / "t.topo"
    write_topology(desk_topology, path)
    assert path.read_text().startswith("levels: 12 42 162 642")
    back = read_topology(path)
    assert back.levels == desk_topology.levels
    assert np.array_equal(back.faces, desk_topology.faces)
    for a, b in zip(back.upsample_maps, desk_topology.upsample_maps):
        assert np.array_equal(a, b)


def test_invariants_are_enforced():
    eye = np.eye(2)
    with pytest.raises(TopologyError):
        MeshTopology(levels=(3, 2), faces=np.array([[0, 1, 2]]), upsample_maps=(eye,))
    bad = np.array([[1.0, 0.0, 0.0], [0.4, 0.4, 0.0], [0.0, 0.0, 1.0], [0, 0.5, 0.5]])
    with pytest.raises(TopologyError, match="row-stochastic"):
        MeshTopology(levels=(3, 4), faces=np.array([[0, 1, 2]]), upsample_maps=(bad,))
    ok = np.vstack([np.eye(3), [[0, 0.5, 0.5]]])
    with pytest.raises(TopologyError, match="degenerate face"):
        MeshTopology(levels=(3, 4), faces=np.array([[0, 1, 1]]), upsample_maps=(ok,))
    with pytest.raises(TopologyError, match="out of range"):
        MeshTopology(levels=(3, 4), faces=np.array([[0, 1, 4]]), upsample_maps=(ok,))


def test_synthetic_ladder_is_valid():
    topo = synthetic_ladder_topology((21, 98, 389, 778), seed=3)
    assert topo.levels == (21, 98, 389, 778)
    assert all(np.allclose(m.sum(1), 1) for m in topo.upsample_maps)
