import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from gradcheck import rel_error
from handprompt import losses as L
from handprompt.errors import DegenerateGeometry, HandPromptError


def brute_normal(pred, gt, faces):
    total = 0.0
    for a, b, c in faces:
        n = np.cross(gt[b] - gt[a], gt[c] - gt[a])
        n = n / np.linalg.norm(n)
        for i, j in ((a, b), (b, c), (c, a)):
            e = pred[i] - pred[j]
            total += abs(np.dot(e / np.linalg.norm(e), n))
    return total


def brute_edge(pred, gt, faces):
    return sum(abs(np.linalg.norm(pred[i] - pred[j]) - np.linalg.norm(gt[i] - gt[j]))
               for a, b, c in faces for i, j in ((a, b), (b, c), (c, a)))


@pytest.fixture(scope="module")
def sphere(desk_topology):
    verts = desk_topology.positions[-1] * 6 + 8
    return torch.as_tensor(verts, dtype=torch.float64), torch.as_tensor(desk_topology.faces)


def test_pose_loss_examples():
    gt = torch.rand(21, 3)
    assert L.pose_loss(gt, gt).item() == 0.0
    assert abs(L.pose_loss(gt + torch.tensor([1.0, 0, 0]), gt).item() - 21.0) < 1e-4
    pred = gt.clone().double()
    pred[4] += torch.tensor([1.0, 2.0, 3.0], dtype=torch.float64)
    assert abs(L.pose_loss(pred, gt.double()).item() - 6.0) < 1e-12


def test_pose_loss_batch_mean_and_shape_check():
    gt = torch.zeros(4, 21, 3, dtype=torch.float64)
    pred = gt.clone()
    pred[0] += 1.0
    assert abs(L.pose_loss(pred, gt).item() - 63.0 / 4) < 1e-12
    with pytest.raises(HandPromptError, match="shape mismatch"):
        L.pose_loss(torch.zeros(21, 3), torch.zeros(20, 3))


def test_vertex_loss_examples(sphere):
    verts, _ = sphere
    assert L.vertex_loss(verts, verts).item() == 0.0
    assert abs(L.vertex_loss(verts + torch.tensor([0, 0, 2.0], dtype=torch.float64), verts).item()
               - 1284.0) < 1e-9
    one = verts.clone()
    one[100, 0] += 0.5
    assert abs(L.vertex_loss(one, verts).item() - 0.5) < 1e-12


def test_normal_loss_examples(sphere):
    verts, faces = sphere
    assert L.normal_loss(verts, verts, faces).item() < 1e-12
    tri = torch.tensor([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=torch.float64)
    f = torch.tensor([[0, 1, 2]])
    pred = tri.clone()
    pred[1] = torch.tensor([0.0, 0, 1])  # edge (0,1) along the gt normal (0,0,1)
    e = pred - pred.roll(-1, 0)
    expected = 1.0 + sum(abs((e[k] / e[k].norm())[2].item()) for k in (1, 2))
    assert abs(L.normal_loss(pred, tri, f).item() - expected) < 1e-12


def test_normal_loss_matches_loop(sphere, rng):
    verts, faces = sphere
    pred = verts + torch.as_tensor(rng.normal(scale=0.3, size=verts.shape))
    got = L.normal_loss(pred, verts, faces).item()
    assert abs(got - brute_normal(pred.numpy(), verts.numpy(), faces.numpy())) <= 1e-6


def test_degenerate_edge(sphere):
    verts, faces = sphere
    pred = verts.clone()
    a, b, _ = faces[0].tolist()
    pred[b] = pred[a]
    with pytest.raises(DegenerateGeometry, match="degenerate edge"):
        L.normal_loss(pred, verts, faces)


def test_edge_loss_examples(sphere, desk_topology):
    verts, faces = sphere
    assert L.edge_loss(verts, verts, faces).item() == 0.0
    total = brute_edge(verts.numpy(), verts.numpy() * 0, faces.numpy())
    assert abs(L.edge_loss(2 * verts, verts, faces).item() - total) < 1e-9
    # a single edge of length 1 stretched to 1.5, on a two-triangle strip sharing that edge
    pts = torch.tensor([[0.0, 0, 0], [1, 0, 0], [0.5, 1, 0], [0.5, -1, 0]], dtype=torch.float64)
    quad = torch.tensor([[0, 1, 2], [1, 0, 3]])
    stretched = pts.clone()
    stretched[1, 0] = 1.5
    # moving vertex 1 also changes its other two edges; the shared edge counts once per face
    lengths = lambda p: {frozenset(e): np.linalg.norm(p[e[0]] - p[e[1]]) for e in
                         [(0, 1), (1, 2), (2, 0), (0, 3), (3, 1)]}
    shared = abs(lengths(stretched.numpy())[frozenset((0, 1))] - lengths(pts.numpy())[frozenset((0, 1))])
    assert abs(shared - 0.5) < 1e-12
    others = sum(abs(lengths(stretched.numpy())[frozenset(e)] - lengths(pts.numpy())[frozenset(e)])
                 for e in [(1, 2), (3, 1)])
    assert abs(L.edge_loss(stretched, pts, quad).item() - (2 * 0.5 + others)) < 1e-12


@given(st.floats(-20, 20), st.floats(-20, 20), st.floats(-20, 20))
def test_translation_invariance(tx, ty, tz):
    g = torch.Generator().manual_seed(0)
    gt = torch.randn(30, 3, generator=g, dtype=torch.float64)
    pred = gt + 0.2 * torch.randn(30, 3, generator=g, dtype=torch.float64)
    faces = torch.tensor([[i, i + 1, i + 2] for i in range(0, 27, 3)])
    t = torch.tensor([tx, ty, tz], dtype=torch.float64)
    for fn in (L.edge_loss, L.normal_loss):
        assert abs(fn(pred + t, gt + t, faces).item() - fn(pred, gt, faces).item()) < 1e-8


def test_consistency_examples(rng):
    aff = torch.as_tensor(np.hstack([[[0.8, -0.6], [0.6, 0.8]], [[1.0], [2.0]]]) * [1, 1, 1])
    p1 = torch.as_tensor(rng.uniform(0, 16, (21, 2)))
    v1 = torch.as_tensor(rng.uniform(0, 16, (642, 3)))
    p2 = L.apply_affine(aff, p1)
    v2 = L.apply_view_transform(aff, v1)
    l2, l3 = L.consistency_terms(aff, p1, p2, v1, v2)
    assert l2.item() < 1e-12 and l3.item() < 1e-12

    ident = torch.tensor([[1.0, 0, 0], [0, 1.0, 0]], dtype=torch.float64)
    l2, l3 = L.consistency_terms(ident, p1, p1 + torch.tensor([1.0, 0]), v1, v1)
    assert abs(l2.item() - 21.0) < 1e-12 and l3.item() == 0.0


def test_consistency_matches_loop(rng):
    aff = rng.normal(size=(2, 3))
    p1, p2 = rng.normal(size=(21, 2)), rng.normal(size=(21, 2))
    v1, v2 = rng.normal(size=(50, 3)), rng.normal(size=(50, 3))
    ref2 = sum(abs(aff[r, 0] * p1[j, 0] + aff[r, 1] * p1[j, 1] + aff[r, 2] - p2[j, r])
               for j in range(21) for r in range(2))
    ref3 = sum(abs(aff[r, 0] * v1[j, 0] + aff[r, 1] * v1[j, 1] + aff[r, 2] - v2[j, r])
               for j in range(50) for r in range(2)) + np.abs(v1[:, 2] - v2[:, 2]).sum()

    class Pair:
        pass

    pair = Pair()
    pair.aff = aff
    l2, l3 = L.consistency_losses(pair, *(torch.as_tensor(x) for x in (p1, p2, v1, v2)))
    assert abs(l2.item() - ref2) < 1e-9 and abs(l3.item() - ref3) < 1e-9


def test_total_loss_examples():
    zero = dict.fromkeys(L.TERMS, 0.0)
    assert L.total_loss(zero) == 0.0
    assert abs(L.total_loss({**zero, "l_clip": 2.0}) - 0.2) < 1e-12
    terms = {**zero, "l_p": 1, "l_v": 1, "l_n": 2, "l_e": 2}
    assert abs(L.total_loss(terms) - 2.2) < 1e-12
    assert abs(L.total_loss(L.LossReport(**terms)) - 2.2) < 1e-12
    with pytest.raises(HandPromptError, match="invalid loss term"):
        L.total_loss({**zero, "l_e": -1.0})


@pytest.mark.parametrize("term", L.TERMS)
def test_total_loss_is_linear_in_each_term(term):
    base = {k: 0.3 + i for i, k in enumerate(L.TERMS)}
    doubled = {**base, term: 2 * base[term]}
    w = L.LossWeights()
    weight = {"l_p": w.a1, "l_v": w.a1, "l_n": w.a2, "l_e": w.a2, "l_c2d": w.a3, "l_c3d": w.a3,
              "l_clip": w.a4}[term]
    assert abs(L.total_loss(doubled) - L.total_loss(base) - weight * base[term]) < 1e-12


def test_loss_gradients(sphere):
    verts, faces = sphere
    g = torch.Generator().manual_seed(0)
    small = faces[:40]
    used = torch.unique(small)
    gt = verts[used]
    remap = torch.full((int(verts.shape[0]),), -1, dtype=torch.long)
    remap[used] = torch.arange(len(used))
    f = remap[small]
    pred = gt + 0.3 * torch.randn(gt.shape, generator=g, dtype=torch.float64)
    pose_gt = torch.rand(21, 3, generator=g, dtype=torch.float64) * 16
    pose = pose_gt + torch.randn(21, 3, generator=g, dtype=torch.float64)
    aff = torch.randn(2, 3, generator=g, dtype=torch.float64)
    p2 = torch.randn(21, 2, generator=g, dtype=torch.float64)
    v2 = torch.randn(gt.shape, generator=g, dtype=torch.float64)
    checks = {
        "pose": (lambda p: L.pose_loss(p, pose_gt), [pose]),
        "vertex": (lambda p: L.vertex_loss(p, gt), [pred]),
        "normal": (lambda p: L.normal_loss(p, gt, f), [pred]),
        "edge": (lambda p: L.edge_loss(p, gt, f), [pred]),
        "c2d": (lambda p: L.consistency_terms(aff, p, p2, pred, v2)[0], [pose[:, :2]]),
        "c3d": (lambda v: L.consistency_terms(aff, pose[:, :2], p2, v, v2)[1], [pred]),
    }
    for name, (fn, args) in checks.items():
        assert rel_error(fn, args) <= 1e-4, name
