"""Training, evaluation, ablation and timing on top of the synthetic datasets."""
import csv
import io
import logging
import time
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np
import torch

from . import losses as L
from .domain import get_preset
from .errors import HandPromptError, TrainingDiverged
from .matching import clip_loss, retrieval_top1
from .metrics import MetricReport, f_score, pa_pjpe, pck_auc, point_errors
from .model import HandModel
from .pose_encoder import decode_joints_hard, decode_joints_soft
from .prompts import AXES, SelectionSpec, default_vocab, generate_prompts, max_prompt_length
from .synthetic import apply_pair_transform, load_dataset, sample_affine, in_frame, warp_images
from .topology import build_topology

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "lr") + L.TERMS + ("total",)

# published AUC (0-30 mm) per variant, kept next to our numbers for comparison
REFERENCE_AUC = {"full": 0.776, "no-clip": 0.763, "n10": 0.767, "n15": 0.774,
             "no-projection": 0.769, "no-s2d": 0.773}


@dataclass
class RunConfig:
    preset: str = "desk"
    seed: int = 0
    epochs: int = 30
    lr: float = 1e-3
    decay: float = 0.25
    decay_every: int = 8
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 1e-4
    a1: float = 1.0
    a2: float = 0.05
    a3: float = 0.1
    a4: float = 0.1
    clip_enabled: bool = True
    prompt_n: int = 21
    # 0 takes the preset's batch size
    batch_size: int = 0
    # samples per batch that also get an augmented second view
    pairs_per_batch: int = 8
    projection: bool = True
    sparse_to_dense: bool = True
    train_dir: str = "data/train"
    val_dir: str = "data/val"
    out_dir: str = "runs/default"
    topology: str = ""
    threads: int = 1
    max_batches: int = 0

    @property
    def batch(self):
        return self.batch_size or get_preset(self.preset).batch_size

    @property
    def weights(self):
        return L.LossWeights(self.a1, self.a2, self.a3, self.a4)

    @classmethod
    def from_mapping(cls, values):
        types = {f.name: getattr(f.type, "__name__", f.type) for f in fields(cls)}
        kw = {}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in types:
                raise HandPromptError(f"unknown config key {key!r}", code="bad_config")
            kw[key] = _coerce(types[key], raw)
        return cls(**kw)


def _coerce(kind, raw):
    if not isinstance(raw, str):
        return tuple(raw) if kind == "tuple" else raw
    if kind == "bool":
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "tuple":
        return tuple(float(t) for t in raw.replace(",", " ").split())
    return raw.strip()


def read_config_file(path):
    """Flat ``key = value`` text; ``#`` starts a comment."""
    values = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise HandPromptError(f"bad config line {line!r}", code="bad_config")
        k, v = line.split("=", 1)
        values[k.strip()] = v.strip()
    return values


def learning_rate(cfg, epoch):
    return cfg.lr * cfg.decay ** (epoch // cfg.decay_every)


def _seed_for(*parts):
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def selection_for(cfg, sample_index, epoch=0):
    if cfg.prompt_n >= 21:
        return SelectionSpec()
    return SelectionSpec(n=cfg.prompt_n, seed=_seed_for(cfg.seed, epoch, sample_index), mode="random")


def prompt_ids(poses, selections, length=None):
    """(3, B, T) token ids for the x, y, z prompts of each pose."""
    vocab = default_vocab()
    length = length or max_prompt_length()
    triples = [generate_prompts(p, s) for p, s in zip(poses, selections)]
    return np.stack([vocab.encode_batch([getattr(t, f"w{a}") for t in triples], length) for a in AXES])


def build_model(cfg):
    preset = get_preset(cfg.preset)
    topo = build_topology(preset, cfg.topology or None)
    model = HandModel(preset, topo, sparse_to_dense=cfg.sparse_to_dense, projection=cfg.projection)
    return model, topo


def make_optimizer(cfg, model):
    return torch.optim.AdamW(model.parameters(), lr=cfg.lr, betas=tuple(cfg.betas),
                             weight_decay=cfg.weight_decay)


def _pair_transforms(cfg, poses, indices, epoch, resolution):
    affs = np.zeros((len(indices), 2, 3))
    for k, (pose, idx) in enumerate(zip(poses, indices)):
        rng = np.random.default_rng(_seed_for(cfg.seed, epoch, idx, 7))
        for _ in range(10):
            aff, _, _ = sample_affine(rng, resolution)
            if in_frame(apply_pair_transform(aff, pose), resolution):
                break
        else:
            # a hand that never fits stays untransformed for this epoch
            aff = np.hstack([np.eye(2), np.zeros((2, 1))])
        affs[k] = aff
    return affs


def training_step(cfg, model, batch, faces, epoch, text_cache=None):
    """Loss terms for one batch; ``batch`` holds images, poses, verts and indices."""
    preset = model.preset
    res = preset.heatmap_resolution
    images, poses, verts, idx = batch["images"], batch["poses"], batch["verts"], batch["indices"]
    k = min(cfg.pairs_per_batch, len(idx))
    affs = _pair_transforms(cfg, poses[:k].numpy(), idx[:k], epoch, res)
    images2 = warp_images(images[:k], affs, res)
    poses2 = torch.as_tensor(apply_pair_transform(affs, poses[:k].numpy()), dtype=torch.float32)
    verts2 = torch.as_tensor(apply_pair_transform(affs, verts[:k].numpy()), dtype=torch.float32)

    out = model(torch.cat([images, images2]))
    gt_pose = torch.cat([poses, poses2])
    gt_verts = torch.cat([verts, verts2])
    pred_pose, pred_verts = out["pose"], out["verts"]
    b = len(idx)
    terms = {
        "l_p": L.pose_loss(pred_pose, gt_pose),
        "l_v": L.vertex_loss(pred_verts, gt_verts),
        "l_n": L.normal_loss(pred_verts, gt_verts, faces),
        "l_e": L.edge_loss(pred_verts, gt_verts, faces),
    }
    terms["l_c2d"], terms["l_c3d"] = L.consistency_terms(
        torch.as_tensor(affs, dtype=torch.float32), pred_pose[:k, :, :2], pred_pose[b:, :, :2],
        pred_verts[:k], pred_verts[b:])
    if cfg.clip_enabled:
        if text_cache is not None and cfg.prompt_n >= 21:
            ids = text_cache[:, idx]
        else:
            sels = [selection_for(cfg, i, epoch) for i in idx]
            ids = prompt_ids(poses.numpy(), sels)
        ids = torch.as_tensor(ids)
        mats = model.logits(tuple(h[:b] for h in out["lixels"]), ids[0], ids[1], ids[2])
        terms["l_clip"] = clip_loss(mats)
    else:
        terms["l_clip"] = torch.zeros((), dtype=pred_pose.dtype)
    return terms


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n - 1, batch_size):
        chunk = order[start:start + batch_size]
        if len(chunk) >= 2:
            yield np.sort(chunk)


def _tensors(data, idx):
    return {
        "images": torch.from_numpy(data["images"][idx]),
        "poses": torch.from_numpy(data["poses"][idx]),
        "verts": torch.from_numpy(data["verts"][idx]),
        "indices": [int(i) for i in idx],
    }


def train(cfg, data=None, progress=None):
    """Train per ``cfg``; writes ``train_log.csv`` and ``checkpoint.pt`` to ``out_dir``."""
    if cfg.threads:
        torch.set_num_threads(cfg.threads)
    torch.manual_seed(cfg.seed)
    data = data if data is not None else load_dataset(cfg.train_dir)
    if data["manifest"]["preset"] != cfg.preset:
        raise HandPromptError("preset mismatch between config and dataset", code="preset_mismatch")
    model, topo = build_model(cfg)
    opt = make_optimizer(cfg, model)
    faces = torch.as_tensor(topo.faces)
    text_cache = None
    if cfg.clip_enabled and cfg.prompt_n >= 21:
        text_cache = prompt_ids(data["poses"], [SelectionSpec()] * len(data["poses"]))
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    n = len(data["poses"])
    for epoch in range(cfg.epochs):
        lr = learning_rate(cfg, epoch)
        for group in opt.param_groups:
            group["lr"] = lr
        sums = dict.fromkeys(L.TERMS + ("total",), 0.0)
        count = 0
        model.train()
        rng = np.random.default_rng(_seed_for(cfg.seed, epoch))
        for bi, idx in enumerate(_batches(n, cfg.batch, rng)):
            if cfg.max_batches and bi >= cfg.max_batches:
                break
            terms = training_step(cfg, model, _tensors(data, idx), faces, epoch, text_cache)
            total = L.total_loss(terms, cfg.weights)
            if not torch.isfinite(total):
                raise TrainingDiverged(f"diverged at epoch {epoch}")
            opt.zero_grad(set_to_none=True)
            total.backward()
            opt.step()
            for key, v in terms.items():
                sums[key] += float(v.detach())
            sums["total"] += float(total.detach())
            count += 1
        row = {"epoch": epoch, "lr": lr, **{k: v / max(count, 1) for k, v in sums.items()}}
        rows.append(row)
        log.info("epoch %d lr %.2e total %.3f clip %.3f", epoch, lr, row["total"], row["l_clip"])
        if progress:
            progress(row)
    write_log(rows, out_dir / "train_log.csv")
    ckpt = out_dir / "checkpoint.pt"
    save_checkpoint(ckpt, model, opt, cfg, cfg.epochs)
    return ckpt, rows


def write_log(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{r[k]:.6g}" if isinstance(r[k], float) else r[k]) for k in LOG_COLUMNS})


def save_checkpoint(path, model, opt, cfg, epoch):
    payload = {
        "model": model.state_dict(),
        "optimizer": opt.state_dict() if opt is not None else None,
        "config": asdict(cfg),
        "epoch": epoch,
    }
    buf = io.BytesIO()
    torch.save(payload, buf)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path):
    """(model, config, payload) from a checkpoint file."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    cfg = RunConfig.from_mapping(payload["config"])
    model, _ = build_model(cfg)
    model.load_state_dict(payload["model"])
    model.eval()
    return model, cfg, payload


@torch.no_grad()
def evaluate(model, data, cfg=None, batch_size=None, auc_range=(0.0, 30.0), auc_steps=31,
             f_thresholds=(0.25, 0.75)):
    """MetricReport for hard-decoded joints and vertices plus per-axis retrieval top-1."""
    cfg = cfg or RunConfig(preset=model.preset.name)
    batch_size = batch_size or cfg.batch
    model.eval()
    if data["manifest"]["preset"] != model.preset.name:
        raise HandPromptError("preset mismatch between checkpoint and dataset", code="preset_mismatch")
    n = len(data["poses"])
    joint_err, pa_err, vert_err, pa_verts, f_near, f_far = [], [], [], [], [], []
    hits = {a: [] for a in AXES}
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(n, start + batch_size))
        batch = _tensors(data, idx)
        pyramid, lixels = model.pose(batch["images"])
        hard = decode_joints_hard(lixels)
        verts = model.mesh(pyramid, decode_joints_soft(lixels)).numpy().astype(np.float64)
        gt = data["poses"][idx].astype(np.float64)
        gv = data["verts"][idx].astype(np.float64)
        for p, g, v, w in zip(hard, gt, verts, gv):
            joint_err.append(point_errors(p, g))
            pa_err.append(pa_pjpe(p, g))
            vert_err.append(point_errors(v, w).mean())
            pa_verts.append(pa_pjpe(v, w))
            f_near.append(f_score(v, w, f_thresholds[0]))
            f_far.append(f_score(v, w, f_thresholds[1]))
        if len(idx) >= 2:
            sels = [selection_for(cfg, int(i)) for i in idx]
            ids = torch.as_tensor(prompt_ids(gt, sels))
            mats = model.logits(lixels, ids[0], ids[1], ids[2])
            for a, m in zip(AXES, mats):
                hits[a].append((retrieval_top1(m), len(idx)))
    errs = np.concatenate(joint_err)
    curve, auc = pck_auc(errs, auc_range[0], auc_range[1], auc_steps)
    retrieval = {a: float(sum(h * c for h, c in v) / sum(c for _, c in v)) for a, v in hits.items() if v}
    return MetricReport(
        pjpe=float(errs.mean()), median_pjpe=float(np.median(errs)), pa_pjpe=float(np.mean(pa_err)),
        auc=auc, f_near=float(np.mean(f_near)), f_far=float(np.mean(f_far)), pck_curve=curve,
        pvpe=float(np.mean(vert_err)), pa_pvpe=float(np.mean(pa_verts)), retrieval=retrieval,
    )


VARIANTS = {
    "full": {},
    "no-clip": {"clip_enabled": False},
    "n10": {"prompt_n": 10},
    "n15": {"prompt_n": 15},
    "no-projection": {"projection": False},
    "no-s2d": {"sparse_to_dense": False},
}


def ablate(cfg, variants, seeds, out_csv=None, train_data=None, val_data=None, progress=None):
    """Train every variant for every seed and tabulate validation metrics."""
    if not variants:
        raise HandPromptError("variant list is empty", code="bad_config")
    train_data = train_data if train_data is not None else load_dataset(cfg.train_dir)
    val_data = val_data if val_data is not None else load_dataset(cfg.val_dir)
    rows = []
    for name in variants:
        if name not in VARIANTS:
            raise HandPromptError(f"unknown variant {name!r}", code="bad_config")
        for seed in seeds:
            run = replace(cfg, seed=seed, out_dir=str(Path(cfg.out_dir) / f"{name}_s{seed}"),
                          **VARIANTS[name])
            t0 = time.perf_counter()
            ckpt, log_rows = train(run, train_data)
            model, _, _ = load_checkpoint(ckpt)
            rep = evaluate(model, val_data, run)
            row = {
                "variant": name, "seed": seed, "pjpe": rep.pjpe, "median_pjpe": rep.median_pjpe,
                "pa_pjpe": rep.pa_pjpe, "auc": rep.auc, "pvpe": rep.pvpe,
                "retrieval_x": rep.retrieval.get("x", float("nan")),
                "retrieval_y": rep.retrieval.get("y", float("nan")),
                "retrieval_z": rep.retrieval.get("z", float("nan")),
                "first_total": log_rows[0]["total"], "final_total": log_rows[-1]["total"],
                "train_seconds": time.perf_counter() - t0,
                "reference_auc": REFERENCE_AUC.get(name, float("nan")),
            }
            rows.append(row)
            if progress:
                progress(row)
    if out_csv:
        Path(out_csv).parent.mkdir(parents=True, exist_ok=True)
        with open(out_csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    return rows


@torch.no_grad()
def bench(model, runs=100, warmup=10, seed=0):
    """Mean wall-clock per stage for single-image inference."""
    model.eval()
    preset = model.preset
    g = torch.Generator().manual_seed(seed)
    image = torch.rand((1,) + preset.image_shape, generator=g)
    pose_t, mesh_t = [], []
    for i in range(warmup + runs):
        t0 = time.perf_counter()
        pyramid, lixels = model.pose(image)
        pose = decode_joints_soft(lixels)
        model.pose.pool_embeddings(lixels)
        t1 = time.perf_counter()
        model.mesh(pyramid, pose)
        t2 = time.perf_counter()
        if i >= warmup:
            pose_t.append(t1 - t0)
            mesh_t.append(t2 - t1)
    pose_ms, mesh_ms = 1e3 * np.mean(pose_t), 1e3 * np.mean(mesh_t)
    total_ms = 1e3 * np.mean(np.add(pose_t, mesh_t))
    stage = lambda ms: {"ms": float(ms), "fps": float(1e3 / ms)}
    return {
        "pose_feature_generation": stage(pose_ms),
        "mesh_regressor": stage(mesh_ms),
        "total": stage(total_ms),
        "runs": runs,
        "threads": torch.get_num_threads(),
    }
