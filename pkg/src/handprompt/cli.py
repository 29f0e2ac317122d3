"""Command-line entry point: ``handprompt <subcommand> [options]``.

Set HANDPROMPT_LOG=DEBUG|INFO|WARNING to change log verbosity.
"""
import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from .errors import HandPromptError
from .synthetic import load_dataset, make_dataset
from . import train as T

log = logging.getLogger("handprompt")


def _kv(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def build_config(args):
    values = T.read_config_file(args.config) if args.config else {}
    if args.preset:
        values["preset"] = args.preset
    values.update(dict(args.set or []))
    for key in ("seed", "epochs", "train_dir", "val_dir", "out_dir", "topology"):
        val = getattr(args, key, None)
        if val is not None:
            values[key] = str(val)
    return T.RunConfig.from_mapping(values)


def _load_vocab(path):
    if path:
        from . import prompts
        vocab = prompts.Vocabulary.from_file(path)
        if vocab.version != prompts.default_vocab().version:
            raise HandPromptError("vocabulary differs from the built-in one", code="vocab_mismatch")


def cmd_gen_data(args):
    cfg = build_config(args)
    man = make_dataset(args.out, args.count, args.data_seed, preset=cfg.preset)
    print(f"wrote {man['count']} samples to {args.out}")


def cmd_train(args):
    cfg = build_config(args)
    ckpt, rows = T.train(cfg)
    print(f"checkpoint {ckpt} final total {rows[-1]['total']:.4f}")


def _report(rep):
    d = rep.as_dict()
    d.pop("pck_curve")
    return d


def cmd_eval(args):
    model, cfg, _ = T.load_checkpoint(args.checkpoint)
    rep = T.evaluate(model, load_dataset(args.data or cfg.val_dir), cfg)
    out = json.dumps(_report(rep), indent=1)
    if args.json:
        Path(args.json).write_text(out)
    print(out)


def cmd_ablate(args):
    cfg = build_config(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    out = args.out or str(Path(cfg.out_dir) / "ablation.csv")
    rows = T.ablate(cfg, variants, seeds, out_csv=out)
    for r in rows:
        print(f"{r['variant']:>14} seed {r['seed']} pjpe {r['pjpe']:.3f} auc {r['auc']:.3f} "
              f"(reference auc {r['reference_auc']})")
    print(f"table written to {out}")


def cmd_bench(args):
    torch.set_num_threads(args.threads)
    model, _, _ = T.load_checkpoint(args.checkpoint)
    rep = T.bench(model, runs=args.runs, warmup=args.warmup)
    for name in ("pose_feature_generation", "mesh_regressor", "total"):
        print(f"{name:>24}: {rep[name]['ms']:8.3f} ms {rep[name]['fps']:8.1f} fps")


def _batch(model, data, start, size):
    idx = np.arange(start, min(len(data["poses"]), start + size))
    if len(idx) == 0:
        raise HandPromptError("index out of range", code="bad_index")
    return idx, torch.from_numpy(data["images"][idx])


@torch.no_grad()
def cmd_export_matrix(args):
    from .matching import export_matrices
    model, cfg, _ = T.load_checkpoint(args.checkpoint)
    data = load_dataset(args.data or cfg.val_dir)
    idx, images = _batch(model, data, args.start, args.batch or cfg.batch)
    _, lixels = model.pose(images)
    ids = torch.as_tensor(T.prompt_ids(data["poses"][idx], [T.selection_for(cfg, int(i)) for i in idx]))
    paths = export_matrices(model.logits(lixels, ids[0], ids[1], ids[2]), args.out, pgm=args.pgm)
    for p in paths:
        print(p)


@torch.no_grad()
def cmd_export_mesh(args):
    from .pose_encoder import decode_joints_soft
    model, cfg, _ = T.load_checkpoint(args.checkpoint)
    data = load_dataset(args.data or cfg.val_dir)
    _, images = _batch(model, data, args.index, 1)
    pyramid, lixels = model.pose(images)
    verts = model.mesh(pyramid, decode_joints_soft(lixels))[0].numpy()
    faces = T.build_topology(model.preset, cfg.topology or None).faces
    lines = [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in verts]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in faces]
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"wrote {len(verts)} vertices, {len(faces)} faces to {args.out}")


def make_parser():
    parser = argparse.ArgumentParser(prog="handprompt", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--preset", choices=("paper", "desk"))
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--vocab", help="vocabulary file; must match the built-in one")
    common.add_argument("--set", type=_kv, action="append", metavar="KEY=VALUE",
                        help="override one config entry")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=2048)
    p.add_argument("--seed", dest="data_seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    for name, func, text in (("train", cmd_train, "train one model"),
                             ("ablate", cmd_ablate, "train and compare variants")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--train-dir")
        p.add_argument("--val-dir")
        p.add_argument("--out-dir")
        p.add_argument("--epochs", type=int)
        p.add_argument("--topology")
        p.set_defaults(func=func)
        if name == "train":
            p.add_argument("--seed", type=int)
        else:
            p.add_argument("--variants", default="full,no-clip")
            p.add_argument("--seeds", default="0,1,2")
            p.add_argument("--out", help="CSV path")

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", parents=[common], help="time the inference stages")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("export-matrix", parents=[common], help="write logit matrices")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--batch", type=int)
    p.add_argument("--pgm", action="store_true")
    p.set_defaults(func=cmd_export_matrix)

    p = sub.add_parser("export-mesh", parents=[common], help="write one predicted mesh as OBJ")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_mesh)
    return parser


def main(argv=None):
    logging.basicConfig(level=os.environ.get("HANDPROMPT_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = make_parser().parse_args(argv)
    try:
        _load_vocab(args.vocab)
        args.func(args)
    except HandPromptError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
