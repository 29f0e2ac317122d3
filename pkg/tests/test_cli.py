import json

import numpy as np
import pytest

from handprompt.cli import main
from handprompt.matching import read_matrix


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-data", "--out", str(root / "train"), "--count", "24", "--seed", "0"]) == 0
    assert main(["gen-data", "--out", str(root / "val"), "--count", "8", "--seed", "999"]) == 0
    cfg = root / "run.cfg"
    cfg.write_text(f"train_dir = {root / 'train'}\nval_dir = {root / 'val'}\n"
                   f"out_dir = {root / 'run'}\nepochs = 1\nbatch_size = 8\nmax_batches = 2\n")
    assert main(["train", "--config", str(cfg), "--set", "pairs_per_batch=2"]) == 0
    return root


def test_train_outputs(workdir):
    assert (workdir / "run" / "checkpoint.pt").is_file()
    assert (workdir / "run" / "train_log.csv").is_file()


def test_eval_json(workdir, capsys):
    out = workdir / "report.json"
    assert main(["eval", "--checkpoint", str(workdir / "run" / "checkpoint.pt"), "--json", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["units"] == "bins"
    assert set(rep["retrieval"]) == {"x", "y", "z"}


def test_bench(workdir, capsys):
    assert main(["bench", "--checkpoint", str(workdir / "run" / "checkpoint.pt"), "--runs", "100",
                 "--warmup", "2"]) == 0
    text = capsys.readouterr().out
    assert "pose_feature_generation" in text and "mesh_regressor" in text and "total" in text


def test_export_matrix(workdir):
    out = workdir / "mats"
    assert main(["export-matrix", "--checkpoint", str(workdir / "run" / "checkpoint.pt"),
                 "--out", str(out), "--pgm"]) == 0
    m = read_matrix(out / "logits_m_lr.csv")
    assert m.shape == (8, 8)
    assert (out / "logits_m_nf.pgm").read_bytes().startswith(b"P5\n8 8\n255\n")


def test_export_mesh(workdir):
    out = workdir / "mesh.obj"
    assert main(["export-mesh", "--checkpoint", str(workdir / "run" / "checkpoint.pt"),
                 "--index", "2", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert sum(l.startswith("v ") for l in lines) == 642
    assert sum(l.startswith("f ") for l in lines) == 1280
    faces = np.array([[int(t) for t in l.split()[1:]] for l in lines if l.startswith("f ")])
    assert faces.min() == 1 and faces.max() == 642


def test_errors_are_one_line(tmp_path, capsys):
    assert main(["eval", "--checkpoint", str(tmp_path / "missing.pt")]) != 0
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error: ")
    assert main(["train", "--set", f"train_dir={tmp_path}/none", "--set", f"out_dir={tmp_path}/o"]) == 2
    assert capsys.readouterr().err.startswith("error: missing_dataset: ")


def test_vocab_flag(tmp_path, capsys):
    bad = tmp_path / "vocab.txt"
    bad.write_text("<pad>\n<bos>\n<eos>\nfrom\n")
    code = main(["gen-data", "--vocab", str(bad), "--out", str(tmp_path / "d"), "--count", "1"])
    assert code == 2 and "vocab_mismatch" in capsys.readouterr().err
