import subprocess
import sys

import numpy as np
import pytest

from sargnn.checkpoint import Checkpoint, load, save
from sargnn.cli import main
from sargnn.config import RunConfig, format_run_config, parse_run_config
from sargnn.errors import ConfigError
from sargnn.model import default_config, init_params


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


# -- run configuration ---------------------------------------------------------------


def test_config_round_trip():
    cfg = RunConfig(layer_type="gat", connectivity=4, epochs=3, iv=0.1, out_dir="x")
    assert parse_run_config(format_run_config(cfg)) == cfg


def test_config_comments_and_errors():
    cfg = parse_run_config("# header\nepochs = 5  # short run\n\nvertex_attention = false\n")
    assert cfg.epochs == 5 and cfg.vertex_attention is False
    for text, msg in [("colour = red", "line 1: unknown key"),
                      ("epochs = 1\nepochs = 2", "line 2: duplicate"),
                      ("epochs = many", "bad value"),
                      ("vertex_attention = maybe", "bad value"),
                      ("just words", "expected"),
                      ("layer_type = mlp", "layer_type"),
                      ("connectivity = 6", "connectivity"),
                      ("iv = -1", "iv")]:
        with pytest.raises(ConfigError, match=msg):
            parse_run_config(text)


def test_config_override_skips_none():
    cfg = RunConfig().override(epochs=None, lr0=0.5)
    assert cfg.epochs == 150 and cfg.lr0 == 0.5


def test_config_commands(capsys, tmp_path):
    code, out, _ = run(capsys, "config", "--print-default")
    assert code == 0 and "lr0 = 0.02" in out and "connectivity = 8" in out
    (tmp_path / "c.txt").write_text("epochs = 3\n")
    code, out, _ = run(capsys, "config", "--check", str(tmp_path / "c.txt"))
    assert code == 0 and "epochs = 3" in out
    (tmp_path / "bad.txt").write_text("epochz = 3\n")
    code, _, err = run(capsys, "config", "--check", str(tmp_path / "bad.txt"))
    assert code == 2 and "unknown key" in err


# -- pipeline --------------------------------------------------------------------


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out", str(out), "--classes", "3", "--per-class", "5",
                 "--seed", "7"]) == 0
    return out


def test_synth_counts_and_determinism(synth_dir, tmp_path, capsys):
    assert len((synth_dir / "train.txt").read_text().splitlines()) == 1 + 12
    assert len((synth_dir / "test.txt").read_text().splitlines()) == 1 + 3
    code, out, _ = run(capsys, "synth", "--out", str(tmp_path), "--classes", "3",
                       "--per-class", "5", "--seed", "7")
    assert code == 0 and out.startswith("train\t")
    for f in synth_dir.iterdir():
        assert (tmp_path / f.name).read_bytes() == f.read_bytes()


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as info:
        main(["synth"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        main(["train", "--connectivity", "6"])
    assert info.value.code == 2
    code, _, err = run(capsys, "train")
    assert code == 2 and "manifest" in err


@pytest.fixture(scope="module")
def trained(synth_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = main(["train", "--train", str(synth_dir / "train.txt"), "--val",
                 str(synth_dir / "test.txt"), "--out", str(out), "--num-classes", "3",
                 "--epochs", "2", "--batch-size", "4", "--lr0", "0.002", "--seed", "1"])
    assert code == 0
    return out


def test_train_outputs(trained):
    history = (trained / "history.tsv").read_text().splitlines()
    assert history[0] == "epoch\tlr\ttrain_loss\ttrain_acc\tval_acc" and len(history) == 3
    ck = load(trained / "model.ckpt")
    assert ck.config.num_classes == 3 and ck.seed == 1


def test_train_class_mismatch(synth_dir, tmp_path, capsys):
    code, _, err = run(capsys, "train", "--train", str(synth_dir / "train.txt"), "--out",
                       str(tmp_path), "--epochs", "1")
    assert code == 3 and "classes" in err


def test_eval_and_single_point_sweep(trained, synth_dir, capsys):
    code, out, _ = run(capsys, "eval", "--checkpoint", str(trained / "model.ckpt"), "--data",
                       str(synth_dir / "test.txt"))
    lines = out.splitlines()
    assert code == 0 and lines[0].startswith("accuracy\t") and len(lines[0].split("\t")[1]) == 6
    assert lines[1] == "true\\pred\t0\t1\t2"
    assert sum(int(v) for row in lines[2:] for v in row.split("\t")[1:]) == 3
    acc = lines[0].split("\t")[1]
    code, out, _ = run(capsys, "sweep", "--checkpoint", str(trained / "model.ckpt"), "--data",
                       str(synth_dir / "test.txt"), "--iv-list", "0", "--iw-list", "0")
    rows = out.splitlines()
    assert rows[0] == "iv\tiw\tvtx_pruned_pct\tw_pruned_pct\tacc\tflops"
    assert rows[1].split("\t")[4] == acc


def test_sweep_sorted(trained, synth_dir, capsys, tmp_path):
    code, out, _ = run(capsys, "sweep", "--checkpoint", str(trained / "model.ckpt"), "--data",
                       str(synth_dir / "test.txt"), "--iv-list", "0.1,0", "--iw-list",
                       "0.01,0", "--out", str(tmp_path / "s.tsv"))
    keys = [tuple(r.split("\t")[:2]) for r in out.splitlines()[1:]]
    assert keys == [("0", "0"), ("0", "0.01"), ("0.1", "0"), ("0.1", "0.01")]
    assert (tmp_path / "s.tsv").read_text() == out


def test_prune_zero_threshold(trained, tmp_path, capsys):
    code, out, _ = run(capsys, "prune", "--checkpoint", str(trained / "model.ckpt"), "--iw", "0",
                       "--out", str(tmp_path / "p.ckpt"))
    assert code == 0 and out.splitlines()[0] == "name\tpruned_pct"
    assert out.splitlines()[-1] == "overall\t0.0000"
    a, b = load(trained / "model.ckpt"), load(tmp_path / "p.ckpt")
    assert all(m.all() for m in b.params.masks.values())
    for k in a.params.values:
        np.testing.assert_array_equal(a.params.values[k], b.params.values[k])


def test_malformed_checkpoint_exit_code(tmp_path, synth_dir, capsys):
    (tmp_path / "bad.ckpt").write_bytes(b"garbage")
    code, _, err = run(capsys, "eval", "--checkpoint", str(tmp_path / "bad.ckpt"), "--data",
                       str(synth_dir / "test.txt"))
    assert code == 3 and "bad magic" in err
    code, _, _ = run(capsys, "eval", "--checkpoint", str(tmp_path / "none.ckpt"), "--data",
                     str(synth_dir / "test.txt"))
    assert code == 3


def test_flops_command(capsys, tmp_path, synth_dir):
    code, out, _ = run(capsys, "flops", "--baseline-flops", "6.94e9")
    assert code == 0 and "FLOPs per sample: 14174766" in out and "1/489.6" in out
    code, out, _ = run(capsys, "flops", "--tsv", "--layer-type", "gcn", "--connectivity", "4")
    assert code == 0 and out.splitlines()[1].split("\t")[1] == "gcn"
    cfg = default_config(num_classes=3)
    save(tmp_path / "m.ckpt", Checkpoint(cfg, init_params(cfg, 0)))
    code, out, _ = run(capsys, "flops", "--checkpoint", str(tmp_path / "m.ckpt"), "--data",
                       str(synth_dir / "test.txt"), "--iv", "0.1", "--tsv")
    assert code == 0
    code, _, err = run(capsys, "flops", "--iv", "0.1")
    assert code == 2


def test_flops_empty_input_has_no_aggregation(capsys, tmp_path):
    from sargnn.data import write_manifest, write_sample
    from sargnn.graph import ImageSample
    (tmp_path / "z.sgr").write_bytes(write_sample(ImageSample(np.zeros((32, 32, 1)), 0)))
    write_manifest(tmp_path / "m.txt", ["z.sgr"], 10)
    code, out, _ = run(capsys, "flops", "--data", str(tmp_path / "m.txt"), "--iv", "0.1", "--tsv")
    rows = [r.split("\t") for r in out.splitlines()[1:-1]]
    assert code == 0 and all(r[4] == "0" for r in rows)


def test_gradcheck_command(capsys):
    code, out, _ = run(capsys, "gradcheck")
    header, row = out.splitlines()
    assert code == 0 and header.startswith("max_rel_err") and row.endswith("PASS")
    assert float(row.split("\t")[0]) <= 1e-4
    code, out, _ = run(capsys, "gradcheck", "--stack", "flatten:1:1,fc:64:10",
                       "--tolerance", "1e-8")
    assert code == 0 and float(out.splitlines()[1].split("\t")[0]) <= 1e-8
    code, out, _ = run(capsys, "gradcheck", "--tolerance", "1e-30")
    assert code == 5 and out.splitlines()[1].endswith("FAIL")


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "sargnn", "config", "--print-default"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "batch_size = 20" in res.stdout
