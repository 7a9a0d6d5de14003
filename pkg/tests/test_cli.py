import shutil
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from ducknet.cli import EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main, parse_args, read_config, UsageError
from ducknet.datapipe.split import read_manifest

TINY = ["--filters", "2", "--depth", "2", "--input-size", "32", "--batch-size", "4"]


@pytest.fixture(scope="module")
def split_file(synth_dir, tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "split.txt"
    assert main(["split", "--data", str(synth_dir), "--seed", "1", "--out", str(path)]) == EXIT_OK
    return path


@pytest.fixture(scope="module")
def ckpt(synth_dir, split_file, tmp_path_factory):
    out = tmp_path_factory.mktemp("ckpt") / "m.ckpt"
    rc = main(["train", "--data", str(synth_dir), "--split", str(split_file), "--epochs", "1",
               "--out", str(out), *TINY])
    assert rc == EXIT_OK
    return out


def test_split_sizes_and_bytes(synth_dir, split_file, tmp_path):
    m = read_manifest(split_file)
    assert (len(m.train), len(m.val), len(m.test)) == (8, 1, 1)
    again = tmp_path / "again.txt"
    main(["split", "--data", str(synth_dir), "--seed", "1", "--out", str(again)])
    assert again.read_bytes() == split_file.read_bytes()


def test_split_missing_masks(synth_dir, tmp_path, capsys):
    shutil.copytree(synth_dir / "images", tmp_path / "images")
    assert main(["split", "--data", str(tmp_path), "--out", str(tmp_path / "s.txt")]) == EXIT_USAGE
    assert "masks" in capsys.readouterr().err
    (tmp_path / "masks").mkdir()
    assert main(["split", "--data", str(tmp_path), "--out", str(tmp_path / "s.txt")]) == EXIT_USAGE
    err = capsys.readouterr().err
    # one diagnostic line per image lacking a mask
    assert err.count("no mask") == 10


def test_usage_errors(capsys):
    assert main([]) == EXIT_USAGE
    assert main(["verify", "--suite", "nope"]) == EXIT_USAGE
    assert main(["train", "--data", "x"]) == EXIT_USAGE


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# desk run\nfilters = 8\nbatch-size=2\ninput_size=64x32\nepochs=9\n\n")
    assert read_config(cfg) == {"filters": "8", "batch_size": "2", "input_size": "64x32", "epochs": "9"}
    args = parse_args(["train", "--data", "d", "--split", "s", "--out", "o", "--config", str(cfg),
                       "--epochs", "3"])
    assert (args.filters, args.batch_size, args.input_size, args.epochs) == (8, 2, (64, 32), 3)
    args = parse_args(["train", "--data", "d", "--split", "s", "--out", "o"])
    assert (args.filters, args.lr, args.batch_size, args.epochs, args.input_size) == \
        (17, 1e-4, 4, 600, (352, 352))
    bad = tmp_path / "bad.cfg"
    bad.write_text("filters 8\n")
    with pytest.raises(UsageError, match="key=value"):
        read_config(bad)
    assert main(["verify", "--suite", "rf", "--config", str(bad)]) == EXIT_USAGE


def test_train_writes_outputs(ckpt):
    history = ckpt.parent / "m.ckpt.history"
    assert ckpt.read_bytes().startswith(b"DUCKNET-CKPT 1\n")
    assert len(history.read_text().splitlines()) == 1
    assert (ckpt.parent / "m.ckpt.final").exists()


def test_eval_report(ckpt, synth_dir, split_file, tmp_path):
    report, csv = tmp_path / "r.txt", tmp_path / "r.csv"
    rc = main(["eval", "--ckpt", str(ckpt), "--data", str(synth_dir), "--split", str(split_file),
               "--section", "val", "--report", str(report), "--csv", str(csv), "--pooled", "1"])
    assert rc == EXIT_OK
    lines = report.read_text().splitlines()
    assert lines[0].split()[1:] == ["DSC", "Jaccard", "Precision", "Recall", "Accuracy"]
    assert lines[1].startswith("val mean (n=1)") and lines[2].startswith("SD")
    assert lines[3].startswith("pooled")
    assert csv.read_text().splitlines()[0] == "id,DSC,Jaccard,Precision,Recall,Accuracy"


def test_eval_checkpoint_mismatch_and_corrupt(ckpt, synth_dir, split_file, tmp_path, capsys):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(ckpt.read_bytes()[:-8])
    rc = main(["eval", "--ckpt", str(bad), "--data", str(synth_dir), "--split", str(split_file),
               "--report", str(tmp_path / "r.txt")])
    assert rc == EXIT_USAGE and "truncated" in capsys.readouterr().err


def test_predict(ckpt, synth_dir, tmp_path):
    img = sorted((synth_dir / "images").iterdir())[0]
    gt = synth_dir / "masks" / (img.stem + ".pgm")
    out, panel = tmp_path / "p.png", tmp_path / "panel.png"
    rc = main(["predict", "--ckpt", str(ckpt), "--image", str(img), "--out", str(out),
               "--panel", str(panel), "--gt", str(gt)])
    assert rc == EXIT_OK
    w, h = Image.open(img).size
    m = np.asarray(Image.open(out))
    assert m.shape == (h, w) and set(np.unique(m)) <= {0, 255}
    assert Image.open(panel).size == (3 * w, h)
    assert main(["predict", "--ckpt", str(ckpt), "--image", str(tmp_path / "none.png"),
                 "--out", str(out)]) == EXIT_USAGE


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_failure_exit_3(synth_dir, split_file, tmp_path, capsys):
    rc = main(["train", "--data", str(synth_dir), "--split", str(split_file), "--epochs", "3",
               "--lr", "1e38", "--out", str(tmp_path / "x.ckpt"), *TINY])
    assert rc == EXIT_NUMERIC
    assert "epoch" in capsys.readouterr().err
    assert not (tmp_path / "x.ckpt").exists()


def test_verify_rf_subprocess():
    res = subprocess.run([sys.executable, "-m", "ducknet.cli", "verify", "--suite", "rf"],
                         capture_output=True, text=True, timeout=300)
    assert res.returncode == 0, res.stderr
    lines = res.stdout.splitlines()
    assert len(lines) == 5 and all(l.startswith("PASS") for l in lines)
    for v in ("5", "9", "13", "7", "15"):
        assert any(v in l for l in lines)


def test_synth(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "s"), "--n", "3", "--size", "32"]) == EXIT_OK
    assert len(list((tmp_path / "s" / "images").iterdir())) == 3
