import csv

import numpy as np
import pytest

from halfcnn import io
from halfcnn.cli import main


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--n", "4", "--canvas", "64", "--factor", "4", "--seed", "1", "--out-dir", str(d)]) == 0
    return d


@pytest.fixture(scope="module")
def trained(synth_dir):
    ckpt = synth_dir / "net.ckpt"
    trace = synth_dir / "trace.csv"
    rc = main(["train", "--manifest", str(synth_dir / "manifest.tsv"), "--spec-file", "synth",
               "--canvas", "64", "--factor", "4", "--max-iter", "3", "--seed", "0",
               "--out", str(ckpt), "--trace", str(trace)])
    assert rc == 0
    return ckpt


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_synth_writes_manifest(synth_dir):
    recs = io.read_manifest(synth_dir / "manifest.tsv")
    assert len(recs) == 4 and all(r.kind == "windows" for r in recs)


def test_train_writes_checkpoint_and_trace(trained):
    net = io.load_checkpoint(trained)
    assert net.factor == 4
    rows = read_csv(trained.parent / "trace.csv")
    values = [float(r[1]) for r in rows[1:]]
    assert rows[0][0] == "iteration" and values[-1] < values[0]


def test_predict_map_in_open_interval(trained, synth_dir, tmp_path):
    out = tmp_path / "p.map"
    assert main(["predict", "--ckpt", str(trained), "--image", str(synth_dir / "img00000.pgm"),
                 "--out-map", str(out)]) == 0
    m = io.read_raw_map(out)
    assert m.shape == (1, 16, 16) and np.all((m > 0) & (m < 1))
    assert main(["predict", "--ckpt", str(trained), "--image", str(synth_dir / "img00000.pgm"),
                 "--out-map", str(tmp_path / "p.pgm")]) == 0
    assert io.read_image(tmp_path / "p.pgm").shape == (1, 16, 16)


def test_eval_detection_on_ground_truth_maps(synth_dir, tmp_path):
    gt = tmp_path / "gt"
    assert main(["make-gt", "--manifest", str(synth_dir / "manifest.tsv"), "--canvas", "64",
                 "--factor", "4", "--out-dir", str(gt)]) == 0
    assert (gt / "img00000.map").exists() and (gt / "img00000.pgm").exists()
    out = tmp_path / "det.csv"
    assert main(["eval-detection", "--maps", str(gt), "--factor", "4",
                 "--manifest", str(synth_dir / "manifest.tsv"), "--out", str(out)]) == 0
    rows = read_csv(out)
    assert rows[0] == ["image_id", "n_truth", "n_predicted", "n_matched", "rate"]
    assert rows[-1][0] == "__all__" and float(rows[-1][-1]) == 1.0


def test_eval_detection_with_checkpoint(trained, synth_dir, tmp_path):
    out = tmp_path / "det.csv"
    assert main(["eval-detection", "--ckpt", str(trained), "--manifest", str(synth_dir / "manifest.tsv"),
                 "--iou", "0.5", "--threshold", "0.2", "--out", str(out)]) == 0
    assert len(read_csv(out)) == 6


def test_eval_saliency(trained, synth_dir, tmp_path):
    lines = []
    for i in range(3):
        pts = np.random.default_rng(i).integers(0, 64, size=(6, 2))
        lines.append(f"img{i:05d}.pgm\tfixations\t" + ";".join(f"{x},{y}" for x, y in pts))
    manifest = synth_dir / "fix.tsv"
    manifest.write_text("\n".join(lines) + "\n")
    out1, out2 = tmp_path / "s1.csv", tmp_path / "s2.csv"
    for out in (out1, out2):
        assert main(["eval-saliency", "--ckpt", str(trained), "--manifest", str(manifest),
                     "--top-frac", "0.05", "--sauc-rounds", "20", "--seed", "3", "--out", str(out)]) == 0
    rows = read_csv(out1)
    assert rows[0] == ["image_id", "auc", "sauc"] and len(rows) == 5
    assert all(0.0 <= float(r[1]) <= 1.0 for r in rows[1:])
    assert out1.read_bytes() == out2.read_bytes()


def test_gradcheck_toy_exits_zero(capsys):
    assert main(["gradcheck", "--spec-file", "toy", "--tol", "1e-6"]) == 0
    out = capsys.readouterr().out
    assert "gradcheck PASSED" in out and "combiner.bias" in out


def test_gradcheck_failure_exit_code(capsys):
    # an impossible tolerance must fail
    assert main(["gradcheck", "--spec-file", "toy", "--tol", "1e-300", "--skip-layers"]) == 1


def test_usage_and_runtime_errors(synth_dir, tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 2
    assert main(["predict", "--ckpt", str(tmp_path / "none.ckpt"), "--image", "x", "--out-map", "y"]) == 1
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOPE")
    assert main(["predict", "--ckpt", str(bad), "--image", str(synth_dir / "img00000.pgm"),
                 "--out-map", str(tmp_path / "o.map")]) == 1
    assert "magic" in capsys.readouterr().err
    assert main(["train", "--manifest", str(synth_dir / "manifest.tsv"), "--spec-file", "synth",
                 "--factor", "2", "--canvas", "64", "--out", str(tmp_path / "x.ckpt")]) == 1
