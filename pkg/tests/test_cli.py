import csv
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from wavereg.cli import main
from wavereg.imaging import ImageGrid, load_pgm, save_pgm
from wavereg.synthetic import texture
from wavereg.transforms import read_transform

HELP_FLAGS = {
    ("register",): ["--method", "--enhance", "--master", "--slave", "--model", "--out", "--report",
                    "--config", "--seed", "--checkpoints"],
    ("synth",): ["--input", "--truth", "--params", "--noise-sigma", "--gamma", "--degrade", "--seed", "--out-dir"],
    ("benchmark",): ["--suite", "--out", "--jobs"],
    ("wavelet", "decompose"): ["--type", "--levels", "--input", "--out-prefix"],
    ("wavelet", "points"): ["--type", "--levels", "--percentile", "--input", "--out", "--config"],
    ("sift", "keypoints"): ["--input", "--out", "--enhance", "--config"],
    ("sift", "match"): ["--master", "--slave", "--out", "--enhance", "--config"],
    ("pointset", "register"): ["--moving", "--fixed", "--model", "--sigma", "--out", "--config"],
}


@pytest.fixture(scope="module")
def images(tmp_path_factory):
    d = tmp_path_factory.mktemp("img")
    save_pgm(d / "tex.pgm", texture(128, 2))
    return d


@pytest.mark.parametrize("cmd", sorted(HELP_FLAGS))
def test_help_on_every_subcommand(cmd, capsys):
    assert main([*cmd, "--help"]) == 0
    out = capsys.readouterr().out
    for flag in HELP_FLAGS[cmd]:
        assert flag in out


def test_top_level_help_and_no_command(capsys):
    assert main(["--help"]) == 0
    assert main([]) == 1


def test_register_identical_sift(images, tmp_path):
    rc = main(["register", "--method", "sift", "--enhance", "none", "--master", str(images / "tex.pgm"),
               "--slave", str(images / "tex.pgm"), "--model", "affine", "--out", str(tmp_path / "t.txt"),
               "--report", str(tmp_path / "r.csv")])
    assert rc == 0
    t = read_transform(tmp_path / "t.txt")
    np.testing.assert_allclose(t.matrix(), np.eye(3), atol=1e-3)
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert len(rows) == 1 and rows[0]["status"] == "ok"


def test_register_bad_enhancement_is_usage_error(images, tmp_path, capsys):
    rc = main(["register", "--method", "mi", "--enhance", "dtcwt", "--master", str(images / "tex.pgm"),
               "--slave", str(images / "tex.pgm"), "--out", str(tmp_path / "t.txt")])
    assert rc == 1
    assert "none|dwt" in capsys.readouterr().err


def test_register_missing_slave(images, tmp_path, capsys):
    missing = tmp_path / "nope.pgm"
    rc = main(["register", "--method", "sift", "--master", str(images / "tex.pgm"),
               "--slave", str(missing), "--out", str(tmp_path / "t.txt")])
    assert rc == 1
    assert str(missing) in capsys.readouterr().err


def test_register_algorithm_failure_exit_two(tmp_path):
    flat = tmp_path / "flat.pgm"
    save_pgm(flat, ImageGrid(np.full((64, 64), 90.0)))
    rc = main(["register", "--method", "sift", "--master", str(flat), "--slave", str(flat),
               "--out", str(tmp_path / "t.txt")])
    assert rc == 2


def test_unknown_config_key(images, tmp_path, capsys):
    (tmp_path / "c.cfg").write_text("sift.keep_fraction = 0.5\nsift.kep_fraction = 0.4\n")
    rc = main(["register", "--method", "sift", "--master", str(images / "tex.pgm"),
               "--slave", str(images / "tex.pgm"), "--out", str(tmp_path / "t.txt"),
               "--config", str(tmp_path / "c.cfg")])
    assert rc == 1
    err = capsys.readouterr().err
    assert "kep_fraction" in err and ":2:" in err


def _synth(out, *extra):
    return main(["synth", "--input", "synthetic:texture:96:1", "--truth", "affine",
                 "--params", "1,0,0,0,1,0", "--out-dir", str(out), *extra])


def test_synth_identity_is_byte_identical_and_idempotent(tmp_path):
    assert _synth(tmp_path / "a") == 0
    a = tmp_path / "a"
    assert (a / "master.pgm").read_bytes() == (a / "slave.pgm").read_bytes()
    assert _synth(tmp_path / "b", "--noise-sigma", "3", "--seed", "5") == 0
    assert _synth(tmp_path / "c", "--noise-sigma", "3", "--seed", "5") == 0
    for name in ("master.pgm", "slave.pgm", "truth.txt", "checkpoints.csv"):
        assert (tmp_path / "b" / name).read_bytes() == (tmp_path / "c" / name).read_bytes()
    assert (tmp_path / "b" / "slave.pgm").read_bytes() != (a / "slave.pgm").read_bytes()


def test_synth_wrong_arity(tmp_path, capsys):
    rc = main(["synth", "--input", "synthetic:texture:64:1", "--truth", "affine", "--params", "1,0,0",
               "--out-dir", str(tmp_path)])
    assert rc == 1
    assert "6" in capsys.readouterr().err


def test_synth_overlap_violation_is_reported(tmp_path, capsys):
    rc = main(["synth", "--input", "synthetic:texture:64:1", "--truth", "translation", "--params", "50,0",
               "--out-dir", str(tmp_path)])
    assert rc == 1
    assert "overlap" in capsys.readouterr().err


def test_synth_then_register_with_checkpoints(tmp_path):
    assert main(["synth", "--input", "synthetic:texture:128:3", "--truth", "translation",
                 "--params", "5,-3", "--out-dir", str(tmp_path)]) == 0
    rc = main(["register", "--method", "mi", "--enhance", "dwt", "--model", "translation",
               "--master", str(tmp_path / "master.pgm"), "--slave", str(tmp_path / "slave.pgm"),
               "--out", str(tmp_path / "t.txt"), "--report", str(tmp_path / "r.csv"),
               "--checkpoints", str(tmp_path / "checkpoints.csv")])
    assert rc == 0
    row = next(csv.DictReader(open(tmp_path / "r.csv")))
    assert float(row["rmse_px"]) < 0.5


def test_wavelet_decompose_two_by_two(tmp_path):
    src = tmp_path / "s.pgm"
    src.write_text("P2\n2 2\n255\n1 2 3 4\n")
    assert main(["wavelet", "decompose", "--type", "haar", "--levels", "1", "--input", str(src),
                 "--out-prefix", str(tmp_path / "w")]) == 0
    rows = {(r["level"], r["band"]): r for r in csv.DictReader(open(tmp_path / "w_manifest.csv"))}
    assert float(rows[("1", "LL")]["min"]) == 5.0
    assert float(rows[("1", "HL")]["min"]) == -1.0
    assert float(rows[("1", "LH")]["min"]) == -2.0
    assert float(rows[("1", "HH")]["max"]) == 0.0
    for r in rows.values():
        img = load_pgm(tmp_path / r["file"])
        assert (img.width, img.height) == (1, 1)


def test_wavelet_decompose_too_deep(tmp_path):
    src = tmp_path / "s.pgm"
    save_pgm(src, texture(32, 1))
    rc = main(["wavelet", "decompose", "--type", "haar", "--levels", "10", "--input", str(src),
               "--out-prefix", str(tmp_path / "w")])
    assert rc == 1


def test_wavelet_points_csv(images, tmp_path):
    out = tmp_path / "p.csv"
    assert main(["wavelet", "points", "--input", str(images / "tex.pgm"), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "x,y,level,modulus" and len(lines) > 2


def test_sift_keypoints_and_match(images, tmp_path):
    kp = tmp_path / "k.csv"
    assert main(["sift", "keypoints", "--input", str(images / "tex.pgm"), "--out", str(kp),
                 "--enhance", "dtcwt"]) == 0
    header = kp.read_text().splitlines()[0].split(",")
    assert header[:5] == ["x", "y", "sigma", "orientation", "response"]
    assert header[-1] == "w11" and len(header) == 5 + 128 + 12
    mt = tmp_path / "m.csv"
    assert main(["sift", "match", "--master", str(images / "tex.pgm"), "--slave", str(images / "tex.pgm"),
                 "--out", str(mt)]) == 0
    rows = list(csv.DictReader(open(mt)))
    assert rows and all(r["src_idx"] == r["dst_idx"] for r in rows)


def test_pointset_register(tmp_path):
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 100, (30, 2))
    moved = pts + [4.0, -2.0]
    (tmp_path / "a.csv").write_text("x,y\n" + "\n".join(f"{x},{y}" for x, y in pts) + "\n")
    (tmp_path / "b.csv").write_text("x,y\n" + "\n".join(f"{x},{y}" for x, y in moved) + "\n")
    assert main(["pointset", "register", "--moving", str(tmp_path / "a.csv"), "--fixed", str(tmp_path / "b.csv"),
                 "--out", str(tmp_path / "t.txt")]) == 0
    t = read_transform(tmp_path / "t.txt")
    np.testing.assert_allclose(t.matrix()[:2, 2], [4.0, -2.0], atol=0.05)


def test_benchmark_example_suite(tmp_path):
    suite = Path(__file__).resolve().parent.parent / "suites" / "example.suite"
    out = tmp_path / "r.csv"
    assert main(["benchmark", "--suite", str(suite), "--out", str(out)]) == 0
    body = [ln for ln in out.read_text().splitlines() if not ln.startswith("#")]
    assert len(body) == 1 + 4


def test_benchmark_malformed_suite(tmp_path, capsys):
    (tmp_path / "bad.suite").write_text("trials = 2\n[pair]\nnoise_sigma = lots\n")
    assert main(["benchmark", "--suite", str(tmp_path / "bad.suite"), "--out", str(tmp_path / "r.csv")]) == 1
    assert "bad.suite:3" in capsys.readouterr().err


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "wavereg.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "benchmark" in proc.stdout
