"""Command-line interface: ``wavereg register|synth|benchmark|wavelet|sift|pointset``.

Exit codes: 0 success, 1 usage or input error, 2 registration failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from . import harness
from .config import Config, ConfigError
from .imaging import (
    ImageError,
    ImageGrid,
    SyntheticPairSpec,
    load_pgm,
    make_synthetic_pair,
    resample,
    save_pgm,
)
from .metrics import MetricError, checkpoint_grid, nccc, nccc_display, rmse_checkpoints, runtime_class
from .mi import MIError
from .pointset import PointSet, PointSetError, read_points, register_pointset
from .registration import ENHANCEMENTS, METHODS, NOTES, UsageError, register, validate
from .sift import SiftError, describe, match_descriptors
from .synthetic import scene
from .transforms import (
    N_COEFFS,
    Correspondence,
    TransformError,
    TransformModel,
    invert,
    write_transform,
)
from .wavelet import WaveletError, dtcwt, dwt_haar, wavelet_control_points

EXIT_OK, EXIT_USAGE, EXIT_FAILED = 0, 1, 2
ALGORITHM_ERRORS = (SiftError, MIError, PointSetError, TransformError, MetricError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def load_image(spec: str) -> ImageGrid:
    """A PGM path, or ``synthetic:NAME[:SIZE[:SEED]]`` for a procedural scene."""
    if spec.startswith("synthetic:"):
        parts = spec.split(":")
        try:
            return scene(parts[1], int(parts[2]) if len(parts) > 2 else 256, int(parts[3]) if len(parts) > 3 else 0)
        except (IndexError, ValueError) as e:
            raise UsageError(f"bad synthetic image spec {spec!r}: {e}") from None
    path = Path(spec)
    if not path.is_file():
        raise UsageError(f"input image not found: {path}")
    return load_pgm(path)


def load_config(path) -> Config:
    if path is None:
        return Config()
    if not Path(path).is_file():
        raise UsageError(f"config file not found: {path}")
    return Config.from_file(path)


def read_checkpoints(path) -> list[Correspondence]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(Correspondence((float(row["src_x"]), float(row["src_y"])),
                                      (float(row["dst_x"]), float(row["dst_y"]))))
    return out


def write_checkpoints(path, checks) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src_x", "src_y", "dst_x", "dst_y"])
        for c in checks:
            w.writerow([f"{v:.17g}" for v in (*c.src, *c.dst)])


# ---------------------------------------------------------------------------
# Subcommands


def cmd_register(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.set("seed", args.seed)
    model = args.model or {"sift": "affine", "mi": cfg["mi.model"], "pointset": cfg["pointset.model"]}[args.method]
    validate(args.method, args.enhance, model)
    master = load_image(args.master)
    slave = load_image(args.slave)
    t0 = time.perf_counter()
    try:
        t = register(args.method, args.enhance, master, slave, model, cfg)
    except ALGORITHM_ERRORS as e:
        print(f"registration failed: {e}", file=sys.stderr)
        if args.report:
            _write_single_report(args, model, cfg, None, None, time.perf_counter() - t0, f"{type(e).__name__}: {e}")
        return EXIT_FAILED
    elapsed = time.perf_counter() - t0
    write_transform(args.out, t)
    if args.report:
        raw = None
        try:
            h, w = master.shape
            moved, valid = resample(slave, invert(t), w, h)
            raw = nccc(master, moved, valid)
        except (TransformError, MetricError):
            pass
        rmse = rmse_checkpoints(t, read_checkpoints(args.checkpoints)) if args.checkpoints else None
        _write_single_report(args, model, cfg, raw, rmse, elapsed, None)
    return EXIT_OK


def _write_single_report(args, model, cfg, raw, rmse, elapsed, error):
    notes = NOTES.get((args.method, args.enhance), "")
    if error:
        notes = ";".join(n for n in (notes, error.replace(",", ";")) if n)
    r = harness.RegistrationReport(
        Path(args.master).stem, args.method, args.enhance, model, 0, cfg["seed"], raw,
        None if raw is None else nccc_display(raw), rmse, elapsed, runtime_class(elapsed),
        "error" if error else "ok", notes,
    )
    with open(args.report, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(harness.COLUMNS)
        w.writerow(harness.report_row(r))


def _parse_params(kind: str, text: str) -> TransformModel:
    if kind == "polynomial2":
        raise UsageError("synthetic truth must be invertible: translation|similarity|affine")
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--params must be comma-separated numbers, got {text!r}") from None
    if len(vals) != N_COEFFS[kind]:
        raise UsageError(f"--truth {kind} expects {N_COEFFS[kind]} parameters, got {len(vals)}")
    return TransformModel(kind, vals)


def cmd_synth(args) -> int:
    truth = _parse_params(args.truth, args.params)
    base = load_image(args.input)
    spec = SyntheticPairSpec(truth, args.noise_sigma, args.gamma, args.degrade, args.seed)
    master, slave, t = make_synthetic_pair(base, spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_pgm(out / "master.pgm", master)
    save_pgm(out / "slave.pgm", slave)
    write_transform(out / "truth.txt", t)
    write_checkpoints(out / "checkpoints.csv", checkpoint_grid(t, master.width, master.height))
    return EXIT_OK


def cmd_benchmark(args) -> int:
    if not Path(args.suite).is_file():
        raise UsageError(f"suite file not found: {args.suite}")
    harness.run_benchmark(args.suite, args.out, jobs=args.jobs)
    return EXIT_OK


def _rescale(arr: np.ndarray) -> np.ndarray:
    lo, hi = float(arr.min()), float(arr.max())
    if hi <= lo:
        return np.zeros_like(arr)
    return (arr - lo) * (255.0 / (hi - lo))


def cmd_wavelet_decompose(args) -> int:
    img = load_image(args.input)
    prefix = args.out_prefix
    Path(prefix).parent.mkdir(parents=True, exist_ok=True)
    entries = []
    if args.type == "haar":
        dec = dwt_haar(img, args.levels)
        for k, (lh, hl, hh) in enumerate(dec.details, 1):
            for name, band in (("LH", lh), ("HL", hl), ("HH", hh)):
                entries.append((f"{prefix}_L{k}_{name}.pgm", k, name, band))
        entries.append((f"{prefix}_L{dec.levels}_LL.pgm", dec.levels, "LL", dec.approximation))
    else:
        dec = dtcwt(img, args.levels)
        for k, bands in enumerate(dec.highpasses, 1):
            for j in range(6):
                entries.append((f"{prefix}_L{k}_B{j}_mag.pgm", k, f"B{j}_mag", np.abs(bands[:, :, j])))
        entries.append((f"{prefix}_L{dec.levels}_lowpass.pgm", dec.levels, "lowpass", dec.lowpass))
    with open(f"{prefix}_manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["file", "level", "band", "width", "height", "min", "max"])
        for path, level, name, band in entries:
            save_pgm(path, _rescale(band))
            w.writerow([Path(path).name, level, name, band.shape[1], band.shape[0],
                        f"{band.min():.17g}", f"{band.max():.17g}"])
    return EXIT_OK


def cmd_wavelet_points(args) -> int:
    img = load_image(args.input)
    cfg = load_config(args.config)
    levels = cfg["wavelet.levels"] if args.levels is None else args.levels
    pct = cfg["wavelet.threshold_percentile"] if args.percentile is None else args.percentile
    cps = wavelet_control_points(img, levels, pct, args.type)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "level", "modulus"])
        for c in cps:
            w.writerow([f"{c.x:.17g}", f"{c.y:.17g}", c.level, f"{c.modulus:.17g}"])
    return EXIT_OK


def _write_keypoints(path, kps, descs, with_signature):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["x", "y", "sigma", "orientation", "response"] + [f"v{i}" for i in range(128)]
        if with_signature:
            head += [f"w{i}" for i in range(12)]
        w.writerow(head)
        for kp, d in zip(kps, descs):
            row = [kp.x, kp.y, kp.sigma, kp.orientation, kp.response, *d.values]
            if with_signature:
                row += list(d.wavelet_signature)
            w.writerow([f"{v:.9g}" for v in row])


def cmd_sift_keypoints(args) -> int:
    cfg = load_config(args.config)
    img = load_image(args.input)
    kps, descs = describe(img, cfg.sift(), args.enhance == "dtcwt")
    _write_keypoints(args.out, kps, descs, args.enhance == "dtcwt")
    return EXIT_OK


def cmd_sift_match(args) -> int:
    cfg = load_config(args.config)
    sc = cfg.sift()
    enhance = args.enhance == "dtcwt"
    _, da = describe(load_image(args.slave), sc, enhance)
    _, db = describe(load_image(args.master), sc, enhance)
    matches = match_descriptors(da, db, sc.alpha if enhance else 1.0, sc.ratio_max)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src_idx", "dst_idx", "distance", "ratio"])
        for m in matches:
            w.writerow([m.source_index, m.target_index, f"{m.distance:.9g}", f"{m.ratio:.9g}"])
    return EXIT_OK


def cmd_pointset_register(args) -> int:
    for p in (args.moving, args.fixed):
        if not Path(p).is_file():
            raise UsageError(f"point file not found: {p}")
    cfg = load_config(args.config)
    a = PointSet(read_points(args.moving), args.sigma)
    b = PointSet(read_points(args.fixed), args.sigma)
    try:
        t, _ = register_pointset(a, b, cfg.pointset(args.model))
    except ALGORITHM_ERRORS as e:
        print(f"registration failed: {e}", file=sys.stderr)
        return EXIT_FAILED
    write_transform(args.out, t)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wavereg", description="Wavelet-enhanced image registration toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("register", help="register a slave image onto a master image")
    r.add_argument("--method", required=True, choices=METHODS)
    r.add_argument("--enhance", default="none",
                   help="sift: none|dtcwt; mi: none|dwt; pointset: none|dtcwt")
    r.add_argument("--master", required=True, help="master image (PGM)")
    r.add_argument("--slave", required=True, help="slave image (PGM)")
    r.add_argument("--model", help="transform kind (default depends on method)")
    r.add_argument("--out", required=True, help="output transform file (slave -> master)")
    r.add_argument("--report", help="optional single-row report CSV")
    r.add_argument("--checkpoints", help="checkpoints CSV from 'synth' for the report RMSE")
    r.add_argument("--config", help="key = value config overrides")
    r.add_argument("--seed", type=int, help="seed for randomised steps (overrides config)")
    r.set_defaults(func=cmd_register)

    s = sub.add_parser("synth", help="make a synthetic master/slave pair with known truth")
    s.add_argument("--input", required=True, help="base image: PGM path or synthetic:texture[:SIZE[:SEED]]")
    s.add_argument("--truth", required=True, choices=("translation", "similarity", "affine", "polynomial2"))
    s.add_argument("--params", required=True, help="comma-separated truth coefficients (master -> slave)")
    s.add_argument("--noise-sigma", type=float, default=0.0)
    s.add_argument("--gamma", type=float, default=1.0)
    s.add_argument("--degrade", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_synth)

    b = sub.add_parser("benchmark", help="run a benchmark suite and write the report CSV")
    b.add_argument("--suite", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--jobs", type=int, default=1)
    b.set_defaults(func=cmd_benchmark)

    w = sub.add_parser("wavelet", help="wavelet inspection tools")
    wsub = w.add_subparsers(dest="wavelet_command", required=True, parser_class=_Parser)
    d = wsub.add_parser("decompose", help="write subbands as PGM plus a CSV manifest")
    d.add_argument("--type", required=True, choices=("haar", "dtcwt"))
    d.add_argument("--levels", required=True, type=int)
    d.add_argument("--input", required=True)
    d.add_argument("--out-prefix", required=True)
    d.set_defaults(func=cmd_wavelet_decompose)
    c = wsub.add_parser("points", help="modulus-maxima control points as CSV x,y,level,modulus")
    c.add_argument("--type", default="haar", choices=("haar", "dtcwt"))
    c.add_argument("--levels", type=int, help="detection level (default: wavelet.levels)")
    c.add_argument("--percentile", type=float, help="modulus threshold percentile (default: wavelet.threshold_percentile)")
    c.add_argument("--config")
    c.add_argument("--input", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_wavelet_points)

    f = sub.add_parser("sift", help="SIFT keypoints and matches")
    fsub = f.add_subparsers(dest="sift_command", required=True, parser_class=_Parser)
    k = fsub.add_parser("keypoints", help="keypoints and descriptors as CSV")
    k.add_argument("--input", required=True)
    k.add_argument("--out", required=True)
    k.add_argument("--enhance", default="none", choices=ENHANCEMENTS["sift"])
    k.add_argument("--config")
    k.set_defaults(func=cmd_sift_keypoints)
    m = fsub.add_parser("match", help="slave-to-master descriptor matches as CSV")
    m.add_argument("--master", required=True)
    m.add_argument("--slave", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--enhance", default="none", choices=ENHANCEMENTS["sift"])
    m.add_argument("--config")
    m.set_defaults(func=cmd_sift_match)

    q = sub.add_parser("pointset", help="standalone point-cloud registration")
    qsub = q.add_subparsers(dest="pointset_command", required=True, parser_class=_Parser)
    pr = qsub.add_parser("register", help="register moving points onto fixed points")
    pr.add_argument("--moving", required=True, help="CSV x,y")
    pr.add_argument("--fixed", required=True, help="CSV x,y")
    pr.add_argument("--model", default="rigid", choices=("rigid", "affine"))
    pr.add_argument("--sigma", type=float, default=2.0, help="mixture kernel bandwidth")
    pr.add_argument("--out", required=True)
    pr.add_argument("--config")
    pr.set_defaults(func=cmd_pointset_register)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as e:  # --help
        return int(e.code or 0)
    except (UsageError, ConfigError, harness.SuiteError, ImageError, WaveletError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
