"""Seeded benchmark runner comparing baseline and wavelet-enhanced registration."""

from __future__ import annotations

import csv
import io
import math
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .config import Config, ConfigError, parse_value
from .imaging import (
    ImageGrid,
    SyntheticPairSpec,
    as_array,
    load_pgm,
    make_synthetic_pair,
    resample,
    slave_validity,
)
from .metrics import checkpoint_grid, nccc, nccc_display, rmse_checkpoints, runtime_class
from .registration import NOTES, UsageError, register, validate
from .synthetic import scene
from .transforms import TransformError, TransformModel, invert

COLUMNS = (
    "pair", "method", "enhancement", "model", "trial", "seed", "nccc_raw", "nccc_display",
    "rmse_px", "runtime_s", "runtime_class", "status", "notes",
)
RUNTIME_COLUMNS = ("runtime_s", "runtime_class")


class SuiteError(ValueError):
    pass


@dataclass
class PairSpec:
    name: str = "texture"
    image: str = "synthetic:texture:256:0"
    noise_sigma: float = 0.0
    gamma: float = 1.0
    degrade: int = 1
    rotation_max: float = 0.0  # degrees
    translation_max: float = 0.0  # full-resolution pixels
    scale_max: float = 1.0


@dataclass
class CellSpec:
    method: str = "sift"
    enhancement: str = "none"
    model: str = "similarity"
    tag: str = ""
    overrides: dict = field(default_factory=dict)


@dataclass
class Suite:
    name: str = "suite"
    seed: int = 0
    trials: int = 1
    pairs: list = field(default_factory=list)
    cells: list = field(default_factory=list)
    overrides: dict = field(default_factory=dict)
    root: Path = Path(".")


@dataclass
class RegistrationReport:
    pair: str
    method: str
    enhancement: str
    model: str
    trial: int
    seed: int
    nccc_raw: float | None
    nccc_display: float | None
    rmse_px: float | None
    runtime_s: float
    runtime_class: str
    status: str = "ok"
    notes: str = ""
    tag: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def sort_key(self):
        return (self.pair, self.method, self.enhancement, self.tag, self.trial)


# ---------------------------------------------------------------------------
# Suite files


_PAIR_KEYS = {f.name: f.type for f in fields(PairSpec)}
_CELL_KEYS = ("method", "enhancement", "model", "tag")


def _coerce(obj, key, value, where):
    current = getattr(obj, key)
    try:
        if isinstance(current, int) and not isinstance(current, bool):
            value = int(value)
        elif isinstance(current, float):
            value = float(value)
    except ValueError:
        raise SuiteError(f"{where}: bad value {value!r} for {key}") from None
    setattr(obj, key, value)


def parse_suite(text: str, source: str = "<suite>", root: Path | None = None) -> Suite:
    """Parse a suite: global ``key = value`` lines, then ``[pair]`` and ``[cell]`` sections.

    Keys containing a dot are config overrides (globally or per cell).
    """
    suite = Suite(root=root or Path("."))
    section = None
    current = None
    for n, raw in enumerate(text.splitlines(), 1):
        where = f"{source}:{n}"
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if line == "[pair]":
                current = PairSpec()
                suite.pairs.append(current)
            elif line == "[cell]":
                current = CellSpec()
                suite.cells.append(current)
            else:
                raise SuiteError(f"{where}: unknown section {line!r}; expected [pair] or [cell]")
            section = line
            continue
        if "=" not in line:
            raise SuiteError(f"{where}: expected 'key = value', got {raw.strip()!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if "." in key:
            try:
                parsed = parse_value(key, value)
            except ConfigError as e:
                raise SuiteError(f"{where}: {e}") from None
            (suite.overrides if section != "[cell]" else current.overrides)[key] = parsed
        elif section is None:
            if key == "name":
                suite.name = value
            elif key in ("seed", "trials"):
                _coerce(suite, key, value, where)
            else:
                raise SuiteError(f"{where}: unknown suite key {key!r}")
        elif section == "[pair]":
            if key not in _PAIR_KEYS:
                raise SuiteError(f"{where}: unknown pair key {key!r}")
            _coerce(current, key, value, where)
        else:
            if key not in _CELL_KEYS:
                raise SuiteError(f"{where}: unknown cell key {key!r}")
            setattr(current, key, value)
    if not suite.pairs:
        raise SuiteError(f"{source}: suite defines no [pair] section")
    if not suite.cells:
        raise SuiteError(f"{source}: suite defines no [cell] section")
    if suite.trials < 1:
        raise SuiteError(f"{source}: trials must be >= 1")
    for i, cell in enumerate(suite.cells, 1):
        try:
            validate(cell.method, cell.enhancement, cell.model)
        except UsageError as e:
            raise SuiteError(f"{source}: cell {i}: {e}") from None
    names = [p.name for p in suite.pairs]
    if len(set(names)) != len(names):
        raise SuiteError(f"{source}: duplicate pair names")
    return suite


def load_suite(path) -> Suite:
    p = Path(path)
    return parse_suite(p.read_text(), str(p), p.parent)


# ---------------------------------------------------------------------------
# Trials


def trial_seed(master_seed: int, pair: str, trial: int) -> int:
    """Seed shared by every cell for one (pair, trial)."""
    ss = np.random.SeedSequence([int(master_seed), zlib.crc32(pair.encode()), int(trial)])
    return int(ss.generate_state(1)[0])


def load_base(spec: PairSpec, root: Path) -> ImageGrid:
    if spec.image.startswith("synthetic:"):
        parts = spec.image.split(":")
        name = parts[1] if len(parts) > 1 else "texture"
        size = int(parts[2]) if len(parts) > 2 else 256
        seed = int(parts[3]) if len(parts) > 3 else 0
        return scene(name, size, seed)
    path = Path(spec.image)
    return load_pgm(path if path.is_absolute() else root / path)


def random_truth(spec: PairSpec, width: int, height: int, seed: int) -> TransformModel:
    """Similarity about the image centre with uniformly drawn angle, shift and log-scale."""
    rng = np.random.default_rng(seed)
    angle = math.radians(rng.uniform(-spec.rotation_max, spec.rotation_max))
    tx, ty = rng.uniform(-spec.translation_max, spec.translation_max, 2)
    ls = math.log(spec.scale_max) if spec.scale_max > 1 else 0.0
    s = math.exp(rng.uniform(-ls, ls))
    a, b = s * math.cos(angle), s * math.sin(angle)
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    return TransformModel("similarity", [a, b, cx - a * cx + b * cy + tx, cy - b * cx - a * cy + ty])


@dataclass
class TrialData:
    master: ImageGrid
    slave: ImageGrid
    truth: TransformModel
    validity: np.ndarray
    seed: int


def make_trial(base: ImageGrid, spec: PairSpec, seed: int) -> TrialData:
    h, w = base.shape
    pair = SyntheticPairSpec(
        random_truth(spec, w, h, seed), spec.noise_sigma, spec.gamma, spec.degrade, seed
    )
    master, slave, truth = make_synthetic_pair(base, pair)
    return TrialData(master, slave, truth, slave_validity(base, pair), seed)


def evaluate(t: TransformModel, data: TrialData):
    """``(nccc_raw, rmse)`` of a recovered slave-to-master transform."""
    h, w = data.master.shape
    rmse = rmse_checkpoints(t, checkpoint_grid(data.truth, w, h))
    pull = invert(t)
    moved, valid = resample(data.slave, pull, w, h)
    cover, valid2 = resample(data.validity.astype(np.float64), pull, w, h)
    mask = valid & valid2 & (as_array(cover) > 1.0 - 1e-9)
    return nccc(data.master, moved, mask), rmse


def run_cell(cell: CellSpec, pair_name: str, trial: int, data: TrialData, cfg: Config) -> RegistrationReport:
    notes = [n for n in (NOTES.get((cell.method, cell.enhancement), ""), cell.tag) if n]
    t0 = time.perf_counter()
    try:
        t = register(cell.method, cell.enhancement, data.master, data.slave, cell.model, cfg, data.seed)
        elapsed = time.perf_counter() - t0
        raw, rmse = evaluate(t, data)
        return RegistrationReport(
            pair_name, cell.method, cell.enhancement, cell.model, trial, data.seed,
            raw, nccc_display(raw), rmse, elapsed, runtime_class(elapsed), "ok", ";".join(notes), cell.tag,
        )
    except (ValueError, ArithmeticError, TransformError) as e:
        elapsed = time.perf_counter() - t0
        msg = f"{type(e).__name__}: {e}".replace(",", ";").replace("\n", " ")
        return RegistrationReport(
            pair_name, cell.method, cell.enhancement, cell.model, trial, data.seed,
            None, None, None, elapsed, runtime_class(elapsed), "error", ";".join(notes + [msg]), cell.tag,
        )


def _run_task(args):
    suite, pair_index, trial = args
    spec = suite.pairs[pair_index]
    base = load_base(spec, suite.root)
    seed = trial_seed(suite.seed, spec.name, trial)
    data = make_trial(base, spec, seed)
    out = []
    for cell in suite.cells:
        cfg = Config({**suite.overrides, **cell.overrides})
        out.append(run_cell(cell, spec.name, trial, data, cfg))
    return out


def run_suite(suite: Suite, jobs: int = 1) -> list[RegistrationReport]:
    tasks = [(suite, i, t) for i in range(len(suite.pairs)) for t in range(suite.trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            batches = list(ex.map(_run_task, tasks))
    else:
        batches = [_run_task(t) for t in tasks]
    reports = [r for batch in batches for r in batch]
    reports.sort(key=RegistrationReport.sort_key)
    return reports


# ---------------------------------------------------------------------------
# Reports


def _fmt(v, spec="%.6f"):
    return "" if v is None else spec % v


def report_row(r: RegistrationReport) -> list[str]:
    return [
        r.pair, r.method, r.enhancement, r.model, str(r.trial), str(r.seed),
        _fmt(r.nccc_raw), _fmt(r.nccc_display), _fmt(r.rmse_px), "%.3f" % r.runtime_s,
        r.runtime_class, r.status, r.notes,
    ]


@dataclass
class CellSummary:
    pair: str
    method: str
    enhancement: str
    tag: str
    model: str
    n: int
    failed: int
    nccc_raw: float
    nccc_display: float
    rmse_px: float


def summarise(reports) -> list[CellSummary]:
    """Per-cell medians; failed runs count as RMSE inf, NCCC -1 (display 0)."""
    groups: dict = {}
    for r in reports:
        groups.setdefault((r.pair, r.method, r.enhancement, r.tag, r.model), []).append(r)
    out = []
    for key in sorted(groups):
        rows = groups[key]
        raw = [r.nccc_raw if r.ok else -1.0 for r in rows]
        rmse = [r.rmse_px if r.ok else math.inf for r in rows]
        out.append(CellSummary(
            *key, len(rows), sum(not r.ok for r in rows),
            float(np.median(raw)), nccc_display(float(np.median(raw))), float(np.median(rmse)),
        ))
    return out


def deltas(summary: list[CellSummary]):
    """Enhanced minus baseline medians, for each enhanced cell with a matching baseline."""
    base = {(s.pair, s.method, s.model): s for s in summary if s.enhancement == "none" and not s.tag}
    out = []
    for s in summary:
        b = base.get((s.pair, s.method, s.model))
        if s.enhancement == "none" or b is None:
            continue
        out.append((s, b, s.nccc_display - b.nccc_display, s.rmse_px - b.rmse_px))
    return out


def format_report(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in reports:
        w.writerow(report_row(r))
    summary = summarise(reports)
    buf.write("# summary\n")
    buf.write("# pair,method,enhancement,tag,model,n,failed,median_nccc_raw,median_nccc_display,median_rmse_px\n")
    for s in summary:
        buf.write(
            f"# {s.pair},{s.method},{s.enhancement},{s.tag},{s.model},{s.n},{s.failed},"
            f"{s.nccc_raw:.6f},{s.nccc_display:.6f},{s.rmse_px:.6f}\n"
        )
    buf.write("# delta (enhanced - baseline)\n")
    buf.write("# pair,method,enhancement,tag,d_median_nccc_display,d_median_rmse_px,nccc_ordering,rmse_ordering\n")
    for s, b, dn, dr in deltas(summary):
        nok = "holds" if s.nccc_display >= b.nccc_display else "violated"
        rok = "holds" if s.rmse_px <= b.rmse_px else "violated"
        buf.write(f"# {s.pair},{s.method},{s.enhancement},{s.tag},{dn:+.6f},{dr:+.6f},{nok},{rok}\n")
    return buf.getvalue()


def read_report(path) -> list[dict]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def run_benchmark(suite, out=None, jobs: int = 1) -> list[RegistrationReport]:
    """Run ``suite`` (a Suite or a path to a suite file) and write the CSV report to ``out``."""
    if not isinstance(suite, Suite):
        suite = load_suite(suite)
    reports = run_suite(suite, jobs)
    if out is not None:
        Path(out).write_text(format_report(reports))
    return reports
