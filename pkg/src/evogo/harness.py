"""Experiment runner: INI plans, per-run convergence CSVs, summaries and
transport-vector dumps.

Output layout under the plan's output directory::

    runs/<run_id>.csv        one row per generation
    runs/<run_id>.npz        population snapshots (EvoGO runs only)
    vectors/<run_id>-g<g>-vectors.csv   transport vectors written by ``vectors``
    manifest.csv             one row per run with its status
    summary.csv              per cell and generation: median, mean, std
"""

from __future__ import annotations

import configparser
import csv
import io
import logging
import os
import statistics
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines, benchmarks, driver
from .dataprep import AugmentSpec
from .errors import SnapshotMissing

logger = logging.getLogger(__name__)

RUN_HEADER = ["run_id", "seed", "algorithm", "benchmark", "dim", "generation", "fe_count",
              "gen_best", "best_so_far"]
SUMMARY_HEADER = ["algorithm", "benchmark", "dim", "generation", "fe_count", "n_runs",
                  "median", "mean", "std", "status"]
MANIFEST_HEADER = ["run_id", "seed", "algorithm", "benchmark", "dim", "status", "final_best"]
WORKERS_ENV = "EVOGO_WORKERS"
ALGORITHMS = ("evogo",) + baselines.ALGORITHMS

# INI keys mapped onto EvoGoConfig fields, with their parsers
_EVOGO_KEYS = {
    "pop": int, "gens": int, "eta": float, "eps_win": float, "lam": float, "lam1": float,
    "lam2": float, "corr_sign": float, "gp_epochs": int, "gen_epochs": int, "variant": str,
    "ablation": str, "fe_budget": int, "warm_start": "bool", "batching": str,
    "keep_snapshots": "bool", "residual": "bool", "units": str,
}
_AUGMENT_KEYS = {"augment": "bool", "augment_threshold": int, "augment_factor": float}
_BASELINE_KEYS = {"budget": int, "baseline_pop": int, "sigma0": float, "inertia": float,
                  "cognitive": float, "social": float, "vmax": float}
_CELL_KEYS = {"algo": str, "benchmark": str, "dim": int, "seeds": "seeds", "shifted": "bool"}
KNOWN_KEYS = {**_EVOGO_KEYS, **_AUGMENT_KEYS, **_BASELINE_KEYS, **_CELL_KEYS}


def fmt(x) -> str:
    """Locale-independent, round-trip exact number formatting."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def parse_seeds(text) -> list[int]:
    """``"5"`` means seeds 0..4; ``"3,7,11"`` lists them; ``"10-14"`` is a range."""
    if isinstance(text, int):
        return list(range(text))
    text = str(text).strip()
    if "," in text:
        return [int(s) for s in text.split(",") if s.strip()]
    if "-" in text[1:]:
        lo, hi = text.split("-", 1)
        return list(range(int(lo), int(hi) + 1))
    return list(range(int(text)))


def _parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_value(key, text):
    kind = KNOWN_KEYS[key]
    if kind == "bool":
        return _parse_bool(text)
    if kind == "seeds":
        return parse_seeds(text)
    return kind(text)


@dataclass
class ExperimentCell:
    algorithm: str
    benchmark: str
    dim: int
    seeds: list
    overrides: dict = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.benchmark not in benchmarks.KINDS:
            raise ValueError(f"benchmark must be one of {benchmarks.KINDS}")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError(f"duplicate seeds in cell {self.name or self.algorithm}")
        unknown = set(self.overrides) - set(KNOWN_KEYS)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")

    def label(self) -> str:
        """Algorithm name including the EvoGO variant or ablation."""
        if self.algorithm != "evogo":
            return self.algorithm
        return driver.label(self.overrides.get("variant", "kg"),
                            self.overrides.get("ablation", "none"))

    def tasks(self, out_dir: Path):
        for seed in self.seeds:
            yield RunTask(self, int(seed), out_dir)


@dataclass
class ExperimentPlan:
    cells: list
    out_dir: Path
    workers: int = 1

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        ids = [t.run_id for t in self.tasks()]
        if len(set(ids)) != len(ids):
            raise ValueError("plan contains the same run twice")

    def tasks(self):
        for cell in self.cells:
            yield from cell.tasks(self.out_dir)


@dataclass
class RunTask:
    cell: ExperimentCell
    seed: int
    out_dir: Path

    @property
    def run_id(self) -> str:
        c = self.cell
        return f"{c.label()}-{c.benchmark}-{c.dim}d-s{self.seed}"


def workers_from_env(default: int = 1) -> int:
    raw = os.environ.get(WORKERS_ENV)
    if not raw:
        return default
    n = int(raw)
    if n < 1:
        raise ValueError(f"{WORKERS_ENV} must be >= 1")
    return n


# ---------------------------------------------------------------------------
# config files


def load_plan(path, out_dir=None, workers: int | None = None) -> ExperimentPlan:
    """Read an INI plan. ``[plan]`` holds ``out`` (and defaults shared by all
    cells); every other section is one cell."""
    parser = configparser.ConfigParser(interpolation=None)
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    shared = dict(parser["plan"]) if parser.has_section("plan") else {}
    out = out_dir or shared.pop("out", "results")
    shared.pop("out", None)
    cells = []
    for name in parser.sections():
        if name == "plan":
            continue
        # section values already include the [DEFAULT] section
        raw = {**shared, **dict(parser[name])}
        cells.append(make_cell(raw, name))
    if not cells:
        raise ValueError(f"{path}: no experiment cells")
    return ExperimentPlan(cells, Path(out), workers or workers_from_env())


def make_cell(raw: dict, name: str = "") -> ExperimentCell:
    values = {}
    for key, text in raw.items():
        if key not in KNOWN_KEYS:
            raise ValueError(f"cell {name!r}: unknown key {key!r}")
        values[key] = _parse_value(key, text)
    for key in ("algo", "benchmark", "dim"):
        if key not in values:
            raise ValueError(f"cell {name!r}: missing {key!r}")
    algo = values.pop("algo")
    bench = values.pop("benchmark").lower()
    dim = values.pop("dim")
    seeds = values.pop("seeds", [0])
    return ExperimentCell(algo, bench, dim, seeds, values, name)


def override_plan(plan: ExperimentPlan, algo=None, benchmark=None, dim=None, seeds=None,
                  **fields) -> ExperimentPlan:
    """Apply command-line flags to every cell; ``None`` leaves a value alone."""
    cells = []
    for c in plan.cells:
        over = dict(c.overrides)
        over.update({k: v for k, v in fields.items() if v is not None})
        cells.append(ExperimentCell(algo or c.algorithm, benchmark or c.benchmark,
                                    dim or c.dim, parse_seeds(seeds) if seeds is not None
                                    else c.seeds, over, c.name))
    return ExperimentPlan(cells, plan.out_dir, plan.workers)


# ---------------------------------------------------------------------------
# building configs for one run


def benchmark_for(cell: ExperimentCell, seed: int) -> benchmarks.BenchmarkSpec:
    shifted = cell.overrides.get("shifted", True)
    return benchmarks.make_benchmark(cell.benchmark, cell.dim, seed if shifted else None)


def evogo_config(cell: ExperimentCell, seed: int) -> driver.EvoGoConfig:
    over = cell.overrides
    kwargs = {k: over[k] for k in _EVOGO_KEYS if k in over}
    augment = AugmentSpec(over.get("augment_threshold", AugmentSpec.threshold),
                          over.get("augment_factor", AugmentSpec.factor))
    if not over.get("augment", True):
        augment = None
    cfg = driver.EvoGoConfig(benchmark=benchmark_for(cell, seed), seed=seed, augment=augment,
                             **kwargs)
    return cfg


def baseline_config(cell: ExperimentCell, seed: int) -> baselines.BaselineConfig:
    over = cell.overrides
    budget = over.get("budget") or over.get("fe_budget")
    if budget is None:
        budget = over.get("pop", 100) * over.get("gens", 10)
    kw = {k: over[k] for k in ("sigma0", "inertia", "cognitive", "social", "vmax") if k in over}
    return baselines.BaselineConfig(cell.algorithm, budget=budget,
                                    pop=over.get("baseline_pop"), seed=seed, **kw)


def execute(cell: ExperimentCell, seed: int) -> driver.RunHistory:
    if cell.algorithm == "evogo":
        return driver.run(evogo_config(cell, seed))
    return baselines.run_baseline(baseline_config(cell, seed), benchmark_for(cell, seed))


# ---------------------------------------------------------------------------
# CSV i/o


def run_csv_text(history: driver.RunHistory, run_id: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RUN_HEADER)
    for g, fe, gb, bsf in history.rows():
        w.writerow([run_id, history.seed, history.algorithm, history.benchmark, history.dim,
                    g, fe, fmt(gb), fmt(bsf)])
    return buf.getvalue()


def _write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def write_run(history: driver.RunHistory, run_id: str, out_dir: Path) -> Path:
    path = Path(out_dir) / "runs" / f"{run_id}.csv"
    _write_text(path, run_csv_text(history, run_id))
    if history.snapshots:
        save_snapshots(history, path.with_suffix(".npz"))
    return path


def is_run_csv(path) -> bool:
    """True when ``path`` starts with the run CSV header."""
    with open(path, encoding="utf-8", newline="") as fh:
        return fh.readline().rstrip("\n") == ",".join(RUN_HEADER)


def run_csvs(folder) -> list[Path]:
    """Run CSVs directly inside ``folder``, skipping other CSV files."""
    return [p for p in sorted(Path(folder).glob("*.csv")) if is_run_csv(p)]


def read_run_csv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["seed"] = int(r["seed"])
        r["dim"] = int(r["dim"])
        r["generation"] = int(r["generation"])
        r["fe_count"] = int(r["fe_count"])
        r["gen_best"] = float(r["gen_best"])
        r["best_so_far"] = float(r["best_so_far"])
    return rows


def save_snapshots(history: driver.RunHistory, path):
    arrays = {}
    for g, snap in history.snapshots.items():
        arrays[f"x_in_{g}"] = snap.x_in
        arrays[f"x_out_{g}"] = snap.x_out
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, **arrays)


def load_snapshots(path) -> dict:
    snaps = {}
    with np.load(path) as data:
        for key in data.files:
            if key.startswith("x_in_"):
                g = int(key[len("x_in_"):])
                snaps[g] = driver.Snapshot(data[key], data[f"x_out_{g}"])
    return snaps


# ---------------------------------------------------------------------------
# running


def _run_task(task: RunTask):
    """Worker body: run, write the per-run files, report the status."""
    run_id = task.run_id
    try:
        hist = execute(task.cell, task.seed)
    except Exception as exc:  # one failed run must not sink the plan
        logger.error("run %s failed: %s", run_id, exc)
        return run_id, task.seed, f"failed: {type(exc).__name__}: {exc}", float("nan"), \
            traceback.format_exc()
    write_run(hist, run_id, task.out_dir)
    return run_id, task.seed, hist.status, hist.final_best, ""


def run_plan(plan: ExperimentPlan) -> int:
    """Execute every run of the plan; returns 0 if all runs succeeded."""
    plan.out_dir.mkdir(parents=True, exist_ok=True)
    tasks = list(plan.tasks())
    if plan.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]

    statuses = {}
    rows = []
    for task, (run_id, seed, status, final, _) in zip(tasks, results):
        statuses[run_id] = status
        rows.append([run_id, seed, task.cell.label(), task.cell.benchmark, task.cell.dim,
                     status, fmt(final)])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MANIFEST_HEADER)
    w.writerows(rows)
    _write_text(plan.out_dir / "manifest.csv", buf.getvalue())
    summarize(plan.out_dir, statuses)
    return 0 if all(s == "ok" for s in statuses.values()) else 1


def _read_manifest(out_dir: Path) -> dict:
    path = out_dir / "manifest.csv"
    if not path.exists():
        return {}
    with open(path, encoding="utf-8", newline="") as fh:
        return {r["run_id"]: r["status"] for r in csv.DictReader(fh)}


def summarize(out_dir, statuses: dict | None = None) -> Path:
    """Aggregate every run CSV under ``out_dir/runs`` into ``summary.csv``.

    Failed runs (per ``statuses`` or the manifest) contribute no values; a
    cell's ``status`` column counts them.
    """
    out_dir = Path(out_dir)
    if statuses is None:
        statuses = _read_manifest(out_dir)
    groups: dict = {}
    failures: dict = {}
    for run_id, status in statuses.items():
        if status != "ok":
            key = _cell_key_from_id(run_id)
            if key is not None:
                failures[key] = failures.get(key, 0) + 1
    for path in run_csvs(out_dir / "runs"):
        rows = read_run_csv(path)
        if not rows or statuses.get(rows[0]["run_id"], "ok") != "ok":
            continue
        for r in rows:
            key = (r["algorithm"], r["benchmark"], r["dim"])
            groups.setdefault(key, {}).setdefault(r["generation"], []).append(
                (r["fe_count"], r["best_so_far"]))

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    for key in sorted(set(groups) | set(failures)):
        n_fail = failures.get(key, 0)
        status = "ok" if n_fail == 0 else f"failed={n_fail}"
        gens = groups.get(key, {})
        if not gens:
            w.writerow([*key, "", "", 0, "", "", "", status])
            continue
        for g in sorted(gens):
            vals = [v for _, v in gens[g]]
            fe = gens[g][0][0]
            w.writerow([*key, g, fe, len(vals), fmt(statistics.median(vals)),
                        fmt(float(np.mean(vals))), fmt(float(np.std(vals))), status])
    path = out_dir / "summary.csv"
    _write_text(path, buf.getvalue())
    return path


def _cell_key_from_id(run_id: str):
    # run ids look like <algorithm>-<benchmark>-<dim>d-s<seed>
    parts = run_id.split("-")
    if len(parts) < 4 or not parts[-2].endswith("d"):
        return None
    try:
        dim = int(parts[-2][:-1])
    except ValueError:
        return None
    return ("-".join(parts[:-3]), parts[-3], dim)


# ---------------------------------------------------------------------------
# transport vectors


def dump_vectors(history: driver.RunHistory, generation: int, path=None) -> np.ndarray:
    """Rows ``(x_in, x_out, |x_out - x_in|)`` for one generation's population.

    Writes a CSV with header ``x1..xd,x1'..xd',norm`` when ``path`` is given.
    """
    snap = history.snapshots.get(int(generation))
    if snap is None:
        raise SnapshotMissing(
            f"no population snapshot for generation {generation}; "
            f"recorded: {sorted(history.snapshots)}")
    norm = np.linalg.norm(snap.x_out - snap.x_in, axis=1)
    table = np.column_stack([snap.x_in, snap.x_out, norm])
    if path is not None:
        d = snap.x_in.shape[1]
        header = [f"x{i + 1}" for i in range(d)] + [f"x{i + 1}'" for i in range(d)] + ["norm"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in table:
            w.writerow([fmt(v) for v in row])
        _write_text(Path(path), buf.getvalue())
    return table


def history_from_files(csv_path) -> driver.RunHistory:
    """Rebuild the parts of a RunHistory stored on disk (curve plus snapshots)."""
    csv_path = Path(csv_path)
    rows = read_run_csv(csv_path)
    if not rows:
        raise ValueError(f"{csv_path} has no rows")
    first = rows[0]
    hist = driver.RunHistory(first["algorithm"], first["benchmark"], first["dim"], first["seed"])
    for r in rows:
        hist.generation.append(r["generation"])
        hist.fe_count.append(r["fe_count"])
        hist.gen_best.append(r["gen_best"])
        hist.best_so_far.append(r["best_so_far"])
    hist.best_y = hist.best_so_far[-1]
    npz = csv_path.with_suffix(".npz")
    if npz.exists():
        hist.snapshots = load_snapshots(npz)
    return hist

