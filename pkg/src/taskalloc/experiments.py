"""Experiment orchestration: single runs, sweeps, manifests and reruns.

Every run writes its trajectory CSV next to a JSON manifest holding the
config text, the per-run overrides, the seed and the code version.  Loading
the manifest and running again reproduces the CSV byte for byte.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, dumps, loads
from .errors import ConfigError
from .finite_sim import FiniteConfig, run_finite
from .game_core import solve_equilibrium
from .meanfield import long_run_error, run_closed_loop
from .passivity import verify_passivity
from .records import TrajectoryRecord, fmt, write_rows

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3

SCHEDULE_COLUMNS = ["m", "t_m", "lambda_m"]
SUMMARY_FIXED = ["run_id", "seed"]
SUMMARY_METRICS = ["longrun_err", "overshoot", "epochs", "wall_ms", "status"]


@dataclass
class RunResult:
    run_id: str
    record: TrajectoryRecord | None
    files: list[Path] = field(default_factory=list)
    schedule: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    wall_ms: float = 0.0


@dataclass
class ExperimentOutcome:
    exit_code: int
    files: list[Path] = field(default_factory=list)
    runs: list[RunResult] = field(default_factory=list)
    message: str = ""


class _FileTracker:
    """Remembers written paths so a failed experiment can remove them."""

    def __init__(self):
        self.paths: list[Path] = []

    def add(self, path) -> Path:
        path = Path(path)
        self.paths.append(path)
        return path

    def cleanup(self):
        for p in reversed(self.paths):
            try:
                p.unlink()
            except FileNotFoundError:
                pass
        self.paths.clear()


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _tag(value: float) -> str:
    return fmt(value).replace(".", "p").replace("-", "m")


def run_id_for(cfg: ExperimentConfig, lam: float | None = None) -> str:
    rid = cfg.label
    if lam is not None and len(cfg.lambdas) > 1:
        rid += f"_lam{_tag(lam)}"
    return f"{rid}_seed{cfg.seed}"


# -- engines -----------------------------------------------------------------

def finite_config(cfg: ExperimentConfig, lam: float) -> FiniteConfig:
    q0, x0 = cfg.initial_state()
    return FiniteConfig(
        dyn=cfg.dyn, rule=cfg.rule, n_agents=cfg.n_agents, p_edge=cfg.p_edge,
        leader_fraction=cfg.leader_fraction, x0=tuple(x0), q0=tuple(q0), q_hat0=tuple(cfg.q_hat0),
        T=cfg.T, h=cfg.h, output_every=cfg.output_every, lam=lam, controller=cfg.controller,
        trigger_source=cfg.trigger_source, self_inclusive=cfg.self_inclusive,
        debug_checks=cfg.debug_checks, comm_period=cfg.comm_period)


def simulate(cfg: ExperimentConfig, lam: float) -> tuple[TrajectoryRecord, list]:
    """Run one trajectory; returns the record and controller schedule rows."""
    if cfg.mode == "finite":
        run = run_finite(finite_config(cfg, lam), cfg.seed)
        sched = run.schedule_rows if cfg.controller is not None else []
        return run.record, sched
    if cfg.mode == "meanfield":
        q0, x0 = cfg.initial_state()
        rec = run_closed_loop(cfg.dyn, cfg.rule, lam, cfg.disturbance, q0, x0, cfg.T, cfg.h, cfg.output_every)
        rec.meta["seed"] = cfg.seed
        return rec, []
    raise ValueError(f"mode {cfg.mode!r} does not produce trajectories")


def manifest_dict(cfg: ExperimentConfig, run_id: str, lam: float, outputs: dict,
                  param: tuple | None = None) -> dict:
    overrides = {"mode": cfg.mode, "seed": cfg.seed, "lambda": lam, "T": cfg.T, "label": cfg.label,
                 "run_id": run_id}
    if param is not None:
        overrides["parameter"], overrides["value"] = param
    return {
        "run_id": run_id,
        "version": __version__,
        "mode": cfg.mode,
        "seed": cfg.seed,
        "overrides": overrides,
        "config_path": cfg.source_path,
        "config_text": dumps(cfg),
        "source_text": cfg.source_text,
        "outputs": outputs,
    }


def run_one(cfg: ExperimentConfig, lam: float, out_dir: Path, tracker: _FileTracker,
            plots: bool = True, run_id: str | None = None, param: tuple | None = None) -> RunResult:
    """Simulate and persist one trajectory with its manifest (and schedule, figure)."""
    rid = run_id or run_id_for(cfg, lam)
    t0 = time.perf_counter()
    record, schedule = simulate(cfg, lam)
    wall = 1000.0 * (time.perf_counter() - t0)
    res = RunResult(rid, record, schedule=schedule, meta=dict(record.meta), wall_ms=wall)
    csv_path = tracker.add(out_dir / f"{rid}.csv")
    record.write_csv(csv_path)
    outputs = {csv_path.name: sha256(csv_path)}
    res.files.append(csv_path)
    if schedule:
        sched_path = tracker.add(out_dir / f"{rid}_schedule.csv")
        write_rows(sched_path, SCHEDULE_COLUMNS, schedule)
        outputs[sched_path.name] = sha256(sched_path)
        res.files.append(sched_path)
    man_path = tracker.add(out_dir / f"{rid}.manifest.json")
    man = manifest_dict(cfg, rid, lam, outputs, param)
    man["meta"] = _jsonable(record.meta)
    man_path.write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    res.files.append(man_path)
    if plots:
        from .plotting import plot_trajectory
        eq = solve_equilibrium(cfg.dyn)
        png = tracker.add(out_dir / f"{rid}.png")
        plot_trajectory(record, png, title=rid, q_star=eq.q, schedule=schedule)
        res.files.append(png)
    return res


def _jsonable(meta: dict) -> dict:
    out = {}
    for k, v in meta.items():
        if isinstance(v, np.ndarray):
            v = v.tolist()
        elif isinstance(v, (np.floating, np.integer)):
            v = v.item()
        out[k] = v
    return out


# -- passivity report ---------------------------------------------------------

PASSIVITY_COLUMNS = ["check", "passed", "total", "worst", "threshold", "ok"]


def passivity_report(cfg: ExperimentConfig, out_dir: Path, tracker: _FileTracker, quiet: bool = True):
    rng = np.random.default_rng(cfg.seed)
    report = verify_passivity(cfg.dyn, cfg.rule, samples=cfg.passivity_samples, rng=rng)
    text = report.to_text()
    txt = tracker.add(out_dir / f"{cfg.label}_passivity.txt")
    txt.write_text(text + "\n")
    rows = [[r[c] for c in PASSIVITY_COLUMNS] for r in report.rows()]
    csv_path = tracker.add(out_dir / f"{cfg.label}_passivity.csv")
    write_rows(csv_path, PASSIVITY_COLUMNS, rows)
    man = tracker.add(out_dir / f"{cfg.label}_passivity.manifest.json")
    m = manifest_dict(cfg, cfg.label, float("nan"), {csv_path.name: sha256(csv_path), txt.name: sha256(txt)})
    man.write_text(json.dumps(m, indent=2, sort_keys=True, default=str) + "\n")
    if not quiet:
        print(text)
    return report, [txt, csv_path, man]


# -- sweeps ------------------------------------------------------------------

def apply_parameter(cfg: ExperimentConfig, name: str, value: float) -> ExperimentConfig:
    """Copy of ``cfg`` with one swept parameter set."""
    if name == "lambda":
        kw = {"lambdas": (value,)}
        if cfg.sweep.horizon_scale:
            kw["T"] = cfg.sweep.horizon_scale / value
        return cfg.with_overrides(**kw)
    if name in ("gamma", "tau", "epsilon"):
        if cfg.controller is None:
            raise ConfigError([f"sweep.parameter: '{name}' needs an enabled [controller] section"])
        return cfg.with_overrides(controller=dataclasses.replace(cfg.controller, **{name: value}))
    if name == "varrho":
        return cfg.with_overrides(rule=dataclasses.replace(cfg.rule, varrho=value))
    if name in ("leader_fraction", "p_edge"):
        return cfg.with_overrides(**{name: value})
    raise ConfigError([f"sweep.parameter: unknown parameter {name!r}"])


def _combination(args):
    """Worker body: one grid point and seed; never raises."""
    cfg, value, seed, out_dir, plots = args
    name = cfg.sweep.parameter
    rid = f"{cfg.label}_{name}{_tag(value)}_seed{seed}"
    row = {"run_id": rid, "seed": seed, name: value}
    tracker = _FileTracker()
    t0 = time.perf_counter()
    try:
        sub = apply_parameter(cfg, name, value).with_overrides(seed=seed, mode=cfg.sweep.engine)
        lam = sub.lambdas[0]
        res = run_one(sub, lam, Path(out_dir), tracker, plots=False, run_id=rid, param=(name, value))
        eq = solve_equilibrium(sub.dyn)
        row.update(longrun_err=long_run_error(res.record, eq.q, eq.x_star),
                   overshoot=float(res.record.column("q_inf_norm").max()),
                   epochs=int(res.meta.get("epochs", 0)), status="ok")
    except Exception as exc:  # recorded per combination
        tracker.cleanup()
        row.update(longrun_err=float("nan"), overshoot=float("nan"), epochs=0,
                   status=f"error: {type(exc).__name__}: {exc}".replace("\n", " "))
    row["wall_ms"] = 1000.0 * (time.perf_counter() - t0)
    return row


def sweep(cfg: ExperimentConfig, grid=None, seeds=None, out_dir=None, workers: int | None = None,
          plots: bool = True) -> tuple[list[dict], Path]:
    """Run every grid value and seed; writes and returns the summary table."""
    grid = tuple(cfg.sweep.values if grid is None else grid)
    seeds = tuple(cfg.sweep.seeds if seeds is None else seeds)
    errors = []
    if not grid:
        errors.append("sweep.values: grid must be nonempty")
    if not seeds:
        errors.append("sweep.seeds: seed list must be nonempty")
    if errors:
        raise ConfigError(errors)
    out_dir = Path(out_dir or cfg.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, v, s, str(out_dir), False) for v in grid for s in seeds]
    workers = workers or cfg.sweep.workers or 1
    if workers > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            rows = list(pool.map(_combination, jobs))
    else:
        rows = [_combination(j) for j in jobs]
    name = cfg.sweep.parameter
    header = SUMMARY_FIXED + [name] + SUMMARY_METRICS
    summary = out_dir / f"{cfg.label}_summary.csv"
    write_rows(summary, header, [[r[c] for c in header] for r in rows])
    if plots:
        from .plotting import plot_sweep
        plot_sweep(rows, name, out_dir / f"{cfg.label}_summary.png", title=cfg.label)
    return rows, summary


def seed_averaged(rows: list[dict], name: str, metric: str = "longrun_err") -> list[tuple[float, float]]:
    """``(value, mean metric)`` pairs in grid order, skipping failed rows."""
    order, acc = [], {}
    for r in rows:
        v = r[name]
        if v not in acc:
            order.append(v)
            acc[v] = []
        if r["status"] == "ok":
            acc[v].append(r[metric])
    return [(v, float(np.mean(acc[v])) if acc[v] else float("nan")) for v in order]


# -- top level ---------------------------------------------------------------

def run_experiment(cfg: ExperimentConfig, out_dir=None, quiet: bool = True,
                   plots: bool | None = None) -> ExperimentOutcome:
    """Dispatch on ``cfg.mode``; failed experiments leave no partial files."""
    out_dir = Path(out_dir or cfg.out or ".")
    plots = cfg.plots if plots is None else plots
    tracker = _FileTracker()
    say = (lambda *a: None) if quiet else print
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        if cfg.mode in ("meanfield", "finite"):
            runs = []
            for lam in cfg.lambdas:
                res = run_one(cfg, lam, out_dir, tracker, plots=plots)
                say(f"{res.run_id}: {len(res.record)} rows, {res.wall_ms:.0f} ms -> {res.files[0]}")
                runs.append(res)
            if plots and len(runs) > 1:
                from .plotting import plot_overview
                png = tracker.add(out_dir / f"{cfg.label}_seed{cfg.seed}_overview.png")
                plot_overview(runs, png, q_star=solve_equilibrium(cfg.dyn).q, title=cfg.label)
            return ExperimentOutcome(EXIT_OK, list(tracker.paths), runs)
        if cfg.mode == "passivity-report":
            report, files = passivity_report(cfg, out_dir, tracker, quiet)
            code = EXIT_OK if report.all_passed else EXIT_CHECK
            return ExperimentOutcome(code, files, message="" if report.all_passed
                                     else "failed checks: " + ", ".join(report.failed()))
        if cfg.mode == "sweep":
            rows, summary = sweep(cfg, out_dir=out_dir, plots=plots)
            failed = [r for r in rows if r["status"] != "ok"]
            for r in rows:
                say(f"{r['run_id']}: {r['status']} longrun_err={r['longrun_err']:.4g}")
            code = EXIT_RUNTIME if failed else EXIT_OK
            return ExperimentOutcome(code, [summary], message=f"{len(failed)} combination(s) failed" if failed else "")
        if cfg.mode == "selftest":
            from .selftest import run_selftest
            ok, text = run_selftest(cfg.seed)
            path = tracker.add(out_dir / f"{cfg.label}_selftest.txt")
            path.write_text(text + "\n")
            say(text)
            return ExperimentOutcome(EXIT_OK if ok else EXIT_CHECK, [path])
        raise ValueError(f"unknown mode {cfg.mode!r}")
    except ConfigError:
        tracker.cleanup()
        raise
    except Exception as exc:
        tracker.cleanup()
        detail = traceback.format_exc() if os.environ.get("TASKALLOC_TRACEBACK") else ""
        return ExperimentOutcome(EXIT_RUNTIME, message=f"{type(exc).__name__}: {exc}\n{detail}".rstrip())


# -- manifests ---------------------------------------------------------------

def config_from_manifest(path) -> tuple[ExperimentConfig, float, dict]:
    """Resolved config, revision rate and raw manifest of one recorded run."""
    man = json.loads(Path(path).read_text())
    cfg = loads(man["config_text"], man.get("config_path"))
    cfg = dataclasses.replace(cfg, source_text=man.get("source_text", ""))
    return cfg, float(man["overrides"]["lambda"]), man


def rerun_manifest(path, out_dir) -> dict[str, bool]:
    """Re-execute a manifest into ``out_dir``; map each output name to whether it matches."""
    cfg, lam, man = config_from_manifest(path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tracker = _FileTracker()
    ov = man["overrides"]
    if cfg.mode == "passivity-report":
        passivity_report(cfg, out_dir, tracker)
    else:
        run_one(cfg, lam, out_dir, tracker, plots=False, run_id=ov["run_id"],
                param=(ov["parameter"], ov["value"]) if "parameter" in ov else None)
    return {name: (out_dir / name).exists() and sha256(out_dir / name) == digest
            for name, digest in man["outputs"].items()}
