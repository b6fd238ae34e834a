"""Experiment sweeps: instance generation, solver runs, scoring, aggregation, output."""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import eb, metrics, pcp, synth
from .model import Mode, RpcaProblem, SolverOptions

log = logging.getLogger(__name__)

KINDS = ("rank_sweep", "rho_sweep", "square_table", "photometric", "custom")
SOLVERS = ("EB", "MAP", "PCP")
SUCCESS_ANGLE = 5.0

TRIAL_HEADER = ["experiment", "solver", "m", "n", "rank", "rho", "seed", "mse", "angle",
                "precision", "recall", "iters", "seconds", "status"]


class ConfigError(ValueError):
    pass


class EmitError(OSError):
    pass


@dataclass(frozen=True)
class GridPoint:
    m: int
    n: int
    rank: int
    rho: float


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    points: tuple
    name: str = "experiment"
    trials: int = 10
    solvers: tuple = ("EB", "PCP")
    eb_options: SolverOptions = field(default_factory=SolverOptions)
    pcp_options: pcp.PcpOptions = field(default_factory=pcp.PcpOptions)
    lam: float = synth.DEFAULT_LAMBDA
    seed_base: int = 0
    out_dir: Optional[str] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if not self.points:
            raise ConfigError("experiment grid is empty")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        bad = [s for s in self.solvers if s not in SOLVERS]
        if bad or not self.solvers:
            raise ConfigError(f"unknown solvers {bad}; expected a subset of {SOLVERS}")
        if not self.lam > 0:
            raise ConfigError("lambda must be positive")

    @property
    def x_axis(self) -> Optional[str]:
        return {"rank_sweep": "rank_fraction", "rho_sweep": "rho"}.get(self.kind)


@dataclass
class TrialResult:
    experiment: str
    solver: str
    m: int
    n: int
    rank: int
    rho: float
    seed: int
    mse: float = float("nan")
    angle: float = float("nan")
    precision: float = float("nan")
    recall: float = float("nan")
    iters: int = 0
    seconds: float = 0.0
    status: str = "ok"
    # not part of trials.csv
    trial: int = 0
    angle_mean: float = float("nan")
    rank_hat: int = -1
    transposed: bool = False


def trial_seed(seed_base: int, point: GridPoint, trial: int) -> int:
    """Seed for one instance; depends only on its own grid point and trial index."""
    key = f"{seed_base}|{point.m}|{point.n}|{point.rank}|{point.rho!r}|{trial}"
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:4], "little")


def default_workers() -> int:
    workers = os.cpu_count() or 1
    cap = os.environ.get("RPCA_THREADS")
    if cap:
        try:
            workers = min(workers, max(1, int(cap)))
        except ValueError:
            log.warning("ignoring non-integer RPCA_THREADS=%r", cap)
    return workers


def _run_solver(name: str, problem: RpcaProblem, spec: ExperimentSpec):
    transposed = False
    if name == "PCP":
        return pcp.solve_pcp(problem, spec.pcp_options), transposed
    opts = spec.eb_options
    if name == "MAP":
        opts = replace(opts, mode=Mode.MAP)
    elif opts.mode == Mode.MAP:
        opts = replace(opts, mode=Mode.EMPIRICAL_BAYES)
    m, n = problem.shape
    if m > n:
        problem, transposed = problem.transpose(), True
    dec = eb.solve(problem, opts)
    return (dec.transpose() if transposed else dec), transposed


def _instance(spec: ExperimentSpec, point: GridPoint, seed: int):
    if spec.kind == "photometric":
        inst = synth.gen_photometric(synth.PhotoSpec(point.m, point.n, point.rho, seed), lam=spec.lam)
        return inst.problem, inst.X, inst.S
    return synth.gen_problem(synth.SynthSpec(point.m, point.n, point.rank, point.rho, seed=seed), spec.lam)


def _score(spec, row: TrialResult, dec, problem, X, S):
    rank = metrics.column_basis(X).shape[1]
    report = metrics.subspace_angles(dec.X_hat, X)
    row.angle_mean = report.mean
    row.rank_hat = report.rank_hat
    if spec.kind == "photometric":
        row.mse, row.angle = metrics.photometric_scores(dec.X_hat, X, problem.Y, rank)
    else:
        row.mse = metrics.normalized_mse(dec.X_hat, X)
        row.angle = metrics.subspace_angle(dec.X_hat, X, rank=rank)
    row.precision, row.recall = metrics.support_scores(dec.S_hat, S)


def run_trial(spec: ExperimentSpec, point_index: int, trial: int) -> list:
    point = spec.points[point_index]
    seed = trial_seed(spec.seed_base, point, trial)
    base = dict(experiment=spec.name, m=point.m, n=point.n, rank=point.rank,
                rho=point.rho, seed=seed, trial=trial)
    rows = []
    try:
        problem, X, S = _instance(spec, point, seed)
    except Exception as exc:  # recorded per row, the sweep goes on
        return [TrialResult(solver=s, status=f"failed: {exc}", **base) for s in spec.solvers]
    for name in spec.solvers:
        row = TrialResult(solver=name, **base)
        t0 = time.perf_counter()
        try:
            dec, row.transposed = _run_solver(name, problem, spec)
            row.seconds = time.perf_counter() - t0
            row.iters = dec.iterations
            _score(spec, row, dec, problem, X, S)
        except Exception as exc:
            row.seconds = time.perf_counter() - t0
            row.status = f"failed: {type(exc).__name__}: {exc}"
            log.warning("%s failed at %s seed %d: %s", name, point, seed, exc)
        rows.append(row)
    return rows


def _run_task(args):
    spec, i, t = args
    return i, t, run_trial(spec, i, t)


def run_experiment(spec: ExperimentSpec, workers: Optional[int] = None) -> list:
    """Run every (grid point, trial) instance through every solver.

    Output order is (grid point, solver, trial) regardless of worker count.
    """
    workers = default_workers() if workers is None else max(1, workers)
    tasks = [(spec, i, t) for i in range(len(spec.points)) for t in range(spec.trials)]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(_run_task, tasks))
    else:
        done = []
        for task in tasks:
            done.append(_run_task(task))
            log.info("%s: point %d trial %d done", spec.name, task[1], task[2])
    order = {s: k for k, s in enumerate(spec.solvers)}
    rows = [(i, order[r.solver], t, r) for i, t, rs in done for r in rs]
    rows.sort(key=lambda x: x[:3])
    return [r for *_, r in rows]


@dataclass
class SummaryRow:
    experiment: str
    solver: str
    m: int
    n: int
    rank: int
    rho: float
    trials: int
    failed: int
    mse_mean: float
    mse_std: float
    angle_mean: float
    angle_std: float
    precision_mean: float
    recall_mean: float
    iters_mean: float
    seconds_mean: float
    success_rate: float
    mean_principal_angle: float


def _stats(values):
    if not values:
        return float("nan"), float("nan")
    a = np.asarray(values, dtype=float)
    return float(a.mean()), float(a.std())


def aggregate(results: Iterable[TrialResult]) -> list:
    """Mean/std per (solver, grid point) over successful trials.

    ``success_rate`` is the fraction of all trials at that point whose angle is
    below 5 degrees; failed trials count as unsuccessful.
    """
    groups: dict = {}
    for r in results:
        key = (r.experiment, r.solver, r.m, r.n, r.rank, r.rho)
        groups.setdefault(key, []).append(r)
    summary = []
    for key, rows in groups.items():
        ok = [r for r in rows if r.status == "ok"]
        mse = _stats([r.mse for r in ok])
        ang = _stats([r.angle for r in ok])
        summary.append(SummaryRow(
            *key,
            trials=len(rows),
            failed=len(rows) - len(ok),
            mse_mean=mse[0], mse_std=mse[1],
            angle_mean=ang[0], angle_std=ang[1],
            precision_mean=_stats([r.precision for r in ok])[0],
            recall_mean=_stats([r.recall for r in ok])[0],
            iters_mean=_stats([r.iters for r in ok])[0],
            seconds_mean=_stats([r.seconds for r in ok])[0],
            success_rate=sum(r.angle < SUCCESS_ANGLE for r in ok) / len(rows),
            mean_principal_angle=_stats([r.angle_mean for r in ok])[0],
        ))
    return summary


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return str(v)


def _write_csv(path: Path, header, rows):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise EmitError(f"cannot write {path}: {exc}") from exc


def figure_rows(summary: Sequence[SummaryRow], x_axis: str):
    for s in summary:
        x = s.rank / s.m if x_axis == "rank_fraction" else s.rho
        yield [s.experiment, s.solver, x_axis, x, s.angle_mean, s.mse_mean]


def emit(results: Sequence[TrialResult], summary: Sequence[SummaryRow], out_dir,
         x_axis: Optional[str] = None, meta: Optional[dict] = None) -> dict:
    """Write trials.csv, summary.csv, summary.json and, for sweeps, figure.csv."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise EmitError(f"cannot create {out}: {exc}") from exc
    paths = {"trials": out / "trials.csv", "summary": out / "summary.csv",
             "summary_json": out / "summary.json"}
    _write_csv(paths["trials"], TRIAL_HEADER,
               ([getattr(r, k) for k in TRIAL_HEADER] for r in results))
    sum_header = [f.name for f in fields(SummaryRow)]
    _write_csv(paths["summary"], sum_header, ([getattr(s, k) for k in sum_header] for s in summary))
    doc = {"meta": meta or {}, "summary": [asdict(s) for s in summary]}
    try:
        paths["summary_json"].write_text(json.dumps(doc, indent=2, default=_json_default))
    except OSError as exc:
        raise EmitError(f"cannot write {paths['summary_json']}: {exc}") from exc
    if x_axis:
        paths["figure"] = out / "figure.csv"
        _write_csv(paths["figure"], ["experiment", "solver", "x_name", "x", "angle_mean", "mse_mean"],
                   figure_rows(summary, x_axis))
    return paths


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, SolverOptions):
        return {**asdict(o), "mode": o.mode.value}
    raise TypeError(f"not JSON serializable: {type(o)}")


_INT = {"m", "n", "rank", "seed", "iters"}
_FLOAT = {"rho", "mse", "angle", "precision", "recall", "seconds"}


def read_trials(path) -> list:
    """Parse a trials.csv written by :func:`emit`."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRIAL_HEADER:
            raise ConfigError(f"{path}: unexpected header {reader.fieldnames}")
        for rec in reader:
            kw = {}
            for k, v in rec.items():
                kw[k] = int(v) if k in _INT else float(v) if k in _FLOAT else v
            rows.append(TrialResult(**kw))
    return rows


# ---------------------------------------------------------------- configuration

PRESETS = {
    "fig1": dict(kind="rank_sweep", m=20, n=10000, rho=0.2, ranks="1-10", trials=10),
    "fig1-desk": dict(kind="rank_sweep", m=20, n=2000, rho=0.2, ranks="1-10", trials=5),
    "fig2": dict(kind="rho_sweep", m=20, n=10000, rank=4, rhos="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8", trials=10),
    "fig2-desk": dict(kind="rho_sweep", m=20, n=2000, rank=4, rhos="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8", trials=5),
    "table1": dict(kind="square_table", sizes="400", rank_fraction=0.1, rho=0.5, trials=3),
    "table1-desk": dict(kind="square_table", sizes="200", rank_fraction=0.1, rho=0.5, trials=3),
    "photometric": dict(kind="photometric", lights="10,20,30,40", pixels=5000, rho=0.05, trials=5),
    "map-battery": dict(kind="custom", points="20,500,4,0.2; 20,500,4,0.3; 20,500,4,0.4",
                        trials=10, solvers="EB,MAP"),
}


def _ints(text: str) -> list:
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if "-" in part:
            a, b = part.split("-")
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    return out


def _floats(text: str) -> list:
    return [float(p) for p in str(text).split(",") if p.strip()]


def _optional_float(text):
    return None if str(text).strip().lower() in ("none", "off", "") else float(text)


def _points(kind: str, cfg: dict) -> tuple:
    if kind == "rank_sweep":
        return tuple(GridPoint(int(cfg["m"]), int(cfg["n"]), r, float(cfg["rho"])) for r in _ints(cfg["ranks"]))
    if kind == "rho_sweep":
        return tuple(GridPoint(int(cfg["m"]), int(cfg["n"]), int(cfg["rank"]), p) for p in _floats(cfg["rhos"]))
    if kind == "square_table":
        frac = float(cfg["rank_fraction"])
        return tuple(GridPoint(s, s, max(1, round(frac * s)), float(cfg["rho"])) for s in _ints(cfg["sizes"]))
    if kind == "photometric":
        return tuple(GridPoint(k, int(cfg["pixels"]), 3, float(cfg["rho"])) for k in _ints(cfg["lights"]))
    pts = []
    for chunk in str(cfg["points"]).split(";"):
        if chunk.strip():
            m, n, r, rho = chunk.split(",")
            pts.append(GridPoint(int(m), int(n), int(r), float(rho)))
    return tuple(pts)


def build_spec(cfg: dict, eb_cfg: Optional[dict] = None, pcp_cfg: Optional[dict] = None) -> ExperimentSpec:
    """Build an :class:`ExperimentSpec` from flat key/value sections."""
    eb_cfg, pcp_cfg = dict(eb_cfg or {}), dict(pcp_cfg or {})
    try:
        kind = cfg["kind"]
        if kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {kind!r}")
        points = _points(kind, cfg)
        eb_opts = SolverOptions(
            max_iterations=int(eb_cfg.get("max_iterations", 100)),
            rel_tolerance=float(eb_cfg.get("rel_tolerance", 1e-6)),
        )
        pcp_kw = {}
        for key, cast in (("sparsity_weight", float), ("mu_init", float), ("mu_growth", float),
                          ("primal_tolerance", float), ("max_iterations", int),
                          ("stationarity_tolerance", _optional_float), ("balance_ratio", float)):
            if key in pcp_cfg:
                pcp_kw[key] = cast(pcp_cfg[key])
        solvers = tuple(s.strip().upper() for s in str(cfg.get("solvers", "EB,PCP")).split(",") if s.strip())
        return ExperimentSpec(
            kind=kind,
            points=points,
            name=str(cfg.get("name", kind)),
            trials=int(cfg.get("trials", 10)),
            solvers=solvers,
            eb_options=eb_opts,
            pcp_options=pcp.PcpOptions(**pcp_kw),
            lam=float(cfg.get("lambda", synth.DEFAULT_LAMBDA)),
            seed_base=int(cfg.get("seed", 0)),
            out_dir=cfg.get("out_dir"),
        )
    except ConfigError:
        raise
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad experiment configuration: {exc!r}") from exc


def read_config(path) -> tuple:
    """Read an INI config with [experiment], [eb] and [pcp] sections.

    An unreadable file raises ``OSError``; malformed contents raise ``ConfigError``.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    section = lambda name: dict(parser[name]) if parser.has_section(name) else {}
    return section("experiment"), section("eb"), section("pcp")


def preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return {"name": name, **PRESETS[name]}
