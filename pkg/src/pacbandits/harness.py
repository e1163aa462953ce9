"""Multi-trial experiment runner with deterministic parallelism.

An experiment is a grid of (instance x algorithm x trial).  Every trial
draws from its own random stream whose id is a fixed function of the trial's
position in the grid, never of scheduling order, so reruns are byte-identical
at any parallelism degree.  Aggregation is a pure fold over per-pair result
lists collected in grid order.

Trajectory curves average the per-round snapshots across a pair's trials:
the context-frequency distance counts a finished run as zero (its tracking
problem is over), while the statistic and threshold columns average over
the runs still active at that round.
"""

from __future__ import annotations

import json
import math
import re
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .algorithms import ALGORITHMS, RunConfig, RunResult, run_batch
from .env import GenConstraints, RngStream, gen_random_instance
from .model import NON_SEPARATOR, SEPARATOR, Instance, gaps, load_instance
from .optim import characteristic_time, d_bernoulli, solve_nonsep_weights, solve_sep_weights

SUMMARY_COLUMNS = (
    "instance_id", "algo", "n", "k", "delta", "trials", "mean_tau",
    "median_tau", "std_tau", "error_rate", "err_ci_lo", "err_ci_hi",
    "truncated", "t_star", "lower_bound",
)
TRAJECTORY_COLUMNS = ("round", "mean_dist_l2", "mean_lambda", "mean_threshold")
_GEN_STREAM_BASE = 2 ** 32  # instance-generation streams, disjoint from trials
_MAX_CURVE_ROWS = 2000
# ids become part of trajectory file names, so keep them filesystem-safe
_ID_RE = re.compile(r"[A-Za-z0-9_-]+\Z")


class ExperimentConfigError(ValueError):
    """Invalid experiment configuration (bad JSON, fields, or pairings)."""


@dataclass(frozen=True)
class ExperimentConfig:
    """A resolved experiment: instances are loaded/generated, ids are fixed."""

    instances: tuple[tuple[str, Instance], ...]
    algorithms: tuple[str, ...]
    delta: float
    trials: int
    seed: int
    jobs: int = 1
    max_rounds: int = 50_000_000
    max_rounds_by_algo: tuple[tuple[str, int], ...] = ()
    trajectory_stride: int = 500
    ts_mu_range: tuple[float, float] = (0.0, 10.0)

    def __post_init__(self):
        if not self.instances:
            raise ExperimentConfigError("no instances configured")
        if not self.algorithms:
            raise ExperimentConfigError("no algorithms configured")
        for algo in self.algorithms:
            if algo not in ALGORITHMS:
                raise ExperimentConfigError(
                    f"unknown algorithm {algo!r}; choose from {sorted(ALGORITHMS)}")
        if not 0.0 < self.delta < 1.0:
            raise ExperimentConfigError(f"delta must be in (0, 1), got {self.delta!r}")
        if self.trials < 1:
            raise ExperimentConfigError("trials must be >= 1")
        if self.jobs < 1:
            raise ExperimentConfigError("jobs must be >= 1")
        ids = [iid for iid, _ in self.instances]
        if len(set(ids)) != len(ids):
            raise ExperimentConfigError(f"duplicate instance ids: {sorted(ids)}")
        for iid, inst in self.instances:
            for algo in self.algorithms:
                if algo == "nsts" and inst.kind != NON_SEPARATOR:
                    raise ExperimentConfigError(
                        f"instance {iid!r} is {inst.kind}; nsts needs non_separator")
                if algo == "sts" and inst.kind != SEPARATOR:
                    raise ExperimentConfigError(
                        f"instance {iid!r} is {inst.kind}; sts needs separator")

    def cap_for(self, algo: str) -> int:
        return dict(self.max_rounds_by_algo).get(algo, self.max_rounds)

    def run_config(self, algo: str) -> RunConfig:
        return RunConfig(delta=self.delta, max_rounds=self.cap_for(algo),
                         trajectory_stride=self.trajectory_stride,
                         ts_mu_range=self.ts_mu_range)


def load_experiment_config(path) -> ExperimentConfig:
    """Load and resolve a JSON experiment config (see README for the schema).

    Instance paths are resolved relative to the config file; generated
    instances are drawn deterministically from the master seed on streams
    disjoint from all trial streams.
    """
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except OSError as exc:
        raise ExperimentConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ExperimentConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise ExperimentConfigError(f"{path}: top level must be a JSON object")

    def need(key, types, default=None, required=False):
        if key not in obj:
            if required:
                raise ExperimentConfigError(f"{path}: missing required field {key!r}")
            return default
        val = obj[key]
        if not isinstance(val, types):
            raise ExperimentConfigError(f"{path}: field {key!r} has wrong type")
        return val

    seed = need("seed", int, required=True)
    delta = need("delta", (int, float), required=True)
    trials = need("trials", int, required=True)
    algorithms = need("algorithms", list, required=True)
    jobs = need("jobs", int, default=1)
    max_rounds = need("max_rounds", int, default=50_000_000)
    stride = need("trajectory_stride", int, default=500)
    by_algo = need("max_rounds_by_algo", dict, default={})
    mu_range = tuple(need("ts_mu_range", list, default=[0.0, 10.0]))
    entries = need("instances", list, required=True)

    gen_index = 0
    instances: list[tuple[str, Instance]] = []
    for pos, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise ExperimentConfigError(f"{path}: instances[{pos}] must be an object")
        if "path" in entry:
            inst_path = (path.parent / entry["path"]).resolve()
            try:
                inst = load_instance(inst_path)
            except Exception as exc:
                raise ExperimentConfigError(
                    f"{path}: instances[{pos}]: {exc}") from exc
            iid = str(entry.get("id", inst_path.stem))
            if not _ID_RE.match(iid):
                raise ExperimentConfigError(
                    f"{path}: instances[{pos}]: id {iid!r} may only contain "
                    "letters, digits, '_' and '-'")
            instances.append((iid, inst))
        elif "generate" in entry:
            g = entry["generate"]
            if not isinstance(g, dict):
                raise ExperimentConfigError(
                    f"{path}: instances[{pos}].generate must be an object")
            prefix = str(g.get("id_prefix", "rand"))
            if not _ID_RE.match(prefix):
                raise ExperimentConfigError(
                    f"{path}: instances[{pos}]: id_prefix {prefix!r} may "
                    "only contain letters, digits, '_' and '-'")
            try:
                count = int(g.get("count", 1))
                cons = GenConstraints(
                    n=int(g["n"]), k=int(g["k"]),
                    mu_range=tuple(g.get("mu_range", mu_range)),
                    a_min_floor=g.get("a_min_floor"),
                )
                kind = g.get("kind", NON_SEPARATOR)
                for j in range(count):
                    stream = RngStream(seed, _GEN_STREAM_BASE + gen_index)
                    gen_index += 1
                    inst = gen_random_instance(cons, kind, stream)
                    instances.append((f"{prefix}-{j + 1}", inst))
            except (KeyError, ValueError, RuntimeError) as exc:
                raise ExperimentConfigError(
                    f"{path}: instances[{pos}].generate: {exc}") from exc
        else:
            raise ExperimentConfigError(
                f"{path}: instances[{pos}] needs either 'path' or 'generate'")

    try:
        return ExperimentConfig(
            instances=tuple(instances), algorithms=tuple(algorithms),
            delta=float(delta), trials=trials, seed=seed, jobs=jobs,
            max_rounds=max_rounds,
            max_rounds_by_algo=tuple(sorted(by_algo.items())),
            trajectory_stride=stride, ts_mu_range=mu_range)
    except ExperimentConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ExperimentConfigError(f"{path}: {exc}") from exc


def wilson_interval(failures: int, n: int, z: float = 1.959963984540054):
    """95% Wilson score interval for a binomial proportion (default z)."""
    if n < 1:
        raise ValueError("need at least one observation")
    if not 0 <= failures <= n:
        raise ValueError(f"failures {failures} outside [0, {n}]")
    p = failures / n
    z2 = z * z
    center = (p + z2 / (2 * n)) / (1 + z2 / n)
    half = z * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / (1 + z2 / n)
    lo = 0.0 if failures == 0 else max(0.0, center - half)
    hi = 1.0 if failures == n else min(1.0, center + half)
    return lo, hi


@dataclass
class TrajectoryCurve:
    rounds: np.ndarray       # strictly increasing snapshot rounds
    mean_dist_l2: np.ndarray  # mean over all trials, finished runs count 0
    mean_lambda: np.ndarray   # mean over runs still active at the round
    mean_threshold: np.ndarray


@dataclass
class TrialAggregate:
    """Statistics for one (instance, algorithm) pair."""

    instance_id: str
    algo: str
    n: int
    k: int
    delta: float
    trials: int
    mean_tau: float
    median_tau: float
    std_tau: float
    error_rate: float
    err_ci: tuple[float, float]
    truncated: int
    t_star: float
    lower_bound: float
    curve: TrajectoryCurve | None
    results: list[RunResult]
    failure: str | None = None


def _run_pair(inst: Instance, algo: str, run_cfg: RunConfig, seed: int,
              stream_base: int, trials: int) -> list[RunResult]:
    streams = [RngStream(seed, stream_base + j) for j in range(trials)]
    return run_batch(algo, inst, run_cfg, streams)


def _target_context_distribution(inst: Instance, algo: str) -> np.ndarray:
    """The context-frequency target each algorithm's tracking aims at."""
    if algo == "sts":
        return solve_sep_weights(inst).wz
    # arm-weight trackers: optimal arm weights push A @ w context frequencies
    w = solve_nonsep_weights(gaps(inst))
    return inst.a @ w


def _build_curve(results: list[RunResult], target_wz: np.ndarray) -> TrajectoryCurve | None:
    rounds = sorted({pt.round for r in results for pt in r.trajectory})
    if not rounds:
        return None
    n_trials = len(results)
    idx = {t: i for i, t in enumerate(rounds)}
    dist_sum = np.zeros(len(rounds))
    lam_sum = np.zeros(len(rounds))
    thr_sum = np.zeros(len(rounds))
    alive = np.zeros(len(rounds), dtype=np.int64)
    for r in results:
        for pt in r.trajectory:
            i = idx[pt.round]
            dist_sum[i] += float(np.linalg.norm(pt.ctx_freq - target_wz))
            lam_sum[i] += pt.statistic
            thr_sum[i] += pt.threshold
            alive[i] += 1
    safe = np.maximum(alive, 1)
    curve = TrajectoryCurve(
        rounds=np.asarray(rounds, dtype=np.int64),
        mean_dist_l2=dist_sum / n_trials,  # finished runs contribute zero
        mean_lambda=lam_sum / safe,
        mean_threshold=thr_sum / safe,
    )
    if len(rounds) > _MAX_CURVE_ROWS:
        step = math.ceil(len(rounds) / _MAX_CURVE_ROWS)
        sel = np.arange(0, len(rounds), step)
        curve = TrajectoryCurve(curve.rounds[sel], curve.mean_dist_l2[sel],
                                curve.mean_lambda[sel], curve.mean_threshold[sel])
    return curve


def _aggregate(iid: str, inst: Instance, algo: str, cfg: ExperimentConfig,
               results: list[RunResult], t_star: float,
               failure: str | None) -> TrialAggregate:
    if failure is not None or not results:
        return TrialAggregate(
            instance_id=iid, algo=algo, n=inst.n, k=inst.k, delta=cfg.delta,
            trials=cfg.trials, mean_tau=math.nan, median_tau=math.nan,
            std_tau=math.nan, error_rate=math.nan, err_ci=(math.nan, math.nan),
            truncated=0, t_star=t_star, lower_bound=t_star * d_bernoulli(cfg.delta),
            curve=None, results=[], failure=failure or "no results")
    taus = np.array([r.tau for r in results], dtype=float)
    errors = sum(1 for r in results if not r.correct)
    ci = wilson_interval(errors, len(results))
    curve = None
    if cfg.trajectory_stride:
        curve = _build_curve(results, _target_context_distribution(inst, algo))
    return TrialAggregate(
        instance_id=iid, algo=algo, n=inst.n, k=inst.k, delta=cfg.delta,
        trials=len(results), mean_tau=float(taus.mean()),
        median_tau=float(np.median(taus)),
        std_tau=float(taus.std(ddof=1)) if len(taus) > 1 else 0.0,
        error_rate=errors / len(results), err_ci=ci,
        truncated=sum(1 for r in results if r.truncated),
        t_star=t_star, lower_bound=t_star * d_bernoulli(cfg.delta),
        curve=curve, results=results, failure=None)


def run_experiment(cfg: ExperimentConfig, jobs: int | None = None) -> list[TrialAggregate]:
    """Run the full grid and aggregate, deterministically in grid order.

    Per-pair failures are recorded on their aggregate (``failure`` field)
    instead of aborting the whole experiment.
    """
    jobs = cfg.jobs if jobs is None else jobs
    if jobs < 1:
        raise ExperimentConfigError("jobs must be >= 1")
    pairs = [(iid, inst, algo)
             for iid, inst in cfg.instances for algo in cfg.algorithms]
    tasks = [(inst, algo, cfg.run_config(algo), cfg.seed, p * cfg.trials, cfg.trials)
             for p, (_, inst, algo) in enumerate(pairs)]

    outcomes: list[tuple[list[RunResult], str | None]] = []
    if jobs == 1 or len(tasks) == 1:
        for task in tasks:
            try:
                outcomes.append((_run_pair(*task), None))
            except Exception:
                outcomes.append(([], traceback.format_exc()))
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            futures = [pool.submit(_run_pair, *task) for task in tasks]
            for fut in futures:  # grid order, not completion order
                try:
                    outcomes.append((fut.result(), None))
                except Exception:
                    outcomes.append(([], traceback.format_exc()))

    t_stars = {iid: characteristic_time(inst).t_star for iid, inst in cfg.instances}
    return [
        _aggregate(iid, inst, algo, cfg, results, t_stars[iid], failure)
        for (iid, inst, algo), (results, failure) in zip(pairs, outcomes)
    ]


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.12g}"
    return str(x)


def emit_csv(aggregates: list[TrialAggregate], out_dir) -> Path:
    """Write summary.csv (fixed column order) and return its path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "summary.csv"
    lines = [",".join(SUMMARY_COLUMNS)]
    for agg in aggregates:
        if agg.failure is not None:
            continue
        row = (agg.instance_id, agg.algo, agg.n, agg.k, agg.delta, agg.trials,
               agg.mean_tau, agg.median_tau, agg.std_tau, agg.error_rate,
               agg.err_ci[0], agg.err_ci[1], agg.truncated, agg.t_star,
               agg.lower_bound)
        lines.append(",".join(_fmt(v) for v in row))
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def emit_trajectories(aggregates: list[TrialAggregate], out_dir) -> list[Path]:
    """Write trajectory_<instance>_<algo>.csv files; rows increase in round."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for agg in aggregates:
        if agg.curve is None or agg.failure is not None:
            continue
        path = out_dir / f"trajectory_{agg.instance_id}_{agg.algo}.csv"
        lines = [",".join(TRAJECTORY_COLUMNS)]
        c = agg.curve
        for i in range(len(c.rounds)):
            lines.append(",".join((
                str(int(c.rounds[i])), _fmt(float(c.mean_dist_l2[i])),
                _fmt(float(c.mean_lambda[i])), _fmt(float(c.mean_threshold[i])))))
        try:
            path.write_text("\n".join(lines) + "\n")
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
        paths.append(path)
    return paths
