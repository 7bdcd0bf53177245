"""Aggregate statistics over training runs.

Scores are organised per (algorithm, task) as arrays shaped
``(seeds, checkpoints, episodes)``.  Run-level scores (one number per seed)
feed the interquartile mean, bootstrap intervals and the probability of
improvement; resampling is always done over seeds, independently per task.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._kernels import pairwise_win_rate


class StatsError(ValueError):
    """Raised when a statistic is asked of data that cannot support it."""


# ---------------------------------------------------------------------------
# point statistics
# ---------------------------------------------------------------------------


def iqm(scores):
    """Interquartile mean with fractional trimming.

    Sorted score ``k`` covers the unit interval ``[k, k+1)``; it enters the
    mean with the length of that interval lying inside ``[n/4, 3n/4]``.
    """
    x = np.sort(np.asarray(scores, dtype=np.float64).ravel())
    n = x.size
    if n < 4:
        raise StatsError(f"IQM needs at least 4 scores, got {n}")
    lo, hi = 0.25 * n, 0.75 * n
    k = np.arange(n)
    w = np.clip(np.minimum(k + 1, hi) - np.maximum(k, lo), 0.0, 1.0)
    return float(w @ x / (hi - lo))


def absolute_metric(checkpoint_returns, window=0.1):
    """Mean of the best ``window`` fraction of checkpoint means.

    ``checkpoint_returns`` is (checkpoints,) of means or (checkpoints,
    episodes) of raw returns.  At least one checkpoint is always kept.
    """
    r = np.asarray(checkpoint_returns, dtype=np.float64)
    means = r.mean(axis=1) if r.ndim == 2 else r.ravel()
    if means.size == 0:
        raise StatsError("absolute metric needs at least one checkpoint")
    if not 0.0 < window <= 1.0:
        raise StatsError("window must lie in (0, 1]")
    k = max(1, math.ceil(window * means.size - 1e-9))
    return float(np.sort(means)[-k:].mean())


def pairwise_improvement(x, y):
    """P(X > Y) over all pairs, ties counted one half."""
    x, y = np.asarray(x, dtype=np.float64).ravel(), np.asarray(y, dtype=np.float64).ravel()
    if x.size == 0 or y.size == 0:
        raise StatsError("pairwise comparison of an empty sample")
    return float(pairwise_win_rate(x, y))


# ---------------------------------------------------------------------------
# bootstrap
# ---------------------------------------------------------------------------


@dataclass
class Interval:
    point: float
    low: float
    high: float
    degenerate: bool = False  # some stratum had a single seed

    def contains(self, value):
        return self.low <= value <= self.high

    def to_dict(self):
        return {"point": self.point, "low": self.low, "high": self.high,
                "degenerate": self.degenerate}


def _percentile_interval(point, samples, level, degenerate):
    a = 100.0 * (1.0 - level) / 2.0
    low, high = np.percentile(samples, [a, 100.0 - a])
    # keep the estimate inside its own interval even for skewed resamples
    return Interval(float(point), float(min(low, point)), float(max(high, point)), degenerate)


def _check_resampling(resamples, level):
    if resamples < 1000:
        raise StatsError(f"use at least 1000 resamples, got {resamples}")
    if not 0.0 < level < 1.0:
        raise StatsError("level must lie in (0, 1)")


def stratified_bootstrap_ci(strata, statistic, resamples=2000, level=0.95, rng=None):
    """Percentile interval of ``statistic`` under within-stratum resampling.

    ``strata`` is a sequence of arrays whose first axis indexes seeds (one
    array per task).  ``statistic`` maps such a sequence to a float.  A
    stratum with a single seed cannot vary, which is reported through
    ``Interval.degenerate``; if every stratum is a single seed the interval
    is the point itself.
    """
    _check_resampling(resamples, level)
    strata = [np.asarray(s, dtype=np.float64) for s in strata]
    if not strata or any(s.shape[0] == 0 for s in strata):
        raise StatsError("every stratum needs at least one seed")
    rng = np.random.default_rng(0) if rng is None else rng
    point = statistic(strata)
    degenerate = any(s.shape[0] == 1 for s in strata)
    if all(s.shape[0] == 1 for s in strata):
        return Interval(float(point), float(point), float(point), True)
    draws = [rng.integers(0, s.shape[0], size=(resamples, s.shape[0])) for s in strata]
    samples = np.empty(resamples)
    for r in range(resamples):
        samples[r] = statistic([s[d[r]] for s, d in zip(strata, draws)])
    return _percentile_interval(point, samples, level, degenerate)


def probability_of_improvement(scores_a: dict, scores_b: dict, resamples=2000, level=0.95,
                               rng=None):
    """Average over shared tasks of P(A's run beats B's run), with bootstrap CI.

    ``scores_a`` / ``scores_b`` map task -> run-level scores (one per seed).
    Seeds of the two algorithms are resampled independently within a task.
    """
    tasks = sorted(set(scores_a) & set(scores_b))
    if not tasks:
        raise StatsError("the two algorithms share no task")
    _check_resampling(resamples, level)
    rng = np.random.default_rng(0) if rng is None else rng
    xa = [np.asarray(scores_a[t], dtype=np.float64).ravel() for t in tasks]
    xb = [np.asarray(scores_b[t], dtype=np.float64).ravel() for t in tasks]
    point = float(np.mean([pairwise_improvement(a, b) for a, b in zip(xa, xb)]))
    degenerate = any(a.size == 1 or b.size == 1 for a, b in zip(xa, xb))
    if all(a.size == 1 and b.size == 1 for a, b in zip(xa, xb)):
        return Interval(point, point, point, True)
    da = [rng.integers(0, a.size, size=(resamples, a.size)) for a in xa]
    db = [rng.integers(0, b.size, size=(resamples, b.size)) for b in xb]
    samples = np.empty(resamples)
    for r in range(resamples):
        samples[r] = np.mean([pairwise_improvement(a[ia[r]], b[ib[r]])
                              for a, b, ia, ib in zip(xa, xb, da, db)])
    return _percentile_interval(point, samples, level, degenerate)


# ---------------------------------------------------------------------------
# run matrices
# ---------------------------------------------------------------------------


@dataclass
class RunMatrix:
    """Returns indexed by (algorithm, task) -> (seeds, checkpoints, episodes)."""

    returns: dict
    steps: dict  # task -> checkpoint step counts
    seeds: dict = field(default_factory=dict)  # (algorithm, task) -> seed list
    bounds: dict = field(default_factory=dict)  # task -> (lo, hi)
    notes: list = field(default_factory=list)

    def __post_init__(self):
        for key, arr in self.returns.items():
            arr = np.asarray(arr, dtype=np.float64)
            if arr.ndim != 3:
                raise StatsError(f"{key}: returns must be (seeds, checkpoints, episodes)")
            self.returns[key] = arr
        if not self.bounds:
            self.bounds = self._observed_bounds()
        for task, (lo, hi) in self.bounds.items():
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise StatsError(f"bad normalization bounds for {task}: {lo}, {hi}")

    @property
    def algorithms(self):
        return sorted({a for a, _ in self.returns})

    @property
    def tasks(self):
        return sorted({t for _, t in self.returns})

    def tasks_of(self, algorithm):
        return sorted(t for a, t in self.returns if a == algorithm)

    def _observed_bounds(self):
        bounds = {}
        for task in self.tasks:
            means = np.concatenate([self.returns[k].mean(axis=2).ravel()
                                    for k in self.returns if k[1] == task])
            lo, hi = float(means.min()), float(means.max())
            if not hi > lo:
                self.notes.append(f"{task}: all checkpoint means equal {lo}; bounds widened to [{lo}, {lo + 1}]")
                hi = lo + 1.0
            bounds[task] = (lo, hi)
        return bounds

    def normalize(self, task, x):
        lo, hi = self.bounds[task]
        return (np.asarray(x, dtype=np.float64) - lo) / (hi - lo)

    def checkpoint_means(self, algorithm, task):
        """(seeds, checkpoints) of mean episode return."""
        return self.returns[(algorithm, task)].mean(axis=2)

    def absolute_scores(self, algorithm, task, window=0.1):
        """One absolute metric per seed."""
        return np.array([absolute_metric(row, window) for row in self.checkpoint_means(algorithm, task)])


def iqm_curve(matrix: RunMatrix, algorithm, tasks=None, resamples=2000, level=0.95, rng=None):
    """Rows of (step, IQM, CI-low, CI-high) over min-max normalized run scores.

    At each checkpoint every (task, seed) contributes its normalized mean
    return.  Rows carry NaN when fewer than four runs are available.
    """
    tasks = matrix.tasks_of(algorithm) if tasks is None else list(tasks)
    rng = np.random.default_rng(0) if rng is None else rng
    normed = [matrix.normalize(t, matrix.checkpoint_means(algorithm, t)) for t in tasks]
    n_ck = min(x.shape[1] for x in normed)
    steps = matrix.steps[tasks[0]][:n_ck]
    n_runs = sum(x.shape[0] for x in normed)
    rows = []
    for c in range(n_ck):
        if n_runs < 4:
            rows.append((int(steps[c]), math.nan, math.nan, math.nan))
            continue
        strata = [x[:, c] for x in normed]
        ci = stratified_bootstrap_ci(strata, lambda ss: iqm(np.concatenate(ss)), resamples, level, rng)
        rows.append((int(steps[c]), ci.point, ci.low, ci.high))
    return rows


# ---------------------------------------------------------------------------
# loading runs
# ---------------------------------------------------------------------------


def read_metrics(path):
    """Checkpoint records of one run, in file order."""
    with Path(path).open() as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _find_runs(paths):
    found = []
    for p in map(Path, paths):
        if (p / "metrics.jsonl").is_file():
            found.append(p)
        elif p.is_dir():
            found += sorted(q.parent for q in p.rglob("metrics.jsonl"))
        else:
            raise StatsError(f"{p} is not a run directory")
    return found


def load_runs(paths) -> RunMatrix:
    """Collect every run under ``paths`` into a matrix.

    A run directory holds ``metrics.jsonl`` and ``manifest.json`` (which
    names the algorithm, environment and seed).  Runs of one (algorithm,
    task) are cut to their shortest common checkpoint count.
    """
    groups = {}
    steps = {}
    notes = []
    for run in _find_runs(paths):
        manifest_path = run / "manifest.json"
        if not manifest_path.is_file():
            raise StatsError(f"{run} has metrics but no manifest.json")
        manifest = json.loads(manifest_path.read_text())
        alg, task, seed = manifest["algorithm"], manifest["env"], int(manifest["seed"])
        recs = read_metrics(run / "metrics.jsonl")
        if not recs:
            notes.append(f"{run}: empty metrics file skipped")
            continue
        if manifest.get("status") != "complete":
            notes.append(f"{run}: partial run ({len(recs)} checkpoints)")
        groups.setdefault((alg, task), []).append((seed, recs))
        s = [r["step"] for r in recs]
        if task not in steps or len(s) < len(steps[task]):
            steps[task] = s
    if not groups:
        raise StatsError("no runs found")
    returns, seeds = {}, {}
    for key, runs in groups.items():
        runs.sort(key=lambda sr: sr[0])
        if len({s for s, _ in runs}) != len(runs):
            raise StatsError(f"{key}: the same seed appears twice")
        n_ck = min(len(r) for _, r in runs)
        n_ck = min(n_ck, len(steps[key[1]]))
        returns[key] = np.array([[rec["returns"] for rec in r[:n_ck]] for _, r in runs])
        seeds[key] = [s for s, _ in runs]
    for task in steps:
        n_ck = min(v.shape[1] for k, v in returns.items() if k[1] == task)
        steps[task] = steps[task][:n_ck]
        for k in [k for k in returns if k[1] == task]:
            returns[k] = returns[k][:, :n_ck]
    return RunMatrix(returns, steps, seeds, notes=notes)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    absolute: list  # rows: task, algorithm, seeds, mean, ci_low, ci_high, degenerate
    improvement: list  # rows: algorithm, baseline, tasks, poi, ci_low, ci_high, degenerate
    curves: dict  # algorithm -> iqm_curve rows
    bounds: dict
    notes: list


def build_report(matrix: RunMatrix, baseline, resamples=2000, level=0.95, window=0.1, seed=0):
    """Absolute-metric table, probability of improvement against ``baseline``
    and IQM curves for every algorithm in ``matrix``."""
    if baseline not in matrix.algorithms:
        raise StatsError(f"baseline {baseline!r} not among {matrix.algorithms}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 5]))
    absolute = []
    scores = {}
    for alg in matrix.algorithms:
        for task in matrix.tasks_of(alg):
            s = matrix.absolute_scores(alg, task, window)
            scores.setdefault(alg, {})[task] = s
            ci = stratified_bootstrap_ci([s], lambda ss: float(np.mean(ss[0])), resamples, level, rng)
            absolute.append({"task": task, "algorithm": alg, "seeds": int(s.size), "mean": ci.point,
                             "ci_low": ci.low, "ci_high": ci.high, "degenerate": ci.degenerate})
    improvement = []
    for alg in matrix.algorithms:
        shared = sorted(set(scores[alg]) & set(scores[baseline]))
        if not shared:
            raise StatsError(f"{alg} and {baseline} share no task")
        ci = probability_of_improvement(scores[alg], scores[baseline], resamples, level, rng)
        improvement.append({"algorithm": alg, "baseline": baseline, "tasks": len(shared),
                            "poi": ci.point, "ci_low": ci.low, "ci_high": ci.high,
                            "degenerate": ci.degenerate})
    curves = {alg: iqm_curve(matrix, alg, resamples=resamples, level=level, rng=rng)
              for alg in matrix.algorithms}
    notes = list(matrix.notes)
    if len(matrix.tasks) == 1:
        notes.append("single task: every interval comes from one stratum")
    return EvalReport(absolute, improvement, curves, dict(matrix.bounds), notes)


def _write_rows(path, header, rows):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            vals = [row[h] for h in header] if isinstance(row, dict) else row
            w.writerow([_fmt(v) for v in vals])


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(round(v, 10))
    return str(v)


def write_report(report: EvalReport, out_dir):
    """Delimited tables plus one curve file per algorithm; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "absolute_metric.csv", out / "probability_of_improvement.csv", out / "bounds.csv"]
    _write_rows(paths[0], ["task", "algorithm", "seeds", "mean", "ci_low", "ci_high", "degenerate"],
                report.absolute)
    _write_rows(paths[1], ["algorithm", "baseline", "tasks", "poi", "ci_low", "ci_high", "degenerate"],
                report.improvement)
    _write_rows(paths[2], ["task", "low", "high"],
                [(t, lo, hi) for t, (lo, hi) in sorted(report.bounds.items())])
    for alg, rows in sorted(report.curves.items()):
        p = out / f"iqm_curve_{alg}.csv"
        _write_rows(p, ["step", "iqm", "ci_low", "ci_high"], rows)
        paths.append(p)
    (out / "notes.txt").write_text("".join(n + "\n" for n in report.notes))
    paths.append(out / "notes.txt")
    return paths
