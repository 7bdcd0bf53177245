import json
import math

import numpy as np
import pytest

import oracles
from magpo_lab.evaluation import (RunMatrix, StatsError, absolute_metric, build_report, iqm, iqm_curve,
                                  load_runs, pairwise_improvement, probability_of_improvement,
                                  stratified_bootstrap_ci, write_report)


@pytest.mark.parametrize("scores, expected", [
    ([0, 0, 1, 1], 0.5),
    ([1] * 8, 1.0),
    (list(range(8)), 3.5),
])
def test_iqm_examples(scores, expected):
    assert iqm(scores) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("n", [4, 5, 6, 7, 9, 10, 13])
def test_iqm_fractional_trimming_matches_fractions(n):
    x = np.random.default_rng(n).standard_normal(n)
    assert iqm(x) == pytest.approx(oracles.iqm_by_hand(x.tolist()), abs=1e-12)


def test_iqm_five_scores_by_hand():
    # n=5: cuts at 1.25 and 3.75 -> weights .75, 1, .75 on the middle three
    assert iqm([0, 10, 20, 30, 1000]) == pytest.approx((0.75 * 10 + 20 + 0.75 * 30) / 2.5)


def test_iqm_equivariance():
    x = np.random.default_rng(0).standard_normal(11)
    assert iqm(3.0 * x - 2.0) == pytest.approx(3.0 * iqm(x) - 2.0, abs=1e-12)


def test_iqm_needs_four():
    with pytest.raises(StatsError):
        iqm([1, 2, 3])


def test_bootstrap_constant_data():
    ci = stratified_bootstrap_ci([np.full(5, 2.5), np.full(3, 2.5)], lambda s: float(np.mean(np.concatenate(s))),
                                 1000, 0.95)
    assert ci.point == ci.low == ci.high == 2.5
    assert not ci.degenerate


def test_bootstrap_two_seed_stratum_within_data_range():
    ci = stratified_bootstrap_ci([np.array([1.0, 4.0])], lambda s: float(np.mean(s[0])), 2000, 0.95)
    assert 1.0 <= ci.low <= ci.point <= ci.high <= 4.0


def test_bootstrap_single_seed_collapses_and_flags():
    ci = stratified_bootstrap_ci([np.array([3.0])], lambda s: float(s[0][0]), 1000, 0.95)
    assert (ci.low, ci.high, ci.degenerate) == (3.0, 3.0, True)
    ci = stratified_bootstrap_ci([np.array([3.0]), np.array([1.0, 2.0])],
                                 lambda s: float(np.mean(np.concatenate(s))), 1000, 0.95)
    assert ci.degenerate and ci.contains(ci.point)


def test_bootstrap_argument_checks():
    with pytest.raises(StatsError):
        stratified_bootstrap_ci([np.ones(3)], np.mean, resamples=999)
    with pytest.raises(StatsError):
        stratified_bootstrap_ci([np.ones(3)], np.mean, level=1.0)


def test_bootstrap_is_reproducible():
    data = [np.random.default_rng(1).standard_normal(9)]
    stat = lambda s: iqm(s[0])  # noqa: E731
    a = stratified_bootstrap_ci(data, stat, 1000, 0.95, np.random.default_rng(7))
    b = stratified_bootstrap_ci(data, stat, 1000, 0.95, np.random.default_rng(7))
    assert a == b


def test_bootstrap_resamples_within_strata():
    # strata of very different scale: resampling across strata would mix them
    strata = [np.zeros(4), np.full(4, 100.0)]
    ci = stratified_bootstrap_ci(strata, lambda s: float(s[1].mean() - s[0].mean()), 1000, 0.95)
    assert ci.low == ci.high == 100.0


@pytest.mark.slow
def test_bootstrap_coverage_study():
    rng = np.random.default_rng(12345)
    trials, hits = 500, 0
    mus = (0.0, 3.0)
    true = float(np.mean(mus))
    for _ in range(trials):
        strata = [rng.normal(m, 1.0, size=40) for m in mus]
        ci = stratified_bootstrap_ci(strata, lambda s: 0.5 * (s[0].mean() + s[1].mean()), 1000, 0.95, rng)
        hits += ci.contains(true)
    assert abs(hits / trials - 0.95) <= 0.03


def test_pairwise_improvement_ties():
    assert pairwise_improvement([1, 2], [1, 2]) == 0.5
    assert pairwise_improvement([3, 4], [1, 2]) == 1.0
    assert pairwise_improvement([1], [1, 0, 2]) == 0.5


def test_poi_dominance_and_self():
    a = {"t1": [5.0, 6.0, 7.0], "t2": [1.0, 2.0]}
    b = {"t1": [1.0, 2.0, 3.0], "t2": [0.0, 0.5]}
    ci = probability_of_improvement(a, b, 1000)
    assert ci.point == ci.low == ci.high == 1.0
    ci = probability_of_improvement(a, a, 1000)
    assert ci.point == 0.5


def test_poi_crafted_three_tasks():
    a = {"x": [1.0, 3.0, 5.0], "y": [2.0, 2.0], "z": [0.1, 0.9, 0.5, 0.7]}
    b = {"x": [2.0, 3.0, 4.0, 6.0], "y": [1.0, 2.0, 3.0], "z": [0.5, 0.6]}
    ci = probability_of_improvement(a, b, 2000, rng=np.random.default_rng(0))
    assert ci.point == pytest.approx(oracles.poi_enumerate(a, b), abs=1e-15)
    assert ci.low <= ci.point <= ci.high


def test_poi_needs_shared_task():
    with pytest.raises(StatsError):
        probability_of_improvement({"a": [1.0]}, {"b": [1.0]})


def test_absolute_metric_examples():
    assert absolute_metric(np.arange(20.0)) == pytest.approx(18.5)  # top 2 of 20
    assert absolute_metric(np.full(7, 3.0)) == 3.0
    assert absolute_metric([4.0]) == 4.0
    x = np.random.default_rng(3).standard_normal(122)
    k = math.ceil(0.1 * 122)
    assert absolute_metric(x) == pytest.approx(sum(sorted(x)[-k:]) / k, abs=1e-12)
    # raw (checkpoints, episodes) input averages episodes first
    raw = np.random.default_rng(4).standard_normal((30, 5))
    assert absolute_metric(raw, 0.2) == pytest.approx(np.sort(raw.mean(1))[-6:].mean(), abs=1e-12)


def _matrix():
    rng = np.random.default_rng(0)
    ret = {("A", "t1"): rng.normal(5, 1, (5, 6, 4)), ("B", "t1"): rng.normal(3, 1, (5, 6, 4)),
           ("A", "t2"): rng.normal(1, 1, (4, 6, 4)), ("B", "t2"): rng.normal(0, 1, (4, 6, 4))}
    steps = {"t1": list(range(0, 60, 10)), "t2": list(range(0, 60, 10))}
    return RunMatrix(ret, steps)


def test_run_matrix_normalization_bounds():
    m = _matrix()
    for t in m.tasks:
        all_means = np.concatenate([m.checkpoint_means(a, t).ravel() for a in m.algorithms])
        n = m.normalize(t, all_means)
        assert n.min() == 0.0 and n.max() == 1.0


def test_run_matrix_rejects_bad_shapes_and_widens_constant_bounds():
    with pytest.raises(StatsError):
        RunMatrix({("A", "t"): np.zeros((2, 3))}, {"t": [0, 1, 2]})
    m = RunMatrix({("A", "t"): np.ones((2, 3, 2))}, {"t": [0, 1, 2]})
    assert m.bounds["t"] == (1.0, 2.0) and m.notes


def test_iqm_curve_rows_and_band():
    m = _matrix()
    rows = iqm_curve(m, "A", resamples=1000, rng=np.random.default_rng(0))
    assert [r[0] for r in rows] == m.steps["t1"]
    for _, point, lo, hi in rows:
        assert 0.0 <= lo <= point <= hi <= 1.0
    small = RunMatrix({("A", "t"): np.ones((3, 2, 1)) * np.arange(3)[:, None, None]}, {"t": [0, 1]})
    assert all(math.isnan(r[1]) for r in iqm_curve(small, "A", resamples=1000))


def test_report_and_files(tmp_path):
    m = _matrix()
    rep = build_report(m, "B", resamples=1000, seed=1)
    poi = {r["algorithm"]: r["poi"] for r in rep.improvement}
    assert poi["B"] == 0.5 and poi["A"] > 0.9
    for row in rep.absolute:
        assert row["ci_low"] <= row["mean"] <= row["ci_high"]
    paths = write_report(rep, tmp_path / "rep")
    names = {p.name for p in paths}
    assert {"absolute_metric.csv", "probability_of_improvement.csv", "iqm_curve_A.csv", "bounds.csv"} <= names
    again = write_report(build_report(m, "B", resamples=1000, seed=1), tmp_path / "rep2")
    for p, q in zip(paths, again):
        assert p.read_bytes() == q.read_bytes()
    with pytest.raises(StatsError):
        build_report(m, "C", resamples=1000)


def _fake_run(root, alg, env, seed, means, status="complete"):
    d = root / alg / env / f"seed_{seed}"
    d.mkdir(parents=True)
    with (d / "metrics.jsonl").open("w") as fh:
        for i, v in enumerate(means):
            fh.write(json.dumps({"step": 10 * i, "returns": [v, v + 1.0]}) + "\n")
    (d / "manifest.json").write_text(json.dumps({"algorithm": alg, "env": env, "seed": seed, "status": status}))
    return d


def test_load_runs(tmp_path):
    for s in range(3):
        _fake_run(tmp_path, "A", "E", s, [1.0, 2.0, 3.0])
        _fake_run(tmp_path, "B", "E", s, [0.0, 1.0, 1.0, 5.0])
    _fake_run(tmp_path, "B", "E", 9, [0.0, 1.0, 2.0], status="partial")
    m = load_runs([tmp_path])
    assert m.returns[("A", "E")].shape == (3, 3, 2)
    assert m.returns[("B", "E")].shape == (4, 3, 2)
    assert m.steps["E"] == [0, 10, 20]
    assert any("partial" in n for n in m.notes)


def test_load_runs_errors(tmp_path):
    with pytest.raises(StatsError):
        load_runs([tmp_path / "nothing"])
    _fake_run(tmp_path / "x", "A", "E", 0, [1.0])
    _fake_run(tmp_path / "y", "A", "E", 0, [1.0])
    with pytest.raises(StatsError):
        load_runs([tmp_path / "x", tmp_path / "y"])
