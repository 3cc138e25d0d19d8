import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shapk.errors import ConfigurationError
from shapk.estimators import EstimateSet
from shapk.model import ExplanationInstance, LinearModel
from shapk.oracle import is_eps_approximate
from shapk.synthetic import gen_synthetic
from shapk.topk import (
    BUDGET_EXHAUSTED,
    CONVERGED,
    TopKConfig,
    default_workers,
    high_low_split,
    naive_stop_check,
    overlap_stop_check,
    pac_trial_harness,
    pac_trials,
    run_topk,
    trial_seeds,
    verify_stop,
)


def _set(means, half_widths, delta=0.1):
    """An estimate set with prescribed means and half-widths."""
    es = EstimateSet(len(means), delta)
    for i, (m, h) in enumerate(zip(means, half_widths)):
        # replicates m +- a have std a * sqrt(2), so the half-width is z * a
        a = h / es.z
        es.add_many(i, [m - a, m + a])
    return es


def test_set_helper():
    es = _set([1.0, 2.0], [0.1, 0.3])
    np.testing.assert_allclose(es.mean, [1.0, 2.0])
    np.testing.assert_allclose(es.half_width, [0.1, 0.3])


def test_naive_stop_is_inclusive():
    es = _set([0.0, 1.0], [0.05, 0.05])
    assert naive_stop_check(es, 0.1 + 1e-12)
    assert not naive_stop_check(es, 0.09)


def test_high_low_split_picks_boundary_features():
    es = _set([0.9, 0.1, 0.5, 0.6, 0.2], [0.01, 0.3, 0.2, 0.01, 0.05])
    s = high_low_split(es, 2)
    assert s.high == (0, 3) and s.low == (1, 2, 4)
    assert s.h == 3  # lowest lower bound among 0.89, 0.59
    assert s.l == 2  # highest upper bound among 0.4, 0.7, 0.25


def test_high_low_split_tie_breaks_by_index():
    es = _set([0.5, 0.5, 0.5], [0.1, 0.1, 0.1])
    s = high_low_split(es, 1)
    assert s.high == (0,) and s.h == 0 and s.l == 1


@pytest.mark.parametrize("eps, stop", [(0.1 + 1e-9, True), (0.09, False)])
def test_overlap_stop(eps, stop):
    # upper[l] - lower[h] = (0.5 + 0.1) - (0.6 - 0.1) = 0.1
    es = _set([0.6, 0.5, 0.0], [0.1, 0.1, 0.1])
    got, split = overlap_stop_check(es, 1, eps)
    assert got is stop
    assert split.high == (0,) and split.h == 0 and split.l == 1


def test_overlap_stop_boundary_is_inclusive():
    es = _set([1.0, 0.8, 0.1], [0.05, 0.2, 0.01])
    lo, hi = es.bounds()
    gap = hi[1] - lo[0]
    assert overlap_stop_check(es, 1, gap)[0]
    assert not overlap_stop_check(es, 1, np.nextafter(gap, -np.inf))[0]


def test_overlap_stop_k_range():
    with pytest.raises(ConfigurationError):
        overlap_stop_check(_set([1.0, 2.0], [0.1, 0.1]), 2, 0.1)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(k=0, eps=0.1, delta=0.1),
        dict(k=1, eps=0.0, delta=0.1),
        dict(k=1, eps=0.1, delta=1.0),
        dict(k=1, eps=0.1, delta=0.1, t_min=1),
        dict(k=1, eps=0.1, delta=0.1, estimator="exact"),
        dict(k=1, eps=0.1, delta=0.1, strategy="random"),
        dict(k=1, eps=0.1, delta=0.1, estimator="kernel", strategy="greedy"),
        dict(k=1, eps=0.1, delta=0.1, max_evals=-1),
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ConfigurationError):
        TopKConfig(**kwargs)


def test_strategy_aliases():
    assert TopKConfig(1, 0.1, 0.1, strategy="overlap").strategy == "overlap_uniform"
    assert TopKConfig(1, 0.1, 0.1, strategy="greedy").strategy == "overlap_greedy"


def test_k_must_be_below_d():
    inst = gen_synthetic(4, "separated", 0)[0]
    with pytest.raises(ConfigurationError):
        run_topk(inst, TopKConfig(4, 0.1, 0.1))


DRIVERS = [
    ("sampling", "naive"),
    ("sampling", "overlap_uniform"),
    ("sampling", "overlap_greedy"),
    ("kernel", "naive"),
    ("kernel", "overlap_uniform"),
]


@pytest.mark.parametrize("estimator, strategy", DRIVERS)
@pytest.mark.parametrize("k", [1, 3])
def test_drivers_converge_soundly(estimator, strategy, k):
    inst, phi = gen_synthetic(8, "separated", 5, k=k, margin=0.05, interaction=0.1)
    cfg = TopKConfig(k, 0.02, 0.05, estimator=estimator, strategy=strategy, seed=1)
    res = run_topk(inst, cfg)
    assert res.stop_reason == CONVERGED and res.converged
    assert verify_stop(res)
    assert len(res.selected) == k and list(res.selected) == sorted(res.selected)
    assert is_eps_approximate(res.selected, phi, k, 0.02)
    assert res.evals == inst.evals
    assert res.counts.min() >= cfg.t_min
    if estimator == "sampling":
        assert res.evals == int(res.per_feature_evals.sum()) == 2 * int(res.counts.sum())
    else:
        assert res.per_feature_evals is None
        assert res.evals == 128 * int(res.counts[0]) + 2


@pytest.mark.parametrize("estimator, strategy", DRIVERS)
def test_deterministic(estimator, strategy):
    inst = gen_synthetic(8, "clustered", 2, k=2, interaction=0.2)[0]
    cfg = TopKConfig(2, 0.05, 0.1, estimator=estimator, strategy=strategy, seed=42)
    a, b = run_topk(inst.fresh(), cfg), run_topk(inst.fresh(), cfg)
    assert a.selected == b.selected and a.evals == b.evals
    np.testing.assert_array_equal(a.final_estimates.mean, b.final_estimates.mean)


@pytest.mark.parametrize("estimator, strategy", DRIVERS)
def test_budget_exhaustion(estimator, strategy):
    # an exact tie at the boundary keeps every stopping rule from firing early
    inst = gen_synthetic(8, "adversarial", 1, k=2, interaction=0.3)[0]
    cfg = TopKConfig(2, 1e-4, 0.1, estimator=estimator, strategy=strategy, max_evals=5000)
    res = run_topk(inst, cfg)
    assert res.stop_reason == BUDGET_EXHAUSTED and not res.converged
    warm = 2 * 8 * 10 if estimator == "sampling" else 10 * 128 + 2
    assert res.evals <= max(5000, warm)
    assert len(res.selected) == 2


def test_warm_up_always_completes():
    inst = gen_synthetic(6, "separated", 1, interaction=0.3)[0]
    res = run_topk(inst, TopKConfig(2, 1e-4, 0.1, strategy="greedy", max_evals=0))
    assert res.stop_reason == BUDGET_EXHAUSTED
    assert res.evals == 2 * 6 * 10


def test_zero_variance_stops_after_warm_up():
    w = np.array([5.0, 4.0, 3.0, 2.0, 1.0])
    inst = ExplanationInstance(LinearModel(w), np.ones(5), np.zeros(5))
    for strategy in ("naive", "overlap_uniform", "overlap_greedy"):
        res = run_topk(inst.fresh(), TopKConfig(2, 0.01, 0.1, strategy=strategy))
        assert res.selected == (0, 1)
        extra = 4 if strategy == "overlap_greedy" else 0
        assert res.evals == 2 * 5 * 10 + extra


def test_adversarial_tie_accepts_either_clone():
    inst, phi = gen_synthetic(6, "adversarial", 3, k=2, margin=0.1, interaction=0.1)
    ranked = np.sort(phi)[::-1]
    assert ranked[1] == ranked[2]
    res = run_topk(inst, TopKConfig(2, 0.02, 0.1, strategy="greedy", seed=3))
    assert res.converged and is_eps_approximate(res.selected, phi, 2, 0.02)


def test_trial_seeds_reproducible():
    assert trial_seeds(5, 4) == trial_seeds(5, 4)
    assert len(set(trial_seeds(5, 50))) == 50


def test_default_workers(monkeypatch):
    monkeypatch.setenv("SHAPK_THREADS", "3")
    assert default_workers() == 3
    monkeypatch.setenv("SHAPK_THREADS", "x")
    assert default_workers() == 1
    monkeypatch.delenv("SHAPK_THREADS")
    assert default_workers() == 1


def test_pac_trials_thread_independent():
    inst = gen_synthetic(6, "clustered", 4, k=2, interaction=0.3)[0]
    cfg = TopKConfig(2, 0.05, 0.2, strategy="greedy", seed=9)
    assert pac_trials(inst, cfg, 12, workers=1) == pac_trials(inst, cfg, 12, workers=4)


def test_harness_detects_an_unsound_driver():
    # with delta close to 1 and a two-replicate warm-up the intervals are far too narrow
    inst, phi = gen_synthetic(8, "separated", 11, k=4, margin=0.03, interaction=0.4)
    cfg = TopKConfig(4, 0.001, 0.99, t_min=2, strategy="greedy", seed=1)
    assert pac_trial_harness(inst, cfg, 100, phi) > 0.1


@given(st.integers(0, 2**31 - 1), st.integers(1, 5), st.sampled_from(["overlap_uniform", "overlap_greedy", "naive"]))
@settings(max_examples=15, deadline=None)
def test_converged_results_verify(seed, k, strategy):
    inst = gen_synthetic(7, "clustered", seed % 1000, k=k, interaction=0.2)[0]
    res = run_topk(inst, TopKConfig(k, 0.05, 0.1, strategy=strategy, seed=seed, max_evals=200_000))
    if res.converged:
        assert verify_stop(res)
