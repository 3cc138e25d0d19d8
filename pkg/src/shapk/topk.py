"""Top-k feature identification drivers.

Three strategies share one estimate/CI machinery:

``naive``
    Sample every feature until each CI is at most ``eps`` wide.
``overlap_uniform``
    Same sampling, but stop as soon as the weakest lower bound in the
    current top-k is within ``eps`` of the strongest upper bound outside it.
    With the kernel estimator this is KernelSHAP@k.
``overlap_greedy``
    LUCB-style: after a warm-up, only the two boundary features are sampled
    (SamplingSHAP@k).
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .estimators import (
    EstimateSet,
    FeatureStreams,
    KernelBatchConfig,
    default_coalitions,
    kernel_shap_replicate,
    sampling_shap_replicates,
    sampling_shap_round,
)
from .model import ExplanationInstance
from .oracle import exact_shap, is_eps_approximate, rank_desc

ESTIMATORS = ("sampling", "kernel")
STRATEGIES = ("naive", "overlap_uniform", "overlap_greedy")
STRATEGY_ALIASES = {"overlap": "overlap_uniform", "greedy": "overlap_greedy"}
DEFAULT_MAX_EVALS = 10**7

CONVERGED = "converged"
BUDGET_EXHAUSTED = "budget_exhausted"


@dataclass(frozen=True)
class TopKConfig:
    k: int
    eps: float
    delta: float
    t_min: int = 10
    estimator: str = "sampling"
    strategy: str = "naive"
    max_evals: Optional[int] = DEFAULT_MAX_EVALS
    seed: int = 0
    kernel_m: Optional[int] = None
    include_paired: bool = False

    def __post_init__(self):
        object.__setattr__(self, "strategy", STRATEGY_ALIASES.get(self.strategy, self.strategy))
        if self.k < 1:
            raise ConfigurationError("k must be positive")
        if not self.eps > 0:
            raise ConfigurationError("eps must be positive")
        if not 0 < self.delta < 1:
            raise ConfigurationError("delta must lie in (0, 1)")
        if self.t_min < 2:
            raise ConfigurationError("t_min must be at least 2")
        if self.estimator not in ESTIMATORS:
            raise ConfigurationError(f"estimator must be one of {ESTIMATORS}")
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"strategy must be one of {STRATEGIES}")
        if self.strategy == "overlap_greedy" and self.estimator != "sampling":
            raise ConfigurationError(
                "greedy allocation needs a per-feature estimator; use estimator='sampling'"
            )
        if self.max_evals is not None and self.max_evals < 0:
            raise ConfigurationError("max_evals must be non-negative")

    def kernel_batch(self, d: int) -> KernelBatchConfig:
        return KernelBatchConfig(self.kernel_m or default_coalitions(d), self.include_paired)


@dataclass(frozen=True)
class HighLowSplit:
    high: tuple
    low: tuple
    h: int
    l: int  # noqa: E741


@dataclass
class TopKResult:
    selected: tuple
    evals: int
    per_feature_evals: Optional[np.ndarray]
    counts: np.ndarray
    wall_time: float
    stop_reason: str
    final_estimates: EstimateSet
    config: TopKConfig = field(repr=False)

    @property
    def converged(self) -> bool:
        return self.stop_reason == CONVERGED

    def to_dict(self) -> dict:
        return {
            "selected": list(self.selected),
            "evals": self.evals,
            "per_feature_evals": None if self.per_feature_evals is None else self.per_feature_evals.tolist(),
            "counts": self.counts.tolist(),
            "wall_time": self.wall_time,
            "stop_reason": self.stop_reason,
            "estimates": self.final_estimates.to_dict(),
        }


# -- stopping predicates ------------------------------------------------------


def high_low_split(es: EstimateSet, k: int) -> HighLowSplit:
    """Top-k by mean, then the weakest insider and strongest outsider by CI bound."""
    order = rank_desc(es.mean)
    high = np.sort(order[:k])
    low = np.sort(order[k:])
    lo, hi = es.bounds()
    h = int(high[np.argmin(lo[high])])
    l = int(low[np.argmax(hi[low])])  # noqa: E741
    return HighLowSplit(tuple(int(i) for i in high), tuple(int(i) for i in low), h, l)


def naive_stop_check(es: EstimateSet, eps: float) -> bool:
    """Every CI is at most ``eps`` wide (inclusive)."""
    return bool((2.0 * es.half_width <= eps).all())


def overlap_stop_check(es: EstimateSet, k: int, eps: float) -> tuple:
    """``upper[l] - lower[h] <= eps`` for the current split; returns ``(stop, split)``."""
    if not 1 <= k < es.d:
        raise ConfigurationError(f"k must be in [1, d-1] = [1, {es.d - 1}], got {k}")
    split = high_low_split(es, k)
    lo, hi = es.bounds()
    return bool(hi[split.l] - lo[split.h] <= eps), split


# -- drivers ------------------------------------------------------------------


class _Run:
    def __init__(self, inst: ExplanationInstance, cfg: TopKConfig):
        d = inst.d
        if not 1 <= cfg.k < d:
            raise ConfigurationError(f"k must be in [1, d-1] = [1, {d - 1}], got {cfg.k}")
        self.inst = inst
        self.cfg = cfg
        self.d = d
        self.streams = FeatureStreams(cfg.seed, d)
        self.rngs = [self.streams.feature(i) for i in range(d)]
        self.es = EstimateSet(d, cfg.delta)
        self.kernel = cfg.kernel_batch(d) if cfg.estimator == "kernel" else None
        if self.kernel is not None:
            self.kernel.validate(d)
        self.budget = cfg.max_evals if cfg.max_evals is not None else DEFAULT_MAX_EVALS
        self.start_evals = inst.evals
        self.t0 = time.perf_counter()

    @property
    def used(self) -> int:
        return self.inst.evals - self.start_evals

    def affordable(self, cost: int) -> bool:
        return self.used + cost <= self.budget

    def sample(self, i: int, n: int = 1) -> None:
        self.es.add_many(i, sampling_shap_replicates(self.inst, i, self.streams.feature(i), n))

    def round_cost(self) -> int:
        return 2 * self.d if self.kernel is None else self.kernel.coalitions_per_replicate

    def add_round(self) -> None:
        if self.kernel is None:
            self.es.add_round(sampling_shap_round(self.inst, self.rngs))
        else:
            self.es.add_round(kernel_shap_replicate(self.inst, self.kernel, self.streams.joint()))

    def warm_up(self) -> None:
        if self.kernel is None:
            for i in range(self.d):
                self.sample(i, self.cfg.t_min)
        else:
            for _ in range(self.cfg.t_min):
                self.add_round()

    def finish(self, selected, reason: str) -> TopKResult:
        wall = time.perf_counter() - self.t0
        counts = self.es.count.copy()
        per_feature = 2 * counts if self.kernel is None else None
        return TopKResult(
            selected=tuple(sorted(int(i) for i in selected)),
            evals=self.used,
            per_feature_evals=per_feature,
            counts=counts,
            wall_time=wall,
            stop_reason=reason,
            final_estimates=self.es.snapshot(),
            config=self.cfg,
        )


def _top_by_mean(es: EstimateSet, k: int):
    return rank_desc(es.mean)[:k]


def run_naive(inst: ExplanationInstance, cfg: TopKConfig) -> TopKResult:
    """Kernel/SamplingSHAP baseline: sample all features until every CI is ``eps`` wide."""
    run = _Run(inst, cfg)
    run.warm_up()
    while True:
        if naive_stop_check(run.es, cfg.eps):
            return run.finish(_top_by_mean(run.es, cfg.k), CONVERGED)
        if not run.affordable(run.round_cost()):
            return run.finish(_top_by_mean(run.es, cfg.k), BUDGET_EXHAUSTED)
        run.add_round()


def run_overlap_uniform(inst: ExplanationInstance, cfg: TopKConfig) -> TopKResult:
    """Uniform sampling with the overlap stopping rule (KernelSHAP@k for the kernel estimator)."""
    run = _Run(inst, cfg)
    run.warm_up()
    while True:
        stop, split = overlap_stop_check(run.es, cfg.k, cfg.eps)
        if stop:
            return run.finish(split.high, CONVERGED)
        if not run.affordable(run.round_cost()):
            return run.finish(split.high, BUDGET_EXHAUSTED)
        run.add_round()


def run_greedy(inst: ExplanationInstance, cfg: TopKConfig) -> TopKResult:
    """SamplingSHAP@k: sample only the two boundary features each iteration.

    Each iteration draws one replicate for ``h`` and one for ``l`` (4
    evaluations). The stopping rule is then checked on a freshly recomputed
    split, so a converged result always satisfies it on its final estimates.
    """
    if cfg.estimator != "sampling":
        raise ConfigurationError("greedy allocation needs estimator='sampling'")
    run = _Run(inst, cfg)
    run.warm_up()
    split = high_low_split(run.es, cfg.k)
    while True:
        if not run.affordable(4):
            return run.finish(split.high, BUDGET_EXHAUSTED)
        run.sample(split.h)
        run.sample(split.l)
        stop, split = overlap_stop_check(run.es, cfg.k, cfg.eps)
        if stop:
            return run.finish(split.high, CONVERGED)


_DRIVERS = {
    "naive": run_naive,
    "overlap_uniform": run_overlap_uniform,
    "overlap_greedy": run_greedy,
}


def run_topk(inst: ExplanationInstance, cfg: TopKConfig) -> TopKResult:
    return _DRIVERS[cfg.strategy](inst, cfg)


def verify_stop(result: TopKResult) -> bool:
    """Re-check the strategy's stopping predicate on a result's final estimates."""
    cfg = result.config
    es = result.final_estimates
    if cfg.strategy == "naive":
        if not naive_stop_check(es, cfg.eps):
            return False
        return set(result.selected) == {int(i) for i in _top_by_mean(es, cfg.k)}
    stop, split = overlap_stop_check(es, cfg.k, cfg.eps)
    return stop and set(result.selected) == set(split.high)


# -- PAC harness --------------------------------------------------------------


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("SHAPK_THREADS", "1")))
    except ValueError:
        return 1


def trial_seeds(seed: int, trials: int) -> list:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(trials, dtype=np.uint32)]


def pac_trials(inst: ExplanationInstance, cfg: TopKConfig, trials: int, phi=None, workers=None) -> list:
    """Run ``trials`` independently seeded drivers; True marks an eps-approximate selection."""
    if phi is None:
        phi = exact_shap(inst.fresh()).phi
    seeds = trial_seeds(cfg.seed, trials)

    def one(seed):
        res = run_topk(inst.fresh(), replace(cfg, seed=seed))
        return is_eps_approximate(res.selected, phi, cfg.k, cfg.eps)

    workers = workers or default_workers()
    if workers == 1:
        return [one(s) for s in seeds]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(one, seeds))


def pac_trial_harness(inst: ExplanationInstance, cfg: TopKConfig, trials: int, phi=None, workers=None) -> float:
    """Empirical failure rate of the eps-approximate predicate over ``trials`` runs."""
    ok = pac_trials(inst, cfg, trials, phi, workers)
    return 1.0 - sum(ok) / len(ok)
