"""SamplingSHAP and KernelSHAP replicates, and CLT confidence intervals over them.

A *replicate* is one independent, (approximately) unbiased draw of a
feature's SHAP value. SamplingSHAP produces one replicate for one feature
from a single random permutation; KernelSHAP produces a joint replicate for
all features from one batch of sampled coalitions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import _backend
from .errors import ConfigurationError, DegenerateSampleError, EstimatorError
from .model import ExplanationInstance

_NORMAL = NormalDist()

# spawn-key tag of the KernelSHAP stream, outside any feature index range
JOINT_STREAM = 1 << 30


def z_critical(conf_param: float) -> float:
    """Two-sided standard-normal critical value: ``P(|N(0,1)| <= Z) = 1 - conf_param``."""
    if not 0.0 < conf_param < 1.0:
        raise ConfigurationError(f"confidence parameter must lie in (0, 1), got {conf_param}")
    return _NORMAL.inv_cdf(1.0 - conf_param / 2.0)


class FeatureStreams:
    """Independent Philox streams per feature plus one for joint replicates.

    Replicate ``j`` of feature ``i`` is always the ``j``-th block of ``d``
    uniforms on stream ``i``, however the draws are batched, so serial and
    parallel schedules see identical randomness.
    """

    def __init__(self, seed: int, d: int):
        self.seed = int(seed)
        self.d = d
        self._streams = {}

    def _make(self, key: int) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(key,))
        return np.random.Generator(np.random.Philox(ss))

    def feature(self, i: int) -> np.random.Generator:
        rng = self._streams.get(i)
        if rng is None:
            rng = self._streams[i] = self._make(i)
        return rng

    def joint(self) -> np.random.Generator:
        return self.feature(JOINT_STREAM)


# -- SamplingSHAP -------------------------------------------------------------


def sampling_shap_replicates(inst: ExplanationInstance, i: int, rng: np.random.Generator, n: int = 1) -> np.ndarray:
    """``n`` permutation-sampling replicates for feature ``i``; costs ``2n`` evaluations."""
    if not 0 <= i < inst.d:
        raise ConfigurationError(f"feature index {i} out of range for d={inst.d}")
    vals = _backend.marginals(inst.model, inst.x, inst.baseline, i, rng, n)
    inst.charge(2 * n)
    if not np.all(np.isfinite(vals)):
        raise EstimatorError(f"non-finite SamplingSHAP replicate for feature {i}")
    return vals


def sampling_shap_round(inst: ExplanationInstance, rngs) -> np.ndarray:
    """One replicate for every feature, feature ``i`` drawing from ``rngs[i]``; costs ``2d``."""
    vals = _backend.marginals_round(inst.model, inst.x, inst.baseline, rngs)
    inst.charge(2 * inst.d)
    if not np.all(np.isfinite(vals)):
        raise EstimatorError("non-finite SamplingSHAP replicate in round")
    return vals


def sampling_shap_replicate(inst: ExplanationInstance, i: int, rng: np.random.Generator) -> float:
    return float(sampling_shap_replicates(inst, i, rng, 1)[0])


# -- KernelSHAP ---------------------------------------------------------------


def default_coalitions(d: int) -> int:
    return max(2 * d, 128)


@dataclass(frozen=True)
class KernelBatchConfig:
    coalitions_per_replicate: int
    include_paired: bool = False

    @classmethod
    def default(cls, d: int, include_paired: bool = False) -> "KernelBatchConfig":
        return cls(default_coalitions(d), include_paired)

    def validate(self, d: int) -> None:
        if self.coalitions_per_replicate < d + 2:
            raise ConfigurationError(
                f"coalitions_per_replicate={self.coalitions_per_replicate} must be >= d + 2 = {d + 2}"
            )


def shapley_kernel_weight(d: int, s) -> np.ndarray:
    """``(d - 1) / (C(d, s) s (d - s))`` for proper coalition sizes ``0 < s < d``."""
    s = np.asarray(s)
    comb = np.array([math.comb(d, int(k)) for k in np.ravel(s)], dtype=np.float64).reshape(s.shape)
    return (d - 1) / (comb * s * (d - s))


def size_distribution(d: int) -> np.ndarray:
    """Probability of each coalition size ``1 .. d-1`` under the Shapley kernel."""
    s = np.arange(1, d)
    p = (d - 1) / (s * (d - s))
    return p / p.sum()


def sample_coalitions(d: int, m: int, rng: np.random.Generator, paired: bool = False) -> np.ndarray:
    """Boolean ``(m, d)`` coalition matrix drawn from the Shapley-kernel distribution.

    A size is drawn first, then a uniform subset of that size. With
    ``paired`` each draw is followed by its complement.
    """
    n_draw = (m + 1) // 2 if paired else m
    sizes = rng.choice(np.arange(1, d), size=n_draw, p=size_distribution(d))
    ranks = np.argsort(np.argsort(rng.random((n_draw, d)), axis=1), axis=1)
    masks = ranks < sizes[:, None]
    if paired:
        masks = np.stack([masks, ~masks], axis=1).reshape(-1, d)[:m]
    return masks


def _constrained_lstsq(Z: np.ndarray, y: np.ndarray, total: float, weights=None) -> np.ndarray:
    """Least squares ``y ~ Z phi`` subject to ``sum(phi) == total``.

    The last coordinate is eliminated as ``total - sum(rest)``; the reduced
    normal equations are Cholesky-factored, with one jittered retry.
    """
    d = Z.shape[1]
    Zf = Z.astype(np.float64)
    A = Zf[:, :-1] - Zf[:, -1:]
    t = y - Zf[:, -1] * total
    Aw = A if weights is None else A * weights[:, None]
    G = Aw.T @ A
    rhs = Aw.T @ t
    scale = np.trace(G) / max(d - 1, 1)
    for jitter in (0.0, 1e-10 * scale):
        try:
            c, low = cho_factor(G + jitter * np.eye(d - 1), check_finite=False)
        except LinAlgError:
            continue
        piv = np.abs(np.diag(c))
        # threshold sits above the jitter so a rank-deficient design is still rejected
        if piv.min() ** 2 <= 1e-8 * max(piv.max() ** 2, 1e-300):
            continue
        beta = cho_solve((c, low), rhs, check_finite=False)
        if np.all(np.isfinite(beta)):
            return np.append(beta, total - beta.sum())
    raise np.linalg.LinAlgError("singular KernelSHAP design")


def kernel_shap_replicate(inst: ExplanationInstance, cfg: KernelBatchConfig, rng: np.random.Generator) -> np.ndarray:
    """One joint KernelSHAP estimate for all ``d`` features.

    Costs ``M`` evaluations, plus 2 on the instance's first use for the empty
    and full coalitions. Sampling weights absorb the kernel, so the
    regression itself is unweighted.
    """
    d = inst.d
    v0, v1 = inst.anchors()
    total = v1 - v0
    if d == 1:
        return np.array([total])
    cfg.validate(d)
    for _attempt in range(2):
        masks = sample_coalitions(d, cfg.coalitions_per_replicate, rng, cfg.include_paired)
        y = inst.values(masks) - v0
        try:
            phi = _constrained_lstsq(masks, y, total)
        except np.linalg.LinAlgError:
            continue
        return phi
    raise DegenerateSampleError(
        f"KernelSHAP design singular twice in a row (d={d}, M={cfg.coalitions_per_replicate})"
    )


def kernel_shap_exhaustive(inst: ExplanationInstance) -> np.ndarray:
    """KernelSHAP over all ``2^d - 2`` proper coalitions with exact kernel weights.

    This recovers the exact Shapley values; costs ``2^d`` evaluations.
    """
    d = inst.d
    if d > 20:
        raise ConfigurationError("exhaustive KernelSHAP is limited to d <= 20")
    v0, v1 = inst.anchors()
    if d == 1:
        return np.array([v1 - v0])
    codes = np.arange(1, (1 << d) - 1)
    masks = (codes[:, None] >> np.arange(d)) & 1 == 1
    y = inst.values(masks) - v0
    w = shapley_kernel_weight(d, masks.sum(axis=1))
    return _constrained_lstsq(masks, y, v1 - v0, weights=w)


# -- confidence intervals -------------------------------------------------------


class EstimateSet:
    """Per-feature replicates with running mean, Bessel-corrected std and CI.

    Every interval uses the critical value ``Z(delta / d)``. Features with
    fewer than two replicates have the interval ``(-inf, inf)``.
    """

    def __init__(self, d: int, delta: float, keep_replicates: bool = True):
        if d < 1:
            raise ConfigurationError("d must be positive")
        self.d = d
        self.delta = float(delta)
        self.z = z_critical(self.delta / d)
        self.count = np.zeros(d, dtype=np.int64)
        self.mean = np.zeros(d)
        self._m2 = np.zeros(d)
        self._hw = np.full(d, np.inf)
        self._reps = [[] for _ in range(d)] if keep_replicates else None

    def _refresh(self, i: int) -> None:
        n = int(self.count[i])
        self._hw[i] = self.z * math.sqrt(self._m2[i] / ((n - 1) * n)) if n >= 2 else math.inf

    def add(self, i: int, value: float) -> None:
        value = float(value)
        if not math.isfinite(value):
            raise EstimatorError(f"non-finite replicate for feature {i}")
        n = int(self.count[i]) + 1
        mean = float(self.mean[i])
        diff = value - mean
        mean += diff / n
        self.mean[i] = mean
        self._m2[i] += diff * (value - mean)
        self.count[i] = n
        self._refresh(i)
        if self._reps is not None:
            self._reps[i].append(value)

    def add_many(self, i: int, values) -> None:
        for v in values:
            self.add(i, v)

    def add_round(self, values) -> None:
        """One replicate for every feature at once (a joint or round-robin round)."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (self.d,):
            raise ConfigurationError(f"round must have {self.d} values")
        if not np.isfinite(values).all():
            raise EstimatorError("non-finite replicate in round")
        self.count += 1
        diff = values - self.mean
        self.mean += diff / self.count
        self._m2 += diff * (values - self.mean)
        if self.count.min() >= 2:
            np.sqrt(self._m2 / ((self.count - 1) * self.count), out=self._hw)
            self._hw *= self.z
        else:
            for i in range(self.d):
                self._refresh(i)
        if self._reps is not None:
            for r, v in zip(self._reps, values.tolist()):
                r.append(v)

    def replicates(self, i: int) -> np.ndarray:
        if self._reps is None:
            raise ConfigurationError("replicates were not retained")
        return np.array(self._reps[i])

    @property
    def sigma(self) -> np.ndarray:
        out = np.full(self.d, np.nan)
        ok = self.count >= 2
        out[ok] = np.sqrt(self._m2[ok] / (self.count[ok] - 1))
        return out

    @property
    def half_width(self) -> np.ndarray:
        """``Z(delta/d) * sigma / sqrt(T)`` per feature (a view; do not modify)."""
        return self._hw

    def bounds(self) -> tuple:
        return self.mean - self._hw, self.mean + self._hw

    @property
    def lower(self) -> np.ndarray:
        return self.mean - self._hw

    @property
    def upper(self) -> np.ndarray:
        return self.mean + self._hw

    def snapshot(self) -> "EstimateSet":
        out = EstimateSet.__new__(EstimateSet)
        out.d, out.delta, out.z = self.d, self.delta, self.z
        out.count = self.count.copy()
        out.mean = self.mean.copy()
        out._m2 = self._m2.copy()
        out._hw = self._hw.copy()
        out._reps = None if self._reps is None else [list(r) for r in self._reps]
        return out

    def to_dict(self) -> dict:
        lo, hi = self.bounds()
        fin = lambda a: [float(v) if math.isfinite(v) else None for v in a]  # noqa: E731
        return {
            "count": self.count.tolist(),
            "mean": self.mean.tolist(),
            "sigma": fin(self.sigma),
            "lower": fin(lo),
            "upper": fin(hi),
            "z": self.z,
        }


def add_replicate(es: EstimateSet, i: int, value: float, delta: float, d: int) -> EstimateSet:
    """Append one replicate to feature ``i`` and refresh its statistics."""
    if es.d != d or es.delta != delta:
        raise ConfigurationError("estimate set was built for a different (d, delta)")
    if not 0 <= i < d:
        raise ConfigurationError(f"feature index {i} out of range for d={d}")
    es.add(i, value)
    return es
