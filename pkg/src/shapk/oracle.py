"""Exact Shapley values by full coalition enumeration, and exact Top-k sets."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, OracleScaleError
from .model import ExplanationInstance

MAX_EXACT_D = 20
_CHUNK = 1 << 16


@dataclass(frozen=True)
class ExactShap:
    phi: np.ndarray
    efficiency_gap: float


def coalition_values(inst: ExplanationInstance) -> np.ndarray:
    """``v[mask]`` for every bitmask ``0 .. 2^d - 1``; charges ``2^d`` evaluations."""
    d = inst.d
    if d > MAX_EXACT_D:
        raise OracleScaleError(f"exact enumeration is limited to d <= {MAX_EXACT_D}, got d={d}")
    n = 1 << d
    bits = 1 << np.arange(d)
    v = np.empty(n)
    for lo in range(0, n, _CHUNK):
        masks = np.arange(lo, min(lo + _CHUNK, n))
        v[lo : lo + len(masks)] = inst.values((masks[:, None] & bits) != 0)
    return v


def exact_shap(inst: ExplanationInstance) -> ExactShap:
    """Interventional SHAP values by enumerating all ``2^d`` coalitions.

    The weight of a coalition of size ``s`` not containing ``i`` is
    ``s! (d-s-1)! / d! = 1 / (d * C(d-1, s))``, which stays finite in double
    precision for every allowed ``d``.
    """
    d = inst.d
    v = coalition_values(inst)
    masks = np.arange(1 << d)
    sizes = np.zeros(1 << d, dtype=np.int64)
    for j in range(d):
        sizes += (masks >> j) & 1
    weight_by_size = np.array([1.0 / (d * math.comb(d - 1, s)) for s in range(d)])
    phi = np.empty(d)
    for i in range(d):
        without = masks[(masks >> i) & 1 == 0]
        marg = v[without | (1 << i)] - v[without]
        phi[i] = np.dot(weight_by_size[sizes[without]], marg)
    gap = abs(phi.sum() - (v[-1] - v[0]))
    return ExactShap(phi, float(gap))


@dataclass(frozen=True)
class ExactTopK:
    topk: frozenset
    kth_value: float
    phi: np.ndarray
    margin: frozenset

    def eps_margin(self, eps: float) -> frozenset:
        """Features admissible in some ``eps``-approximate solution."""
        return frozenset(int(i) for i in np.flatnonzero(self.phi >= self.kth_value - eps))


def rank_desc(values) -> np.ndarray:
    """Indices sorted by value descending, ties by ascending index."""
    values = np.asarray(values)
    return np.lexsort((np.arange(len(values)), -values))


def _phi(es) -> np.ndarray:
    return np.asarray(es.phi if isinstance(es, ExactShap) else es, dtype=np.float64)


def _check_k(k: int, d: int) -> None:
    if not 1 <= k <= d:
        raise ConfigurationError(f"k must be in [1, {d}], got {k}")


def exact_topk(es, k: int, eps: float = 0.0) -> ExactTopK:
    phi = _phi(es)
    _check_k(k, len(phi))
    if eps < 0:
        raise ConfigurationError("eps must be non-negative")
    order = rank_desc(phi)
    top = frozenset(int(i) for i in order[:k])
    kth = float(phi[order[k - 1]])
    margin = frozenset(int(i) for i in np.flatnonzero(phi >= kth - eps))
    return ExactTopK(top, kth, phi, margin)


def is_eps_approximate(candidate, es, k: int, eps: float) -> bool:
    """True iff every candidate's value is at least ``phi_k - eps``."""
    phi = _phi(es)
    _check_k(k, len(phi))
    cand = {int(i) for i in candidate}
    if len(cand) != k:
        raise ConfigurationError(f"candidate must contain exactly k={k} distinct features")
    if any(not 0 <= i < len(phi) for i in cand):
        raise ConfigurationError("candidate feature out of range")
    kth = phi[rank_desc(phi)[k - 1]]
    return all(phi[i] >= kth - eps for i in cand)
