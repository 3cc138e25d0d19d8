"""Synthetic explanation instances with known Shapley values.

Every instance uses an :class:`~shapk.model.InteractionModel`: the main
effects are solved so the exact SHAP values hit a target profile, and the
pairwise products give the sampling estimators non-zero variance.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError
from .model import ExplanationInstance, InteractionModel

PROFILES = ("separated", "clustered", "adversarial")


def _profile_values(profile: str, d: int, k: int, margin: float, rng) -> np.ndarray:
    """Target SHAP values in rank order (descending)."""
    gaps = margin * (1.0 + rng.uniform(0.0, 1.0, size=d - 1))
    if profile == "clustered":
        # ranks k-2 .. k+1 (0-based k-2 .. k+1) squeezed into a 0.01 window
        lo, hi = max(k - 2, 0), min(k + 2, d)
        gaps[lo : hi - 1] = rng.uniform(0.0005, 0.01 / max(hi - lo - 1, 1), size=hi - 1 - lo)
    elif profile == "adversarial":
        gaps[k - 1] = 0.0
    return 1.0 - np.concatenate([[0.0], np.cumsum(gaps)])


def gen_synthetic(
    d: int,
    profile: str = "separated",
    seed: int = 0,
    k: int = 4,
    margin: float = 0.1,
    interaction: float = 0.05,
    partners: int = 3,
):
    """Build a synthetic instance and its exact SHAP values.

    ``separated`` spaces consecutive ranked values by at least ``margin``;
    ``clustered`` packs the values around the k-th rank into a 0.01 window;
    ``adversarial`` makes ranks ``k`` and ``k+1`` exact clones, so
    ``phi_k == phi_{k+1}`` bit for bit. ``interaction`` scales the pairwise
    terms (0 gives a purely additive model with zero-variance replicates).

    Returns ``(instance, phi)``.
    """
    if profile not in PROFILES:
        raise ConfigurationError(f"profile must be one of {PROFILES}")
    if not 2 <= d <= 64:
        raise ConfigurationError("synthetic instances need 2 <= d <= 64")
    k = min(max(k, 1), d - 1)
    rng = np.random.default_rng(seed)

    values = _profile_values(profile, d, k, margin, rng)
    order = rng.permutation(d)  # order[r] holds rank r
    target = np.empty(d)
    target[order] = values

    baseline = rng.uniform(-1.0, 1.0, size=d)
    delta = rng.choice([-1.0, 1.0], size=d) * rng.uniform(0.5, 1.5, size=d)
    heat = np.exp(rng.uniform(np.log(0.5), np.log(3.0), size=d))

    p_pair = min(1.0, partners / max(d - 1, 1))
    upper = np.zeros((d, d))
    for i in range(d):
        for j in range(i + 1, d):
            if rng.random() < p_pair:
                upper[i, j] = rng.normal() * interaction * np.sqrt(heat[i] * heat[j])

    if profile == "adversarial":
        p, q = int(order[k - 1]), int(order[k])
        baseline[q], delta[q] = baseline[p], delta[p]
        sym = upper + upper.T
        row = sym[p].copy()
        row[[p, q]] = 0.0
        sym[p], sym[:, p] = row, row
        sym[q], sym[:, q] = row, row
        upper = np.triu(sym, 1)

    x = baseline + delta
    sym = upper + upper.T
    w = target / delta - sym @ (x + baseline) / 2.0
    if profile == "adversarial":
        w[q] = w[p]
    pairs = tuple((i, j, upper[i, j]) for i in range(d) for j in range(i + 1, d) if upper[i, j] != 0.0)
    model = InteractionModel(w, pairs, b=0.25)
    inst = ExplanationInstance(model, x, baseline)
    phi = model.shapley_values(x, baseline)
    return inst, phi
