"""Kernel backend selection.

The compiled extension (``shapk._kernels``) is used when it imports and
``SHAPK_BACKEND`` is not ``python``. Both backends consume the random
streams identically, so they draw the same permutations; their floating
point results agree to rounding but are not guaranteed bit-identical.
"""

from __future__ import annotations

import os
from contextlib import contextmanager

import numpy as np

try:
    from . import _kernels
except ImportError:  # extension not built
    _kernels = None

BACKENDS = ("compiled", "python")

_active = "compiled" if _kernels is not None and os.environ.get("SHAPK_BACKEND", "").lower() != "python" else "python"


def compiled_available() -> bool:
    return _kernels is not None


def active() -> str:
    return _active


def use(name: str) -> None:
    """Switch the process-wide backend."""
    global _active
    if name not in BACKENDS:
        raise ValueError(f"backend must be one of {BACKENDS}")
    if name == "compiled" and _kernels is None:
        raise RuntimeError("compiled kernels are not built; reinstall with Cython available")
    _active = name


@contextmanager
def using(name: str):
    prev = _active
    use(name)
    try:
        yield
    finally:
        use(prev)


def native_model(model):
    if _kernels is None:
        return None
    packed = model.packed()
    if packed is None:
        return None
    return _kernels.NativeModel(*packed)


def _native(model):
    if _active != "compiled":
        return None
    return model.native


# above this many rows a layered model is faster through numpy's matmul
MLP_BATCH_CUTOVER = 32


def forward(model, Z: np.ndarray) -> np.ndarray:
    nat = _native(model)
    if nat is None or (len(Z) > MLP_BATCH_CUTOVER and model.kind in ("linear", "mlp")):
        return model.evaluate_batch(Z)
    Z = np.ascontiguousarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != model.input_dim:
        return model.evaluate_batch(Z)  # raises the standard dimension error
    return nat.forward(Z)


def marginals(model, x, baseline, feature: int, rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` permutation-sampling marginals ``v(S + i) - v(S)`` for one feature.

    Each replicate consumes ``d`` uniforms from ``rng``; the features whose
    uniform is below feature ``i``'s precede it in the permutation.
    """
    nat = _native(model)
    if nat is not None:
        return nat.marginals(x, baseline, feature, rng.bit_generator, n)
    return marginals_python(model, x, baseline, feature, rng, n)


def marginals_python(model, x, baseline, feature, rng, n):
    d = len(x)
    u = rng.random((n, d))
    before = u < u[:, feature : feature + 1]
    without = np.where(before, x, baseline)
    without[:, feature] = baseline[feature]
    with_i = without.copy()
    with_i[:, feature] = x[feature]
    vals = model.evaluate_batch(np.concatenate([with_i, without]))
    return vals[:n] - vals[n:]


def marginals_round(model, x, baseline, rngs) -> np.ndarray:
    """One marginal for every feature ``i``, drawn from ``rngs[i]``."""
    nat = _native(model)
    if nat is not None:
        return nat.marginals_round(x, baseline, [r.bit_generator for r in rngs])
    return np.array([marginals_python(model, x, baseline, i, r, 1)[0] for i, r in enumerate(rngs)])
