"""Black-box models and the interventional value function.

A model maps a length-``d`` real vector to one scalar. Features outside a
coalition take their value from a fixed baseline vector, so the value of a
coalition ``S`` is ``f(z)`` with ``z_j = x_j`` for ``j in S`` and
``z_j = baseline_j`` otherwise.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, NamedTuple, Sequence, Union

import numpy as np

from . import _backend
from .errors import ConfigurationError, LoadError

ACTIVATIONS = ("relu", "tanh", "none")
OUTPUTS = ("logit", "prob")
MASK_LIMIT = 63


def _sigmoid(s: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-s))


def _frozen(a, ndim: int, what: str) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if arr.ndim != ndim:
        raise ConfigurationError(f"{what} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"{what} contains non-finite entries")
    arr.setflags(write=False)
    return arr


class Layer(NamedTuple):
    """Dense layer computing ``act(w @ z + b)``; ``w`` has shape (out, in)."""

    w: np.ndarray
    b: np.ndarray
    act: str = "none"


class ModelSpec:
    """Base class for scalar models ``f: R^d -> R``.

    Subclasses implement :meth:`_forward` on a 2-D batch. Instances are
    immutable once built and may be shared between threads.
    """

    kind: str = ""
    input_dim: int
    output: str = "logit"

    def _forward(self, Z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def evaluate_batch(self, Z: np.ndarray) -> np.ndarray:
        """Evaluate every row of ``Z`` (shape ``(n, input_dim)``)."""
        Z = np.asarray(Z, dtype=np.float64)
        if Z.ndim != 2 or Z.shape[1] != self.input_dim:
            raise ConfigurationError(
                f"expected inputs of width {self.input_dim}, got shape {Z.shape}"
            )
        s = self._forward(Z)
        return _sigmoid(s) if self.output == "prob" else s

    def packed(self):
        """Flat parameter arrays for the compiled kernels, or None if unsupported."""
        return None

    @cached_property
    def native(self):
        """Compiled evaluator for this model, or None when running pure Python."""
        return _backend.native_model(self)

    def to_dict(self) -> dict:
        raise NotImplementedError(f"{type(self).__name__} is not serialisable")


@dataclass(frozen=True, eq=False)
class LinearModel(ModelSpec):
    """``f(z) = w . z + b``."""

    w: np.ndarray
    b: float = 0.0
    output: str = "logit"
    kind = "linear"

    def __post_init__(self):
        object.__setattr__(self, "w", _frozen(self.w, 1, "linear coefficients"))
        object.__setattr__(self, "b", float(self.b))
        if len(self.w) < 1:
            raise ConfigurationError("linear model needs at least one coefficient")
        _check_output(self.output)

    @property
    def input_dim(self) -> int:
        return len(self.w)

    def _forward(self, Z):
        return Z @ self.w + self.b

    def packed(self):
        d = self.input_dim
        return _pack_layers([Layer(self.w.reshape(1, d), np.array([self.b]), "none")], self.output)

    def to_dict(self):
        return {"kind": "linear", "w": self.w.tolist(), "b": self.b, "output": self.output}


@dataclass(frozen=True, eq=False)
class MLPModel(ModelSpec):
    """Fully connected network with a single output unit."""

    layers: tuple
    output: str = "logit"
    kind = "mlp"

    def __post_init__(self):
        if not self.layers:
            raise ConfigurationError("mlp needs at least one layer")
        built = []
        for n, layer in enumerate(self.layers):
            if not isinstance(layer, Layer):
                layer = Layer(*layer)
            w = _frozen(layer.w, 2, f"layer {n} weights")
            b = _frozen(layer.b, 1, f"layer {n} bias")
            if b.shape[0] != w.shape[0]:
                raise ConfigurationError(
                    f"layer {n}: bias length {b.shape[0]} != output width {w.shape[0]}"
                )
            if layer.act not in ACTIVATIONS:
                raise ConfigurationError(f"layer {n}: unknown activation {layer.act!r}")
            if built and built[-1].w.shape[0] != w.shape[1]:
                raise ConfigurationError(
                    f"layer {n}: input width {w.shape[1]} does not match "
                    f"previous output width {built[-1].w.shape[0]}"
                )
            built.append(Layer(w, b, layer.act))
        if built[-1].w.shape[0] != 1:
            raise ConfigurationError("final layer must have exactly one output unit")
        object.__setattr__(self, "layers", tuple(built))
        _check_output(self.output)

    @property
    def input_dim(self) -> int:
        return self.layers[0].w.shape[1]

    def _forward(self, Z):
        h = Z
        for layer in self.layers:
            h = h @ layer.w.T + layer.b
            if layer.act == "relu":
                h = np.maximum(h, 0.0)
            elif layer.act == "tanh":
                h = np.tanh(h)
        return h[:, 0]

    def packed(self):
        return _pack_layers(self.layers, self.output)

    def to_dict(self):
        return {
            "kind": "mlp",
            "input_dim": self.input_dim,
            "layers": [{"w": l.w.tolist(), "b": l.b.tolist(), "act": l.act} for l in self.layers],
            "output": self.output,
        }


@dataclass(frozen=True, eq=False)
class InteractionModel(ModelSpec):
    """Synthetic model with main effects and pairwise products.

    ``f(z) = b + sum_i w_i z_i + sum_{i<j} a_ij z_i z_j``. Its exact Shapley
    values have a closed form (see :meth:`shapley_values`), which makes it a
    cheap ground truth at any ``d``.
    """

    w: np.ndarray
    pairs: tuple = ()
    b: float = 0.0
    output: str = "logit"
    kind = "synthetic"

    def __post_init__(self):
        object.__setattr__(self, "w", _frozen(self.w, 1, "main effects"))
        object.__setattr__(self, "b", float(self.b))
        d = len(self.w)
        a = np.zeros((d, d))
        clean = []
        for p in self.pairs:
            i, j, c = int(p[0]), int(p[1]), float(p[2])
            if not (0 <= i < d and 0 <= j < d) or i == j:
                raise ConfigurationError(f"invalid interaction pair ({i}, {j}) for d={d}")
            i, j = min(i, j), max(i, j)
            a[i, j] += c
            clean.append((i, j, c))
        a.setflags(write=False)
        object.__setattr__(self, "pairs", tuple(clean))
        object.__setattr__(self, "_upper", a)
        _check_output(self.output)

    @property
    def input_dim(self) -> int:
        return len(self.w)

    def _forward(self, Z):
        return self.b + Z @ self.w + np.einsum("ni,ij,nj->n", Z, self._upper, Z)

    def shapley_values(self, x, baseline) -> np.ndarray:
        """Closed-form interventional SHAP values (``logit`` output only).

        A product term ``a z_i z_j`` splits as ``a (x_i - b_i)(x_j + b_j) / 2``
        onto feature ``i``.
        """
        if self.output != "logit":
            raise ConfigurationError("closed form holds only for the raw (logit) output")
        x = np.asarray(x, dtype=np.float64)
        baseline = np.asarray(baseline, dtype=np.float64)
        sym = self._upper + self._upper.T
        return (x - baseline) * (self.w + sym @ (x + baseline) / 2.0)

    def packed(self):
        return ("quad", self.w, np.ascontiguousarray(self._upper), self.b, self.output == "prob")

    def to_dict(self):
        return {
            "kind": "synthetic",
            "w": self.w.tolist(),
            "b": self.b,
            "pairs": [[i, j, c] for i, j, c in self.pairs],
            "output": self.output,
        }


class FunctionModel(ModelSpec):
    """Wrap an arbitrary vectorised callable ``fn(Z) -> (n,)``.

    Never dispatched to the compiled kernels, so every evaluation passes
    through ``fn``.
    """

    kind = "function"

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], input_dim: int, output: str = "logit"):
        self.fn = fn
        self.input_dim = int(input_dim)
        self.output = output
        _check_output(output)

    def _forward(self, Z):
        out = np.asarray(self.fn(Z), dtype=np.float64).reshape(-1)
        if out.shape[0] != Z.shape[0]:
            raise ConfigurationError("model callable must return one value per row")
        return out


def _check_output(output: str) -> None:
    if output not in OUTPUTS:
        raise ConfigurationError(f"output must be one of {OUTPUTS}, got {output!r}")


def _pack_layers(layers: Sequence[Layer], output: str):
    dims = [layers[0].w.shape[1]] + [l.w.shape[0] for l in layers]
    acts = [ACTIVATIONS.index(l.act) for l in layers]
    W = np.concatenate([l.w.ravel() for l in layers])
    B = np.concatenate([l.b for l in layers])
    return (
        "mlp",
        np.asarray(dims, dtype=np.int64),
        np.asarray(acts, dtype=np.int32),
        W,
        B,
        output == "prob",
    )


def evaluate(model: ModelSpec, input) -> float:
    """Forward pass of a single input vector."""
    z = np.asarray(input, dtype=np.float64)
    if z.ndim != 1:
        raise ConfigurationError(f"input must be a vector, got shape {z.shape}")
    return float(model.evaluate_batch(z[None, :])[0])


# -- coalitions ---------------------------------------------------------------


class Coalition:
    """Subset of feature indices.

    Stored as an integer bitmask when ``d <= 63`` and as a sorted tuple
    otherwise.
    """

    __slots__ = ("d", "_key")

    def __init__(self, members: Union[int, Iterable[int]], d: int):
        if d < 1:
            raise ConfigurationError("d must be positive")
        self.d = d
        if isinstance(members, (int, np.integer)):
            mask = int(members)
            if mask < 0 or mask >> d:
                raise ConfigurationError(f"bitmask {mask:#x} has bits outside d={d}")
            idx = [j for j in range(d) if mask >> j & 1]
        else:
            idx = [int(j) for j in members]
            if len(set(idx)) != len(idx):
                raise ConfigurationError("coalition has duplicate members")
            if any(j < 0 or j >= d for j in idx):
                raise ConfigurationError(f"coalition member out of range for d={d}")
            idx.sort()
        if d <= MASK_LIMIT:
            self._key = sum(1 << j for j in idx)
        else:
            self._key = tuple(idx)

    @property
    def indices(self) -> tuple:
        if isinstance(self._key, tuple):
            return self._key
        return tuple(j for j in range(self.d) if self._key >> j & 1)

    @property
    def mask(self) -> int:
        if isinstance(self._key, int):
            return self._key
        raise ConfigurationError(f"no bitmask form for d={self.d} > {MASK_LIMIT}")

    def as_bool(self) -> np.ndarray:
        out = np.zeros(self.d, dtype=bool)
        out[list(self.indices)] = True
        return out

    def __contains__(self, j) -> bool:
        if isinstance(self._key, int):
            return 0 <= j < self.d and bool(self._key >> j & 1)
        return j in self._key

    def __len__(self) -> int:
        return len(self.indices)

    def __eq__(self, other) -> bool:
        return isinstance(other, Coalition) and self.d == other.d and self._key == other._key

    def __hash__(self):
        return hash((self.d, self._key))

    def __repr__(self):
        return f"Coalition({list(self.indices)}, d={self.d})"


# -- explanation instance -----------------------------------------------------


@dataclass(eq=False)
class ExplanationInstance:
    """An input ``x`` to explain against a baseline, plus an evaluation counter.

    ``evals`` counts model evaluations made on behalf of this instance. It is
    the sample cost reported by every driver.
    """

    model: ModelSpec
    x: np.ndarray
    baseline: np.ndarray
    evals: int = field(default=0, init=False)

    def __post_init__(self):
        self.x = _frozen(self.x, 1, "x")
        self.baseline = _frozen(self.baseline, 1, "baseline")
        if len(self.x) < 1:
            raise ConfigurationError("d must be at least 1")
        if len(self.x) != len(self.baseline):
            raise ConfigurationError(
                f"x has length {len(self.x)} but baseline has length {len(self.baseline)}"
            )
        if len(self.x) != self.model.input_dim:
            raise ConfigurationError(
                f"model expects {self.model.input_dim} features, instance has {len(self.x)}"
            )
        self._lock = threading.Lock()
        self._anchors = None

    @property
    def d(self) -> int:
        return len(self.x)

    def charge(self, n: int) -> None:
        with self._lock:
            self.evals += n

    def fresh(self) -> "ExplanationInstance":
        """Same model and point with a zeroed counter and empty caches."""
        return ExplanationInstance(self.model, self.x, self.baseline)

    def masked(self, masks: np.ndarray) -> np.ndarray:
        """Inputs for a boolean coalition matrix of shape ``(n, d)``."""
        return np.where(masks, self.x, self.baseline)

    def values(self, masks: np.ndarray) -> np.ndarray:
        """Coalition values for each row of a boolean mask matrix; charges one eval per row."""
        masks = np.asarray(masks, dtype=bool)
        out = _backend.forward(self.model, self.masked(masks))
        self.charge(masks.shape[0])
        return out

    def anchors(self) -> tuple:
        """``(v(empty), v(full))``, evaluated and charged once then cached."""
        with self._lock:
            cached = self._anchors
        if cached is None:
            v = self.values(np.array([np.zeros(self.d, bool), np.ones(self.d, bool)]))
            cached = (float(v[0]), float(v[1]))
            with self._lock:
                self._anchors = cached
        return cached


def value_of_coalition(inst: ExplanationInstance, S) -> float:
    """``f(x_S)``: features outside ``S`` set to the baseline. Costs one evaluation."""
    if not isinstance(S, Coalition):
        S = Coalition(S, inst.d)
    elif S.d != inst.d:
        raise ConfigurationError(f"coalition built for d={S.d}, instance has d={inst.d}")
    return float(inst.values(S.as_bool()[None, :])[0])


# -- serialisation ------------------------------------------------------------


def model_from_dict(doc: dict) -> ModelSpec:
    """Build a model from its JSON document, raising :class:`LoadError` on any defect."""
    try:
        kind = doc["kind"]
        output = doc.get("output", "logit")
        if kind == "linear":
            return LinearModel(doc["w"], doc.get("b", 0.0), output)
        if kind == "mlp":
            layers = [Layer(l["w"], l["b"], l.get("act", "none")) for l in doc["layers"]]
            model = MLPModel(tuple(layers), output)
            if "input_dim" in doc and int(doc["input_dim"]) != model.input_dim:
                raise ConfigurationError(
                    f"input_dim {doc['input_dim']} != first layer width {model.input_dim}"
                )
            return model
        if kind == "synthetic":
            return InteractionModel(doc["w"], tuple(doc.get("pairs", ())), doc.get("b", 0.0), output)
        raise LoadError(f"unknown model kind {kind!r}")
    except LoadError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise LoadError(f"invalid model document: {exc}") from exc


def load_model(path) -> ModelSpec:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise LoadError(f"cannot read model file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise LoadError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise LoadError(f"{path}: top level must be an object")
    try:
        return model_from_dict(doc)
    except LoadError as exc:
        raise LoadError(f"{path}: {exc}") from exc


def save_model(model: ModelSpec, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=1))
