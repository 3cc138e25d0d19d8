import itertools
import math

import numpy as np
import pytest

from shapk.model import ExplanationInstance, FunctionModel, Layer, LinearModel, MLPModel


def random_mlp(rng, d, hidden=(8, 8), output="logit"):
    dims = (d,) + tuple(hidden) + (1,)
    acts = ["relu", "tanh"] * len(hidden)
    layers = []
    for n, (i, o) in enumerate(zip(dims[:-1], dims[1:])):
        act = acts[n] if n < len(hidden) else "none"
        layers.append(Layer(rng.normal(size=(o, i)) / np.sqrt(i), rng.normal(size=o) * 0.1, act))
    return MLPModel(tuple(layers), output)


def product_model(d, idx=None):
    idx = list(range(d)) if idx is None else list(idx)
    return FunctionModel(lambda Z: np.prod(Z[:, idx], axis=1), d)


def random_instance(rng, kind, d):
    if kind == "linear":
        model = LinearModel(rng.normal(size=d), rng.normal())
    elif kind == "mlp":
        model = random_mlp(rng, d)
    elif kind == "product":
        model = product_model(d)
    else:
        raise ValueError(kind)
    return ExplanationInstance(model, rng.uniform(-2, 2, d), rng.uniform(-2, 2, d))


def permutation_shap(inst):
    """Average marginal contribution over all d! orderings; an independent oracle."""
    d = inst.d
    model = inst.model

    def v(members):
        z = inst.baseline.copy()
        z[list(members)] = inst.x[list(members)]
        return float(model.evaluate_batch(z[None, :])[0])

    phi = np.zeros(d)
    for perm in itertools.permutations(range(d)):
        seen = []
        prev = v(seen)
        for i in perm:
            seen.append(i)
            cur = v(seen)
            phi[i] += cur - prev
            prev = cur
    return phi / math.factorial(d)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
