"""Compiled kernels vs the pure-Python fallback.

    python benchmarks/bench_backends.py [--repeat 5] [--out backends.json]

Times a batched forward pass, per-feature SamplingSHAP replicates, one
round-robin round, and a whole naive SamplingSHAP run on the same
instances under each backend, and checks both backends agree.
"""

import argparse
import json
import platform
import timeit

import numpy as np

from shapk import _backend
from shapk.estimators import FeatureStreams, sampling_shap_replicates, sampling_shap_round
from shapk.model import ExplanationInstance, Layer, MLPModel
from shapk.synthetic import gen_synthetic
from shapk.topk import TopKConfig, run_topk


def mlp_instance(d=20, seed=0):
    rng = np.random.default_rng(seed)
    dims = [d, 32, 32, 16, 8, 1]
    acts = ["relu", "relu", "relu", "relu", "none"]
    layers = tuple(Layer(rng.normal(size=(o, i)) / np.sqrt(i), rng.normal(size=o) * 0.1, a)
                   for i, o, a in zip(dims[:-1], dims[1:], acts))
    return ExplanationInstance(MLPModel(layers), rng.uniform(-1, 1, d), rng.uniform(-1, 1, d))


def workloads():
    synth = gen_synthetic(20, "separated", 0, k=4, margin=0.01, interaction=0.01)[0]
    mlp = mlp_instance()
    Z = np.random.default_rng(1).normal(size=(4096, 20))

    def replicate_calls(inst):
        g = FeatureStreams(0, inst.d).feature(3)
        return lambda: [sampling_shap_replicates(inst, 3, g, 1) for _ in range(200)]

    def round_calls(inst):
        s = FeatureStreams(0, inst.d)
        rngs = [s.feature(i) for i in range(inst.d)]
        return lambda: [sampling_shap_round(inst, rngs) for _ in range(50)]

    cfg = TopKConfig(4, 0.005, 1e-6, strategy="naive", seed=1)
    return {
        "forward_4096_mlp": lambda: _backend.forward(mlp.model, Z),
        "replicate_x200_mlp": replicate_calls(mlp),
        "replicate_x200_synthetic": replicate_calls(synth),
        "round_x50_synthetic": round_calls(synth),
        "naive_run_synthetic": lambda: run_topk(synth.fresh(), cfg),
    }


def agreement():
    inst = mlp_instance()
    out = {}
    for name in _backend.BACKENDS:
        with _backend.using(name):
            out[name] = sampling_shap_replicates(inst.fresh(), 5, FeatureStreams(9, 20).feature(5), 1000)
    return float(np.abs(out["compiled"] - out["python"]).max())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    if not _backend.compiled_available():
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")

    rows = {}
    for name, fn in workloads().items():
        times = {}
        for backend in _backend.BACKENDS:
            with _backend.using(backend):
                times[backend] = min(timeit.repeat(fn, number=1, repeat=args.repeat))
        rows[name] = {**times, "speedup": times["python"] / times["compiled"]}
        print(f"{name:28s} compiled {times['compiled'] * 1e3:9.2f} ms  python {times['python'] * 1e3:9.2f} ms"
              f"  x{rows[name]['speedup']:.1f}")
    diff = agreement()
    print(f"max |compiled - python| over 1000 replicates: {diff:.1e}")
    if args.out:
        doc = {"python": platform.python_version(), "numpy": np.__version__, "results": rows, "max_abs_diff": diff}
        with open(args.out, "w") as fh:
            json.dump(doc, fh, indent=1)


if __name__ == "__main__":
    main()
