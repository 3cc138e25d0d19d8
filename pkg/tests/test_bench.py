import csv
import json

import numpy as np
import pytest

from shapk.bench import (
    METHODS,
    aggregate,
    load_dataset,
    run_benchmark,
    run_sensitivity,
    suite_config,
    suite_instances,
)
from shapk.errors import ConfigurationError, LoadError
from shapk.model import LinearModel, save_model

SMALL = {
    "k": 2,
    "eps": 0.02,
    "delta": 0.01,
    "seed": 7,
    "instances": [{"synthetic": {"profile": "separated", "d": 6, "seed": 0, "count": 3, "margin": 0.05, "interaction": 0.1}}],
}


def _strip_timing(report):
    doc = report.to_dict()
    doc["config"].pop("total_seconds", None)
    for c in doc["cells"]:
        c.pop("runtime")
    for agg in doc["aggregates"].values():
        agg.pop("mean_runtime", None)
    for sp in doc["speedups"].values():
        sp.pop("runtime_ratio", None)
    return doc


def _write_csv(path, rows, header=("a", "b", "c")):
    path.write_text("\n".join([",".join(header)] + [",".join(map(str, r)) for r in rows]) + "\n")
    return path


def test_load_dataset(tmp_path):
    x = _write_csv(tmp_path / "x.csv", [[1, 2, 3], [4, 5, 6]])
    b = _write_csv(tmp_path / "b.csv", [[0, 0, 0]])
    ds = load_dataset(x, b)
    assert ds.features == ["a", "b", "c"] and ds.d == 3
    np.testing.assert_array_equal(ds.rows, [[1, 2, 3], [4, 5, 6]])
    np.testing.assert_array_equal(ds.baseline_row, [0, 0, 0])


@pytest.mark.parametrize(
    "rows, baseline, match",
    [
        ([[1, 2, 3], [4, 5]], [[0, 0, 0]], "row 3"),
        ([[1, "x", 3]], [[0, 0, 0]], "non-numeric"),
        ([[1, "nan", 3]], [[0, 0, 0]], "non-finite"),
        ([], [[0, 0, 0]], "no data rows"),
        ([[1, 2, 3]], [[0, 0, 0], [1, 1, 1]], "exactly one"),
    ],
)
def test_load_dataset_errors(tmp_path, rows, baseline, match):
    x = _write_csv(tmp_path / "x.csv", rows)
    b = _write_csv(tmp_path / "b.csv", baseline)
    with pytest.raises(LoadError, match=match):
        load_dataset(x, b)


def test_load_dataset_width_and_missing(tmp_path):
    x = _write_csv(tmp_path / "x.csv", [[1, 2, 3]])
    b = _write_csv(tmp_path / "b.csv", [[0, 0]], header=("a", "b"))
    with pytest.raises(LoadError, match="width"):
        load_dataset(x, b)
    with pytest.raises(LoadError, match="cannot read"):
        load_dataset(tmp_path / "nope.csv", b)


def test_suite_config_defaults_and_errors():
    cfg = suite_config({})
    assert (cfg.k, cfg.eps, cfg.delta, cfg.t_min) == (4, 0.005, 1e-6, 10)
    assert suite_config({"eps": 0.1}, eps=0.3).eps == 0.3
    with pytest.raises(ConfigurationError):
        suite_config({"k": "four"})


def test_suite_instances_model_entry(tmp_path):
    save_model(LinearModel([1.0, -1.0, 2.0]), tmp_path / "m.json")
    _write_csv(tmp_path / "x.csv", [[1, 0, 0], [0, 1, 0], [0, 0, 1]])
    _write_csv(tmp_path / "b.csv", [[0, 0, 0]])
    doc = {"instances": [{"model": "m.json", "data": "x.csv", "baseline": "b.csv", "only_below": 1.5}]}
    named = suite_instances(doc, tmp_path)
    assert [n.name for n in named] == ["m.json:row0", "m.json:row1"]
    assert all(n.phi is None for n in named)
    with pytest.raises(LoadError):
        suite_instances({"instances": [{"bogus": 1}]})
    with pytest.raises(LoadError):
        suite_instances({"instances": []})


def test_run_benchmark_structure():
    rep = run_benchmark(SMALL)
    assert len(rep.cells) == 3 * len(METHODS)
    for c in rep.cells:
        assert c["converged"] and c["eps_approximate"] and c["error"] is None
    assert set(rep.aggregates) == set(METHODS)
    assert rep.speedups["sampling@k"]["baseline"] == "sampling-naive"
    assert rep.speedups["sampling@k"]["n_pairs"] == 3
    assert rep.config["kernel_m_effective"] == 128
    assert rep.to_dict()["schema_version"] == 1


def test_benchmark_reproducible_across_threads():
    a = _strip_timing(run_benchmark(SMALL, workers=1))
    b = _strip_timing(run_benchmark(SMALL, workers=3))
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_cell_errors_are_contained():
    doc = dict(SMALL, kernel_m=4)  # below d + 2: every kernel cell fails
    rep = run_benchmark(doc)
    kernel = [c for c in rep.cells if c["method"].startswith("kernel")]
    assert all(c["stop_reason"] == "error" and "ConfigurationError" in c["error"] for c in kernel)
    assert rep.aggregates["kernel@k"]["failed"]
    assert rep.aggregates["sampling@k"]["n_converged"] == 3


def test_unknown_method_rejected():
    with pytest.raises(ConfigurationError):
        run_benchmark(dict(SMALL, methods=["sampling@k", "magic"]))


def test_aggregate_paired_ratios():
    cells = [
        {"instance": "a", "method": "sampling-naive", "evals": 100, "runtime": 1.0, "converged": True, "error": None},
        {"instance": "a", "method": "sampling@k", "evals": 10, "runtime": 0.5, "converged": True, "error": None},
        {"instance": "b", "method": "sampling-naive", "evals": 300, "runtime": 3.0, "converged": True, "error": None},
        {"instance": "b", "method": "sampling@k", "evals": 30, "runtime": 0.5, "converged": True, "error": None},
        {"instance": "c", "method": "sampling-naive", "evals": 999, "runtime": 9.0, "converged": False, "error": None},
        {"instance": "c", "method": "sampling@k", "evals": 1, "runtime": 0.1, "converged": True, "error": None},
    ]
    agg, sp = aggregate(cells, ["sampling-naive", "sampling@k"])
    assert agg["sampling-naive"]["mean_evals"] == 200 and agg["sampling-naive"]["n_converged"] == 2
    assert sp["sampling@k"]["n_pairs"] == 2
    assert sp["sampling@k"]["evals_ratio"] == pytest.approx(10.0)
    assert sp["sampling@k"]["runtime_ratio"] == pytest.approx(4.0)


def test_sensitivity_sweep(tmp_path):
    rep = run_sensitivity(SMALL, [0.02, 0.04])
    assert len(rep.sweep) == 2 * len(METHODS)
    naive = {r["eps"]: r["mean_evals"] for r in rep.sweep if r["method"] == "sampling-naive"}
    assert naive[0.04] <= naive[0.02]
    rep.write_sweep_csv(tmp_path / "s.csv")
    rows = list(csv.DictReader(open(tmp_path / "s.csv")))
    assert len(rows) == 2 * len(METHODS) and set(rows[0]) >= {"eps", "method", "mean_evals", "ratio_vs_baseline"}
    with pytest.raises(ConfigurationError):
        run_sensitivity(SMALL, [0.04, 0.02])


def test_report_files(tmp_path):
    rep = run_benchmark(SMALL)
    rep.write_json(tmp_path / "r.json")
    rep.write_cells_csv(tmp_path / "r.csv")
    assert json.loads((tmp_path / "r.json").read_text())["config"]["k"] == 2
    assert len(list(csv.DictReader(open(tmp_path / "r.csv")))) == len(rep.cells)
