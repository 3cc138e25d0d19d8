"""Datasets, benchmark suites, and sensitivity sweeps.

A suite is a JSON document naming explanation instances (synthetic profiles
or user-supplied model + CSV rows) and one shared driver configuration.
Every method runs on every instance with the same master seed, so the
per-instance cost ratios are paired comparisons.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigurationError, LoadError, ShapkError
from .model import ExplanationInstance, load_model
from .oracle import is_eps_approximate
from .synthetic import gen_synthetic
from .topk import DEFAULT_MAX_EVALS, TopKConfig, default_workers, run_topk, trial_seeds

SCHEMA_VERSION = 1

METHODS = {
    "sampling-naive": ("sampling", "naive"),
    "sampling-overlap": ("sampling", "overlap_uniform"),
    "sampling@k": ("sampling", "overlap_greedy"),
    "kernel-naive": ("kernel", "naive"),
    "kernel@k": ("kernel", "overlap_uniform"),
}
PAIRS = (
    ("sampling@k", "sampling-naive"),
    ("sampling-overlap", "sampling-naive"),
    ("kernel@k", "kernel-naive"),
)


# -- datasets -----------------------------------------------------------------


@dataclass
class Dataset:
    name: str
    features: list
    rows: np.ndarray
    baseline_row: np.ndarray

    @property
    def d(self) -> int:
        return len(self.features)


def _read_numeric_csv(path: Path, what: str):
    try:
        text = path.read_text()
    except OSError as exc:
        raise LoadError(f"cannot read {what} {path}: {exc}") from exc
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise LoadError(f"{path}: empty file, expected a header row") from None
    header = [h.strip() for h in header]
    rows = []
    for lineno, raw in enumerate(reader, start=2):
        if not raw or all(not c.strip() for c in raw):
            continue
        if len(raw) != len(header):
            raise LoadError(f"{path}: row {lineno} has {len(raw)} cells, header has {len(header)}")
        try:
            rows.append([float(c) for c in raw])
        except ValueError:
            raise LoadError(f"{path}: row {lineno} has a non-numeric cell") from None
        if not all(math.isfinite(v) for v in rows[-1]):
            raise LoadError(f"{path}: row {lineno} has a non-finite cell")
    return header, rows


def load_dataset(csv_path, baseline_path) -> Dataset:
    """Load rows to explain plus a one-row baseline CSV with the same header width."""
    csv_path, baseline_path = Path(csv_path), Path(baseline_path)
    header, rows = _read_numeric_csv(csv_path, "dataset")
    if not rows:
        raise LoadError(f"{csv_path}: no data rows")
    b_header, b_rows = _read_numeric_csv(baseline_path, "baseline")
    if len(b_rows) != 1:
        raise LoadError(f"{baseline_path}: expected exactly one baseline row, found {len(b_rows)}")
    if len(b_header) != len(header):
        raise LoadError(f"{baseline_path}: baseline width {len(b_header)} != dataset width {len(header)}")
    return Dataset(csv_path.stem, header, np.array(rows), np.array(b_rows[0]))


# -- suites -------------------------------------------------------------------


@dataclass
class NamedInstance:
    name: str
    instance: ExplanationInstance
    seed: int
    phi: Optional[np.ndarray] = None


def _suite_doc(suite):
    if isinstance(suite, dict):
        return suite, Path(".")
    path = Path(suite)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise LoadError(f"cannot read suite {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise LoadError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise LoadError(f"{path}: suite must be a JSON object")
    return doc, path.parent


def suite_config(doc: dict, eps: Optional[float] = None) -> TopKConfig:
    try:
        return TopKConfig(
            k=int(doc.get("k", 4)),
            eps=float(eps if eps is not None else doc.get("eps", 0.005)),
            delta=float(doc.get("delta", 1e-6)),
            t_min=int(doc.get("t_min", 10)),
            max_evals=doc.get("max_evals", DEFAULT_MAX_EVALS),
            seed=int(doc.get("seed", 0)),
            kernel_m=doc.get("kernel_m"),
            include_paired=bool(doc.get("include_paired", False)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"invalid suite configuration: {exc}") from exc


def suite_instances(doc: dict, root: Path = Path(".")) -> list:
    """Expand a suite's instance entries; master seeds derive from the suite seed."""
    entries = doc.get("instances")
    if not entries:
        raise LoadError("suite has no instances")
    named = []
    for entry in entries:
        if "synthetic" in entry:
            spec = dict(entry["synthetic"])
            count = int(spec.pop("count", 1))
            first = int(spec.pop("seed", 0))
            profile = spec.pop("profile", "separated")
            d = int(spec.pop("d"))
            spec.setdefault("k", doc.get("k", 4))
            for s in range(first, first + count):
                inst, phi = gen_synthetic(d, profile, s, **spec)
                named.append((f"synthetic:{profile}:d{d}:s{s}", inst, phi))
        elif "model" in entry:
            model = load_model(root / entry["model"])
            data = load_dataset(root / entry["data"], root / entry["baseline"])
            if data.d != model.input_dim:
                raise LoadError(f"dataset width {data.d} != model input_dim {model.input_dim}")
            rows = entry.get("rows")
            rows = range(len(data.rows)) if rows is None else [int(r) for r in rows]
            threshold = entry.get("only_below")
            for r in rows:
                x = data.rows[r]
                inst = ExplanationInstance(model, x, data.baseline_row)
                if threshold is not None and model.evaluate_batch(x[None, :])[0] >= threshold:
                    continue
                named.append((f"{entry['model']}:row{r}", inst, None))
        else:
            raise LoadError(f"suite instance entry needs 'synthetic' or 'model': {entry}")
    seeds = trial_seeds(int(doc.get("seed", 0)), len(named))
    return [NamedInstance(n, i, s, phi) for (n, i, phi), s in zip(named, seeds)]


# -- reports ------------------------------------------------------------------


@dataclass
class ExperimentReport:
    config: dict
    cells: list
    aggregates: dict = field(default_factory=dict)
    speedups: dict = field(default_factory=dict)
    sweep: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "config": self.config,
            "cells": self.cells,
            "aggregates": self.aggregates,
            "speedups": self.speedups,
            "sweep": self.sweep,
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    def write_cells_csv(self, path) -> None:
        cols = ["eps", "instance", "method", "evals", "runtime", "converged", "stop_reason", "selected", "error"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for c in self.cells:
                w.writerow([c["eps"], c["instance"], c["method"], c["evals"], c["runtime"], c["converged"],
                            c["stop_reason"], " ".join(map(str, c["selected"] or [])), c["error"] or ""])

    def write_sweep_csv(self, path) -> None:
        cols = ["eps", "method", "mean_evals", "mean_runtime", "n_converged", "ratio_vs_baseline"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in self.sweep:
                w.writerow([row[c] for c in cols])


def _run_cell(ni: NamedInstance, method: str, cfg: TopKConfig) -> dict:
    estimator, strategy = METHODS[method]
    cell = {"eps": cfg.eps, "instance": ni.name, "method": method, "seed": ni.seed}
    try:
        c = TopKConfig(**{**cfg.__dict__, "estimator": estimator, "strategy": strategy, "seed": ni.seed})
        res = run_topk(ni.instance.fresh(), c)
    except ShapkError as exc:
        cell.update(evals=None, runtime=None, selected=None, converged=False,
                    stop_reason="error", error=f"{type(exc).__name__}: {exc}")
        return cell
    cell.update(evals=res.evals, runtime=res.wall_time, selected=list(res.selected),
                converged=res.converged, stop_reason=res.stop_reason, error=None)
    if ni.phi is not None:
        cell["eps_approximate"] = is_eps_approximate(res.selected, ni.phi, cfg.k, cfg.eps)
    return cell


def aggregate(cells: list, methods) -> tuple:
    """Per-method means over converged cells and paired speedups."""
    aggregates = {}
    for m in methods:
        mine = [c for c in cells if c["method"] == m]
        ok = [c for c in mine if c["converged"]]
        aggregates[m] = {
            "n_cells": len(mine),
            "n_converged": len(ok),
            "mean_evals": float(np.mean([c["evals"] for c in ok])) if ok else None,
            "mean_runtime": float(np.mean([c["runtime"] for c in ok])) if ok else None,
            "failed": bool(mine) and all(c["error"] for c in mine),
        }
    speedups = {}
    for fast, base in PAIRS:
        if fast not in methods or base not in methods:
            continue
        by_inst = {}
        for c in cells:
            if c["method"] in (fast, base):
                by_inst.setdefault(c["instance"], {})[c["method"]] = c
        paired = [v for v in by_inst.values() if fast in v and base in v
                  and v[fast]["converged"] and v[base]["converged"]]
        entry = {"baseline": base, "n_pairs": len(paired)}
        if paired:
            be = [p[base]["evals"] for p in paired]
            fe = [p[fast]["evals"] for p in paired]
            br = [p[base]["runtime"] for p in paired]
            fr = [p[fast]["runtime"] for p in paired]
            entry["evals_ratio"] = float(np.mean(be) / np.mean(fe))
            entry["runtime_ratio"] = float(np.mean(br) / np.mean(fr)) if np.mean(fr) > 0 else None
            entry["mean_paired_evals_ratio"] = float(np.mean(np.divide(be, fe)))
        speedups[fast] = entry
    return aggregates, speedups


def _run_cells(named, methods, cfg, workers) -> list:
    jobs = [(ni, m) for ni in named for m in methods]
    workers = workers or default_workers()
    if workers == 1:
        return [_run_cell(ni, m, cfg) for ni, m in jobs]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(lambda job: _run_cell(job[0], job[1], cfg), jobs))


def _methods(doc) -> list:
    methods = doc.get("methods", list(METHODS))
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ConfigurationError(f"unknown methods {bad}; choose from {list(METHODS)}")
    return methods


def run_benchmark(suite, workers: Optional[int] = None, eps: Optional[float] = None) -> ExperimentReport:
    """Run every method on every suite instance with paired seeds."""
    doc, root = _suite_doc(suite)
    cfg = suite_config(doc, eps)
    methods = _methods(doc)
    named = suite_instances(doc, root)
    t0 = time.perf_counter()
    cells = _run_cells(named, methods, cfg, workers)
    aggregates, speedups = aggregate(cells, methods)
    config = {**{k: v for k, v in cfg.__dict__.items() if k not in ("estimator", "strategy")},
              "methods": methods, "n_instances": len(named),
              "kernel_m_effective": cfg.kernel_batch(named[0].instance.d).coalitions_per_replicate,
              "total_seconds": time.perf_counter() - t0}
    return ExperimentReport(config, cells, aggregates, speedups)


def run_sensitivity(suite, eps_grid, workers: Optional[int] = None) -> ExperimentReport:
    """Benchmark at each ``eps`` in an ascending grid; the sweep holds one row per (eps, method)."""
    eps_grid = [float(e) for e in eps_grid]
    if not eps_grid or any(e <= 0 for e in eps_grid) or eps_grid != sorted(eps_grid):
        raise ConfigurationError("eps grid must be non-empty, positive and ascending")
    cells, sweep, by_eps = [], [], {}
    config = None
    for eps in eps_grid:
        rep = run_benchmark(suite, workers, eps)
        config = config or rep.config
        cells.extend(rep.cells)
        by_eps[eps] = rep
        for m, agg in rep.aggregates.items():
            ratio = rep.speedups.get(m, {}).get("evals_ratio")
            sweep.append({"eps": eps, "method": m, "mean_evals": agg["mean_evals"],
                          "mean_runtime": agg["mean_runtime"], "n_converged": agg["n_converged"],
                          "ratio_vs_baseline": ratio})
    config = {**config, "eps_grid": eps_grid}
    config.pop("eps", None)
    return ExperimentReport(config, cells, sweep=sweep,
                            aggregates={str(e): r.aggregates for e, r in by_eps.items()},
                            speedups={str(e): r.speedups for e, r in by_eps.items()})
