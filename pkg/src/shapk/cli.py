"""``shapk`` command-line interface.

Exit codes: 0 success, 1 usage/configuration error, 2 data error,
3 budget exhausted before convergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .bench import SCHEMA_VERSION, load_dataset, run_benchmark, run_sensitivity
from .errors import ConfigurationError, LoadError, OracleScaleError, ShapkError
from .model import ExplanationInstance, load_model
from .oracle import exact_shap
from .topk import TopKConfig, default_workers, run_topk

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_BUDGET = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _eps_list(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="shapk", description="Top-k Shapley feature identification with PAC guarantees.")
    p.add_argument("--version", action="version", version=f"shapk {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def data_args(sp):
        sp.add_argument("--model", required=True, help="model JSON file")
        sp.add_argument("--x", required=True, help="CSV of inputs to explain (header row)")
        sp.add_argument("--baseline", required=True, help="one-row baseline CSV (same header width)")
        sp.add_argument("--rows", type=str, default=None, help="comma-separated row indices (default: all)")
        sp.add_argument("--only-below", type=float, default=None,
                        help="explain only rows whose model output is below this threshold")
        sp.add_argument("--out", required=True)

    ex = sub.add_parser("explain", help="identify the top-k features of each input row")
    data_args(ex)
    ex.add_argument("--k", type=int, default=4)
    ex.add_argument("--eps", type=float, default=0.005)
    ex.add_argument("--delta", type=float, default=1e-6)
    ex.add_argument("--method", choices=["sampling", "kernel"], default="sampling")
    ex.add_argument("--strategy", choices=["naive", "overlap", "greedy"], default="greedy")
    ex.add_argument("--tmin", type=int, default=10)
    ex.add_argument("--seed", type=int, default=0)
    ex.add_argument("--max-evals", type=int, default=10**7)
    ex.add_argument("--kernel-m", type=int, default=None, help="coalitions per KernelSHAP replicate")

    exa = sub.add_parser("exact", help="exact SHAP values by enumeration (d <= 20)")
    data_args(exa)

    be = sub.add_parser("bench", help="run a benchmark suite")
    be.add_argument("--suite", required=True)
    be.add_argument("--out", required=True, help="report JSON; a .cells.csv is written alongside")
    be.add_argument("--threads", type=int, default=None, help="worker threads (default: $SHAPK_THREADS or 1)")

    sw = sub.add_parser("sweep", help="sensitivity sweep over eps")
    sw.add_argument("--suite", required=True)
    sw.add_argument("--eps", type=_eps_list, required=True, help="ascending comma-separated eps grid")
    sw.add_argument("--out", required=True, help="sweep CSV; the full report goes to <out>.json")
    sw.add_argument("--threads", type=int, default=None)
    return p


def _instances(args):
    model = load_model(args.model)
    data = load_dataset(args.x, args.baseline)
    if data.d != model.input_dim:
        raise LoadError(f"{args.x}: {data.d} columns but the model expects {model.input_dim}")
    if args.rows:
        try:
            rows = [int(r) for r in args.rows.split(",")]
        except ValueError:
            raise ConfigurationError(f"--rows must be comma-separated integers, got {args.rows!r}") from None
        bad = [r for r in rows if not 0 <= r < len(data.rows)]
        if bad:
            raise ConfigurationError(f"row indices out of range: {bad}")
    else:
        rows = list(range(len(data.rows)))
    out = []
    for r in rows:
        x = data.rows[r]
        if args.only_below is not None and model.evaluate_batch(x[None, :])[0] >= args.only_below:
            continue
        out.append((r, ExplanationInstance(model, x, data.baseline_row)))
    return data, out


def _write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=1))


def cmd_explain(args) -> int:
    data, items = _instances(args)
    cfg = TopKConfig(k=args.k, eps=args.eps, delta=args.delta, t_min=args.tmin, estimator=args.method,
                     strategy=args.strategy, max_evals=args.max_evals, seed=args.seed, kernel_m=args.kernel_m)
    results = []
    for r, inst in items:
        res = run_topk(inst, cfg)
        results.append({"row": r, "selected_names": [data.features[i] for i in res.selected], **res.to_dict()})
    doc = {
        "schema_version": SCHEMA_VERSION,
        "config": {**cfg.__dict__, "kernel_m_effective": cfg.kernel_batch(data.d).coalitions_per_replicate
                   if cfg.estimator == "kernel" else None},
        "features": data.features,
        "results": results,
    }
    _write_json(args.out, doc)
    return EXIT_BUDGET if any(r["stop_reason"] != "converged" for r in results) else EXIT_OK


def cmd_exact(args) -> int:
    data, items = _instances(args)
    rows = []
    for r, inst in items:
        es = exact_shap(inst)
        rows.append({"row": r, "phi": es.phi.tolist(), "efficiency_gap": es.efficiency_gap, "evals": inst.evals})
    _write_json(args.out, {"schema_version": SCHEMA_VERSION, "features": data.features, "results": rows})
    return EXIT_OK


def _budget_code(report) -> int:
    return EXIT_BUDGET if any(c["stop_reason"] == "budget_exhausted" for c in report.cells) else EXIT_OK


def cmd_bench(args) -> int:
    report = run_benchmark(args.suite, workers=args.threads or default_workers())
    report.write_json(args.out)
    report.write_cells_csv(Path(args.out).with_suffix(".cells.csv"))
    return _budget_code(report)


def cmd_sweep(args) -> int:
    report = run_sensitivity(args.suite, args.eps, workers=args.threads or default_workers())
    report.write_sweep_csv(args.out)
    report.write_json(Path(args.out).with_suffix(".json"))
    return _budget_code(report)


COMMANDS = {"explain": cmd_explain, "exact": cmd_exact, "bench": cmd_bench, "sweep": cmd_sweep}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except LoadError as exc:
        print(f"shapk: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigurationError, OracleScaleError) as exc:
        print(f"shapk: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ShapkError as exc:
        print(f"shapk: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
