"""Command-line interface: ``multiplierless <command> ...``.

Commands
    approximate   exact model -> approximate model file
    sweep-curve   error curve of one matrix over a grid of expansion factors
    infer         run one input through a model, with an arithmetic trace
    evaluate      accuracy, top-k and ROC points on an IDX dataset
    cost          arithmetic cost table for one or more models
    compare       relative-accuracy grid from saved evaluation reports
    activations   deviation report for the activation approximations

Exit status is 0 on success, 2 for configuration errors (bad flags, unknown
sets, scheme/model mismatch) and 3 for data errors (unreadable or
inconsistent model, matrix, image or dataset files, numeric overflow).
The thread count for matrix approximation comes from MULTIPLIERLESS_THREADS.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .activations import ActivationKind, breakpoints, max_deviation, parse_kind
from .approximator import NETWORK_SWEEP, SweepConfig, parse_scheme, scheme_label, approximate_network, sweep
from .cost import cost_table, static_cost
from .dyadic import csd_encode
from .engine import EngineError, FixedPointFormat, infer_multiplierless, infer_reference
from .evalharness import DatasetError, EvalReport, evaluate, load_idx, preprocess, read_idx, read_pgm, relative_table
from .model import ApproximateWeight, ModelError, dumps, load_model

log = logging.getLogger("multiplierless")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3


class ConfigError(Exception):
    """Invalid flags or flag combinations."""


class DataError(Exception):
    """Unreadable or inconsistent input files."""


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _write(text: str, out: str | None) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _json(doc) -> str:
    return json.dumps(doc, indent=1) + "\n"


def _load(path: str):
    try:
        return load_model(path)
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None


def _scheme(text: str, model=None, count: int | None = None):
    if model is not None:
        count = model.weight_layer_count
    try:
        return parse_scheme(text, count)
    except KeyError as exc:
        raise ConfigError(exc.args[0]) from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _activation(tag):
    if tag is None:
        return None
    try:
        return parse_kind(tag)
    except (KeyError, ValueError) as exc:
        raise ConfigError(str(exc.args[0] if exc.args else exc)) from None


def _sweep_config(args, default: SweepConfig) -> SweepConfig:
    relative = default.relative if args.grid is None else args.grid == "relative"
    try:
        return SweepConfig(
            alpha_min=default.alpha_min if args.alpha_min is None else args.alpha_min,
            alpha_max=default.alpha_max if args.alpha_max is None else args.alpha_max,
            alpha_step=default.alpha_step if args.alpha_step is None else args.alpha_step,
            refine=args.refine,
            relative=relative,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _format(args) -> FixedPointFormat:
    try:
        return FixedPointFormat(args.total_bits, args.fraction_bits, args.overflow, args.guard_bits)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def read_matrix(path: str) -> np.ndarray:
    """A matrix from JSON (nested lists, or ``{"matrix": ...}``) or from CSV / whitespace text."""
    p = Path(path)
    try:
        text = p.read_text()
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    try:
        if text.lstrip().startswith(("[", "{")):
            doc = json.loads(text)
            if isinstance(doc, dict):
                doc = doc.get("matrix")
            arr = np.array(doc, dtype=float)
        else:
            rows = [r.replace(",", " ").split() for r in text.splitlines()]
            arr = np.array([[float(v) for v in r] for r in rows if r], dtype=float)
    except (ValueError, TypeError) as exc:
        raise DataError(f"{path}: not a numeric matrix ({exc})") from None
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.size == 0 or not np.all(np.isfinite(arr)):
        raise DataError(f"{path}: expected a non-empty 2-D matrix of finite numbers")
    return arr


def _read_input(path: str, index: int, shape) -> np.ndarray:
    p = Path(path)
    if not p.exists():
        raise DataError(f"{path}: no such file")
    name = p.name.lower()
    if name.endswith(".npy"):
        return np.load(p, allow_pickle=False).astype(float)
    if name.endswith((".pgm", ".pnm")):
        return preprocess(read_pgm(p), shape)
    images = read_idx(p)
    if images.ndim == 3:
        if not 0 <= index < len(images):
            raise ConfigError(f"--index {index} outside 0..{len(images) - 1}")
        images = images[index]
    return preprocess(images, shape)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_approximate(args) -> int:
    model = _load(args.model)
    if model.precision == "approximate":
        raise ConfigError(f"{args.model} is already approximate")
    sets = _scheme(args.sets, model)
    act = _activation(args.activation)
    cfg = _sweep_config(args, NETWORK_SWEEP)
    log.info("approximating %s with %s", model.name, scheme_label(sets))
    approx = approximate_network(model, sets, activation=act, cfg=cfg, scalar_bits=args.scalar_bits)
    _write(dumps(approx), args.out)

    layers = []
    for pos, layer in enumerate(approx.layers):
        ws = [w for w in layer.weights if isinstance(w, ApproximateWeight)]
        if not ws:
            continue
        errs = [float(np.sqrt(max(w.error, 0.0))) for w in ws]
        layers.append({"layer": pos, "set": ws[0].set_name, "matrices": len(ws), "mean_frobenius_error": float(np.mean(errs))})
    before, after = static_cost(model), static_cost(approx)
    summary = {
        "model": approx.name,
        "scheme": approx.meta["scheme"],
        "activation": str(act) if act is not None else None,
        "layers": layers,
        "cost": {"exact": before.to_dict(), "approximate": after.to_dict()},
        "delta": {
            "multiplications": after.multiplications - before.multiplications,
            "additions": after.additions - before.additions,
            "csd_additions": after.csd_additions,
            "bit_shifts": after.bit_shifts,
        },
    }
    for entry in summary["cost"].values():
        entry.pop("per_layer")
    text = _json(summary)
    if args.out in (None, "-"):
        sys.stderr.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_sweep_curve(args) -> int:
    m = read_matrix(args.matrix)
    sets = _scheme(args.sets, count=1)
    cfg = _sweep_config(args, SweepConfig())
    res = sweep(m, sets[0], cfg)
    t = res.t_dyadic()
    block = {
        "set": res.set_name,
        "alpha_star": res.alpha_star,
        "alpha_csd": str(csd_encode(res.alpha_star, 8)),
        "error_star": res.error_star,
        "grid_alpha": res.grid_alpha,
        "grid_error": res.grid_error,
        "t_star": [[str(v) for v in row] for row in t],
    }
    if args.out in (None, "-"):
        sys.stdout.write(res.curve_csv())
        sys.stderr.write(_json(block))
    else:
        Path(args.out).write_text(res.curve_csv())
        sys.stdout.write(_json(block))
    return EXIT_OK


def cmd_infer(args) -> int:
    model = _load(args.model)
    if args.engine == "multiplierless" and model.precision != "approximate":
        raise ConfigError("the multiplierless engine needs an approximate model; run 'approximate' first")
    shape = model.input_shape[:2]
    x = _read_input(args.input, args.index, shape)
    doc = {"model": model.name, "engine": args.engine}
    if args.engine == "reference":
        y = infer_reference(model, x)
    else:
        fmt = _format(args)
        y, trace = infer_multiplierless(model, x, fmt)
        doc["format"] = {"total_bits": fmt.total_bits, "fraction_bits": fmt.fraction_bits, "guard_bits": fmt.guard_bits}
        doc["trace"] = json.loads(trace.to_json())
    y = np.asarray(y, dtype=float).ravel()
    doc["output"] = [float(v) for v in y]
    doc["prediction"] = int(np.argmax(y))
    _write(_json(doc), args.out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = _load(args.model)
    if args.engine == "multiplierless" and model.precision != "approximate":
        raise ConfigError("the multiplierless engine needs an approximate model; run 'approximate' first")
    for path in (args.images, args.labels):
        if not Path(path).exists():
            raise DataError(f"{path}: no such file")
    ds = load_idx(args.images, args.labels, shape=model.input_shape[:2], class_count=model.output_size)
    if args.limit:
        ds = ds.subset(args.limit)
    fmt = _format(args) if args.engine == "multiplierless" else None
    report = evaluate(model, ds, k=args.topk, engine=args.engine, fmt=fmt, with_roc=True)
    if args.baseline:
        try:
            base = EvalReport.from_dict(json.loads(Path(args.baseline).read_text()))
        except (OSError, ValueError, TypeError) as exc:
            raise DataError(f"{args.baseline}: unreadable report ({exc})") from None
        report = report.relative_to(base)
    if args.roc:
        Path(args.roc).write_text(report.roc_csv())
    _write(_json(report.to_dict(with_roc=not args.no_roc)), args.out)
    return EXIT_OK


def cmd_cost(args) -> int:
    reports = []
    for path in args.models:
        r = static_cost(_load(path))
        reports.append(r.scaled(args.windows) if args.windows > 1 else r)
    if args.format == "json":
        _write(_json([r.to_dict() for r in reports]), args.out)
    else:
        _write(cost_table(reports, args.format), args.out)
    return EXIT_OK


def cmd_compare(args) -> int:
    def read(path):
        try:
            return EvalReport.from_dict(json.loads(Path(path).read_text()))
        except FileNotFoundError:
            raise DataError(f"{path}: no such file") from None
        except (ValueError, TypeError) as exc:
            raise DataError(f"{path}: unreadable report ({exc})") from None

    exact = read(args.exact)
    approx = [read(p) for p in args.reports]
    rows = args.rows.split(",") if args.rows else None
    columns = args.columns.split(",") if args.columns else None
    _write(relative_table(exact, approx, rows, columns, args.format), args.out)
    return EXIT_OK


def cmd_activations(args) -> int:
    kinds = [k for k in ActivationKind if k not in (ActivationKind.EXACT, ActivationKind.RELU, ActivationKind.IDENTITY)]
    rows = [[str(k), repr(max_deviation(k, samples=args.samples)), " ".join(repr(b) for b in breakpoints(k))] for k in kinds]
    header = ["activation", "max_deviation", "breakpoints"]
    if args.format == "md":
        lines = ["| " + " | ".join(header) + " |", "|---|---|---|"] + ["| " + " | ".join(r) + " |" for r in rows]
        text = "\n".join(lines) + "\n"
    else:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        text = buf.getvalue()
    _write(text, args.out)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def _sweep_flags(p: argparse.ArgumentParser, grid_default: str) -> None:
    g = p.add_argument_group("expansion-factor grid")
    g.add_argument("--alpha-min", type=float)
    g.add_argument("--alpha-max", type=float)
    g.add_argument("--alpha-step", type=float)
    g.add_argument("--refine", action=argparse.BooleanOptionalAction, default=True, help="polish the grid minimum (default on)")
    g.add_argument(
        "--grid",
        choices=("absolute", "relative"),
        help=f"absolute bounds, or bounds in units of max|M|/max(D) (default {grid_default})",
    )


def _format_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("fixed-point format")
    g.add_argument("--fraction-bits", type=int, default=16)
    g.add_argument("--total-bits", type=int, default=32)
    g.add_argument("--guard-bits", type=int, default=16)
    g.add_argument("--overflow", choices=("saturate", "error"), default="saturate")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multiplierless", description="Multiplierless approximation of convolutional networks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("approximate", help="approximate an exact model")
    p.add_argument("model")
    p.add_argument("--sets", default="7", help='dyadic set per weight layer, e.g. "7" or "7,3,3,3"')
    p.add_argument("--activation", help="replacement for the tanh-sigmoid, e.g. linear2, plan, asg")
    p.add_argument("--scalar-bits", type=int, default=7, help="fraction bits for pooling coefficients and biases")
    p.add_argument("--out", help="model file (default stdout)")
    _sweep_flags(p, "relative")
    p.set_defaults(func=cmd_approximate)

    p = sub.add_parser("sweep-curve", help="error curve of a single matrix")
    p.add_argument("matrix", help="JSON or CSV matrix")
    p.add_argument("--sets", default="8")
    p.add_argument("--out", help="curve CSV (default stdout)")
    _sweep_flags(p, "absolute")
    p.set_defaults(func=cmd_sweep_curve)

    p = sub.add_parser("infer", help="run one input")
    p.add_argument("model")
    p.add_argument("input", help="PGM, IDX image file or .npy array")
    p.add_argument("--index", type=int, default=0, help="sample index inside an IDX file")
    p.add_argument("--engine", choices=("reference", "multiplierless"), default="reference")
    p.add_argument("--out")
    _format_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="accuracy on an IDX dataset")
    p.add_argument("model")
    p.add_argument("--images", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--engine", choices=("reference", "multiplierless"), default="reference")
    p.add_argument("--topk", type=int, default=5)
    p.add_argument("--limit", type=int, default=0, help="use only the first N samples")
    p.add_argument("--baseline", help="exact-model report for relative accuracy")
    p.add_argument("--roc", help="write ROC points as CSV")
    p.add_argument("--no-roc", action="store_true", help="leave ROC points out of the JSON report")
    p.add_argument("--out")
    _format_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("cost", help="arithmetic cost table")
    p.add_argument("models", nargs="+")
    p.add_argument("--format", choices=("csv", "md", "json"), default="csv")
    p.add_argument("--windows", type=int, default=1, help="multiply by the number of network applications")
    p.add_argument("--out")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("compare", help="relative-accuracy table from evaluation reports")
    p.add_argument("exact")
    p.add_argument("reports", nargs="+")
    p.add_argument("--rows", help="comma-separated scheme order")
    p.add_argument("--columns", help="comma-separated activation order")
    p.add_argument("--format", choices=("csv", "md"), default="csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("activations", help="maximum deviation of each approximation from the tanh-sigmoid")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--format", choices=("csv", "md"), default="csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_activations)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"multiplierless: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ModelError, DatasetError, EngineError, OverflowError, OSError) as exc:
        print(f"multiplierless: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
