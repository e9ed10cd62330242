"""Command-line interface.

Exit codes: 0 success, 1 runtime failure, 2 usage error.  Every command that
writes files also writes a JSON manifest (arguments, seeds, library
versions, timestamp) that ``rerun --manifest`` can replay; all other output
is byte-for-byte reproducible for a fixed seed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import re
import sys
from contextlib import contextmanager
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, defaults
from .copulas import UnsupportedError
from .data import DataError, MissingColumnError, load_covariates, load_csv
from .demo import DataUnavailable, DemoConfig, load_height_weight, resolve_data, run_demo
from .evaluation import (
    BENCH_FAMILIES,
    BenchmarkConfig,
    benchmark_copula_learning,
    evaluate,
    write_benchmark_csv,
    write_plot_csv,
    write_report_csv,
)
from .gmmn import Architecture
from .pipeline import (
    DEPENDENCE_ALIASES,
    MARGINAL_KINDS,
    FitConfig,
    SchemaError,
    batch_predict,
    fit_joint,
    joint_probability,
    load_model,
    predict_distribution,
    save_model,
    write_sample_csv,
)

logger = logging.getLogger("jointpred")


class UsageError(Exception):
    """Bad input that should exit with status 2."""


# -- argument types -------------------------------------------------------------

def positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def name_list(text: str) -> list[str]:
    names = [t.strip() for t in text.split(",") if t.strip()]
    if not names:
        raise argparse.ArgumentTypeError("expected a comma-separated list of column names")
    return names


def architecture(text: str) -> str:
    try:
        Architecture.from_notation(text, 2)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return text


def parse_assignments(text: str) -> dict[str, str]:
    """``"age=6,male=1"`` -> ``{"age": "6", "male": "1"}``."""
    out = {}
    for part in text.split(","):
        if not part.strip():
            continue
        key, sep, value = part.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"bad covariate assignment {part!r}; expected name=value")
        out[key.strip()] = value.strip()
    return out


_TERM = re.compile(r"\s*(?P<dim>[A-Za-z_][\w.]*|\d+)\s*(?P<op>[<>])\s*(?P<num>[-+]?(\d+(\.\d*)?|\.\d+)([eE][-+]?\d+)?)\s*$")


def parse_event(text: str, names: Sequence[str]) -> list[tuple[int, str, float]]:
    """Parse ``"d1>116,d2<21"`` into 0-based ``(dim, op, threshold)`` triples.

    A dimension is ``d<k>`` (1-based), a bare 1-based index, or a response
    column name.  Errors name the character position of the bad term.
    """
    if not text.strip():
        raise UsageError("empty event")
    terms, pos = [], 0
    for chunk in text.split(","):
        m = _TERM.match(chunk)
        if m is None:
            raise UsageError(f"malformed event term {chunk.strip()!r} at position {pos + 1}")
        dim = m.group("dim")
        if dim in names:
            idx = list(names).index(dim)
        else:
            digits = dim[1:] if re.fullmatch(r"d\d+", dim) else dim
            if not digits.isdigit():
                raise UsageError(f"unknown response {dim!r} at position {pos + 1 + m.start('dim')}")
            idx = int(digits) - 1
            if not 0 <= idx < len(names):
                raise UsageError(f"response index {digits} out of range at position {pos + 1 + m.start('dim')}")
        terms.append((idx, m.group("op"), float(m.group("num"))))
        pos += len(chunk) + 1
    return terms


# -- manifests -------------------------------------------------------------------

def _versions() -> dict[str, str]:
    out = {"python": platform.python_version(), "jointpred": __version__}
    for pkg in ("numpy", "scipy"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = "unknown"
    return out


def manifest_path(out: str | Path) -> Path:
    out = Path(out)
    return out / "manifest.json" if out.is_dir() else Path(f"{out}.manifest.json")


def write_manifest(out: str | Path, argv: Sequence[str], args: argparse.Namespace, extra: dict | None = None) -> Path:
    config = {k: v for k, v in vars(args).items() if k != "func"}
    record = {
        "command": args.command,
        "argv": list(argv),
        "cwd": os.getcwd(),
        "config": json.loads(json.dumps(config, default=str)),
        "seed": getattr(args, "seed", None),
        "versions": _versions(),
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    record.update(extra or {})
    path = manifest_path(out)
    path.write_text(json.dumps(record, indent=1, sort_keys=True) + "\n")
    return path


# -- commands ------------------------------------------------------------------

def _fit_config(args) -> FitConfig:
    return FitConfig(
        n_trees=args.n_trees,
        min_node_size=args.min_node_size,
        mtry=args.mtry,
        architecture=args.arch,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        dropout_rate=args.dropout,
        seed=args.seed,
        n_jobs=args.threads,
    )


def cmd_fit(args, argv) -> int:
    ds = load_csv(args.data, args.responses, args.covariates)
    model = fit_joint(ds, args.marginal, args.dependence, _fit_config(args))
    save_model(model, args.out)
    write_manifest(args.out, argv, args, {"n_trn": ds.n, "n_dropped": ds.n_dropped,
                                          "model_id": model.model_id, "label": model.label})
    print(f"{model.label} fit on {ds.n} rows -> {args.out} (id {model.model_id})")
    return 0


def cmd_predict(args, argv) -> int:
    model = load_model(args.model)
    if (args.z is None) == (args.covariate_file is None):
        raise UsageError("give exactly one of --z or --covariate-file")
    if args.z is not None:
        sample = predict_distribution(model, parse_assignments(args.z), args.n_gen, args.seed)
        write_sample_csv(sample, args.out, {"seed": args.seed})
        n_rows = sample.n_gen
    else:
        Z = load_covariates(args.covariate_file, model.covariate_names, encodings=model.encodings)
        samples = batch_predict(model, Z, args.n_gen_each, args.seed, shared=not args.per_row)
        write_sample_csv(samples, args.out, {"seed": args.seed, "shared": not args.per_row})
        n_rows = sum(s.n_gen for s in samples)
    write_manifest(args.out, argv, args, {"model_id": model.model_id})
    print(f"wrote {n_rows} draws to {args.out}")
    return 0


def cmd_prob(args, argv) -> int:
    model = load_model(args.model)
    event = parse_event(args.event, model.response_names)
    sample = predict_distribution(model, parse_assignments(args.z), args.n_gen, args.seed)
    p = joint_probability(sample, event)
    se = float(np.sqrt(p * (1 - p) / args.n_gen))
    print(f"probability {p!r} se {se!r}")
    if args.out:
        Path(args.out).write_text(json.dumps({"event": args.event, "probability": p, "se": se,
                                              "n_gen": args.n_gen, "seed": args.seed,
                                              "model_id": model.model_id}, sort_keys=True) + "\n")
        write_manifest(args.out, argv, args)
    return 0


def cmd_evaluate(args, argv) -> int:
    labels = args.label or []
    if labels and len(labels) != len(args.model):
        raise UsageError("give one --label per --model")
    reports = []
    streams = np.random.default_rng(args.seed).spawn(len(args.model))
    for i, (path, g) in enumerate(zip(args.model, streams)):
        model = load_model(path)
        test = load_csv(args.test, list(model.response_names), list(model.covariate_names),
                        encodings=model.encodings)
        if test.n < 2:
            raise DataError("the test file needs at least two usable rows")
        reports.append(evaluate(model, test, args.n_rep, args.n_gen, g,
                                label=labels[i] if labels else None))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report_csv(reports, out / "evaluation.csv")
    write_plot_csv(reports, out / "evaluation_plot.csv")
    write_manifest(out, argv, args)
    for r in reports:
        print(f"{r.label}: acvm {r.acvm:.6g} amse {r.amse:.6g}")
    return 0


def cmd_benchmark(args, argv) -> int:
    archs = tuple(args.arch) if args.arch else defaults.BENCH_ARCHITECTURES
    try:
        cfg = BenchmarkConfig(family=args.family, dim=args.dim, tau=args.tau, n_trn=args.n_trn,
                              architectures=archs, epochs=args.epochs, batch_size=args.batch_size,
                              reps=args.reps, n_gen=args.n_gen, seed=args.seed, n_mc=args.n_mc,
                              references=args.references)
    except (UnsupportedError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    rows = benchmark_copula_learning(cfg)
    write_benchmark_csv(rows, args.out)
    write_manifest(args.out, argv, args)
    for a in dict.fromkeys(r["architecture"] for r in rows):
        vals = [r["cvm"] for r in rows if r["architecture"] == a]
        print(f"{a}: median cvm {np.median(vals):.6g}")
    return 0


def cmd_demo(args, argv) -> int:
    try:
        path, source = resolve_data(args.data, offline=args.offline)
    except DataUnavailable as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if source == "fixture":
        print("note: using the bundled synthetic height/weight table", file=sys.stderr)
    ds = load_height_weight(path)
    fit = FitConfig(architecture=args.arch, epochs=args.epochs, seed=args.fit_seed or args.seed,
                    n_trees=args.n_trees, n_jobs=args.threads)
    cfg = DemoConfig(split_seed=args.seed, n_gen=args.n_gen, n_rep=args.n_rep, fit=fit)
    result = run_demo(ds, args.out, cfg)
    write_manifest(args.out, argv, args, {"data_source": source, "data_path": str(path)})
    for q in result["queries"]:
        print(f"{q['query']:<14} P({q['event']}) = {q['probability']:.3f} (se {q['se']:.3f})")
    r = result["report"]
    print(f"acvm {r.acvm:.6g} amse {r.amse:.6g}")
    return 0


@contextmanager
def _working_dir(path):
    old = os.getcwd()
    os.chdir(path)
    try:
        yield
    finally:
        os.chdir(old)


def cmd_rerun(args, argv) -> int:
    record = json.loads(Path(args.manifest).read_text())
    inner = record["argv"]
    if inner and inner[0] == "rerun":
        raise UsageError("refusing to rerun a rerun manifest")
    with _working_dir(record.get("cwd", os.getcwd())):
        return main(inner)


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jointpred", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        if seed:
            sp.add_argument("--seed", type=int, default=defaults.SEED)
        sp.add_argument("--threads", type=positive_int, default=1,
                        help="worker threads; results do not depend on it")

    deps = sorted(DEPENDENCE_ALIASES)

    f = sub.add_parser("fit", help="fit a joint model")
    f.add_argument("--data", required=True)
    f.add_argument("--responses", type=name_list, required=True)
    f.add_argument("--covariates", type=name_list, required=True)
    f.add_argument("--marginal", choices=MARGINAL_KINDS, default="forest")
    f.add_argument("--dependence", choices=deps, default="gmmn")
    f.add_argument("--arch", type=architecture, default=defaults.ARCHITECTURE,
                   help="hidden layers as LxH[,LxH], e.g. 1x300 or 1x600,1x300")
    f.add_argument("--epochs", type=positive_int, default=defaults.EPOCHS)
    f.add_argument("--batch-size", type=positive_int, default=defaults.BATCH_SIZE)
    f.add_argument("--learning-rate", type=float, default=defaults.LEARNING_RATE)
    f.add_argument("--dropout", type=float, default=defaults.DROPOUT)
    f.add_argument("--n-trees", type=positive_int, default=defaults.N_TREES)
    f.add_argument("--min-node-size", type=positive_int, default=defaults.MIN_NODE_SIZE)
    f.add_argument("--mtry", type=positive_int, default=defaults.MTRY)
    f.add_argument("--out", required=True)
    common(f)
    f.set_defaults(func=cmd_fit)

    pr = sub.add_parser("predict", help="sample predictive distributions")
    pr.add_argument("--model", required=True)
    pr.add_argument("--z", help="covariates as name=value,...")
    pr.add_argument("--covariate-file")
    pr.add_argument("--n-gen", type=positive_int, default=defaults.N_GEN)
    pr.add_argument("--n-gen-each", type=positive_int, default=defaults.N_GEN_EACH)
    pr.add_argument("--per-row", action="store_true",
                    help="independent draws per covariate row instead of one shared batch")
    pr.add_argument("--out", required=True)
    common(pr)
    pr.set_defaults(func=cmd_predict)

    pb = sub.add_parser("prob", help="joint probability of an event")
    pb.add_argument("--model", required=True)
    pb.add_argument("--z", required=True)
    pb.add_argument("--event", required=True, help='e.g. "d1>116,d2<21" or "height>116,weight<21"')
    pb.add_argument("--n-gen", type=positive_int, default=defaults.N_GEN)
    pb.add_argument("--out")
    common(pb)
    pb.set_defaults(func=cmd_prob)

    ev = sub.add_parser("evaluate", help="ACvM and AMSE on a test file")
    ev.add_argument("--model", action="append", required=True)
    ev.add_argument("--label", action="append")
    ev.add_argument("--test", required=True)
    ev.add_argument("--n-rep", type=positive_int, default=defaults.N_REP)
    ev.add_argument("--n-gen", type=positive_int, default=defaults.N_GEN)
    ev.add_argument("--out", required=True, help="output directory")
    common(ev)
    ev.set_defaults(func=cmd_evaluate)

    bm = sub.add_parser("benchmark", help="copula-learning benchmark")
    bm.add_argument("--family", required=True)
    bm.add_argument("--dim", type=int, default=2)
    bm.add_argument("--tau", type=float, default=defaults.BENCH_TAU)
    bm.add_argument("--n-trn", type=positive_int, default=defaults.BENCH_N_TRN)
    bm.add_argument("--epochs", type=positive_int, default=defaults.BENCH_EPOCHS)
    bm.add_argument("--batch-size", type=positive_int, default=defaults.BENCH_BATCH_SIZE)
    bm.add_argument("--reps", type=positive_int, default=defaults.BENCH_REPS)
    bm.add_argument("--n-gen", type=positive_int, default=defaults.N_GEN)
    bm.add_argument("--n-mc", type=positive_int, default=100_000,
                    help="Monte Carlo size for copula CDFs without a closed form")
    bm.add_argument("--arch", type=architecture, action="append")
    bm.add_argument("--references", action="store_true",
                    help="also score untrained networks and independent uniforms")
    bm.add_argument("--out", required=True)
    common(bm)
    bm.set_defaults(func=cmd_benchmark)

    dm = sub.add_parser("demo", help="height/weight walk-through")
    dm.add_argument("dataset", choices=["height-weight"])
    dm.add_argument("--offline", action="store_true", help="use the bundled synthetic table")
    dm.add_argument("--data", help="path to Howell1.csv")
    dm.add_argument("--out", default="demo-output")
    dm.add_argument("--arch", type=architecture, default=defaults.ARCHITECTURE)
    dm.add_argument("--epochs", type=positive_int, default=defaults.EPOCHS)
    dm.add_argument("--n-trees", type=positive_int, default=defaults.N_TREES)
    dm.add_argument("--n-gen", type=positive_int, default=defaults.N_GEN)
    dm.add_argument("--n-rep", type=positive_int, default=defaults.N_REP)
    dm.add_argument("--fit-seed", type=int, help="model seed (defaults to --seed)")
    common(dm)
    dm.set_defaults(func=cmd_demo)

    rr = sub.add_parser("rerun", help="replay a manifest")
    rr.add_argument("--manifest", required=True)
    rr.set_defaults(func=cmd_rerun)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "benchmark" and args.family not in BENCH_FAMILIES:
        print(f"error: unsupported benchmark family {args.family!r}; choose from {BENCH_FAMILIES}",
              file=sys.stderr)
        return 2
    try:
        return args.func(args, argv)
    except (UsageError, MissingColumnError) as exc:
        msg = f"missing column {exc.column!r}" if isinstance(exc, MissingColumnError) else str(exc)
        print(f"error: {msg}", file=sys.stderr)
        return 2
    except (DataError, SchemaError, UnsupportedError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
