"""Command-line interface: ``spaceforge <subcommand> ...``.

Exit codes: 0 on success, 2 for bad input, 3 when a numerical routine fails.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import __version__
from .benchmark import (HP_NAMES, RidgeObjective, TransferExperimentConfig, gen_ridge_task,
                        leave_one_task_out, normalize_curves, sgd_schema, source_histories)
from .core import DEFAULT_GRID, ParameterSchema, SchemaError, SolverError, extract_incumbents, group_by_task
from .formats import (InputError, SpaceFile, dump_history, dump_schema, file_digest, load_history,
                      load_schema, load_space)
from .learn import METHODS, learn_space
from .optimizers import EvaluationError, hyperband, random_search
from .sampling import RngStream, SamplingError, make_sampler

__all__ = ["main", "build_parser"]

DEFAULT_SEED = 20190101
EXIT_INPUT = 2
EXIT_NUMERIC = 3


class CliInputError(Exception):
    pass


def _grid(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must be comma-separated numbers, got {text!r}") from None
    if not vals or any(not v > 0 for v in vals):
        raise argparse.ArgumentTypeError("grid multipliers must be positive")
    return vals


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _nonneg(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be a non-negative integer")
    return v


def _fmt(v: float) -> str:
    return repr(float(v))


def _write_text(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _workers(requested: int) -> int:
    env = os.environ.get("SPACEFORGE_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise CliInputError(f"SPACEFORGE_WORKERS must be an integer, got {env!r}") from None
    return requested


def _space_for(schema: ParameterSchema, space_path: str | None):
    if space_path is None:
        return None
    sf = load_space(space_path)
    if sf.schema.names != schema.names:
        raise CliInputError(f"{space_path}: dimension names {sf.schema.names} do not match schema {schema.names}")
    return sf.space


# --- learn ------------------------------------------------------------------

def cmd_learn(args) -> int:
    schema = load_schema(args.schema)
    records = load_history(args.history)
    try:
        incumbents = extract_incumbents(group_by_task(records), schema)
    except SchemaError as exc:
        raise CliInputError(f"{args.history}: {exc}") from None
    method = args.geometry + ("-slack" if args.slack else "")
    learned = learn_space(incumbents, method, schema, nu=args.nu, grid=args.grid, tol=args.tol)
    provenance = {
        "history_sha256": file_digest(args.history),
        "schema_sha256": file_digest(args.schema),
        "tool_version": __version__,
        "created": _timestamp(),
        "method": method,
    }
    cal = None if learned.calibration is None else learned.calibration.to_dict()
    SpaceFile(learned.space, schema, learned.slack, cal, provenance).dump(args.out)
    slack = learned.slack
    print(f"geometry: {args.geometry}")
    print(f"incumbents: {len(incumbents)}")
    print(f"Q: {_fmt(learned.q)}")
    print(f"active slacks: {slack.n_active}/{len(slack.task_ids)}"
          + (f" ({', '.join(t for t, a in zip(slack.task_ids, slack.active) if a)})" if slack.n_active else ""))
    if learned.calibration is not None and learned.calibration.lam is not None:
        print(f"lambda: {_fmt(learned.calibration.lam)} (s={_fmt(learned.calibration.s)})")
    for w in learned.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return 0


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return t.strftime("%Y-%m-%dT%H:%M:%SZ")


# --- sample -----------------------------------------------------------------

def cmd_sample(args) -> int:
    schema = load_schema(args.schema)
    space = _space_for(schema, args.space)
    sampler = make_sampler(space, schema)
    rng = RngStream(args.seed).derive("sample")
    lines = [json.dumps(sampler.sample(rng), allow_nan=False) + "\n" for _ in range(args.n)]
    _write_text(args.out, "".join(lines))
    return 0


# --- optimize ---------------------------------------------------------------

class SphereObjective:
    """Squared distance to the schema's centre in range units, inflated at low resource."""

    def __init__(self, schema: ParameterSchema, max_resource: int):
        self.schema = schema
        self.max_resource = max_resource
        self._center = 0.5 * (schema.lower + schema.upper)
        self._ranges = schema.ranges

    def __call__(self, config: Mapping[str, Any], resource: int) -> float:
        x = np.array([float(config[n]) for n in self.schema.names])
        z = (x - self._center) / self._ranges
        return float(z @ z) * (1.0 + 1.0 / max(resource, 1))


def _objective(text: str, schema: ParameterSchema, R: int):
    if text == "sphere":
        if schema.p == 0:
            raise CliInputError("sphere objective needs at least one numeric dimension")
        return SphereObjective(schema, R)
    if text.startswith("ridge:"):
        try:
            seed = int(text.split(":", 1)[1], 0)
        except ValueError:
            raise CliInputError(f"bad objective {text!r}; expected ridge:<seed>") from None
        if schema.names != list(HP_NAMES):
            raise CliInputError(f"ridge objective needs schema dimensions {list(HP_NAMES)}, got {schema.names}")
        return RidgeObjective(gen_ridge_task(seed), max_resource=R)
    raise CliInputError(f"unknown objective {text!r}; expected 'sphere' or 'ridge:<seed>'")


def cmd_optimize(args) -> int:
    schema = load_schema(args.schema)
    space = _space_for(schema, args.space)
    sampler = make_sampler(space, schema)
    objective = _objective(args.objective, schema, args.R)
    rng = RngStream(args.seed).derive("optimize")
    start = time.perf_counter()
    if args.algo == "random":
        if args.budget is None:
            raise CliInputError("--budget is required for --algo random")
        trace = random_search(objective, sampler, args.budget, rng, args.R)
    else:
        if args.R < args.eta:
            raise CliInputError("--R must be at least --eta")
        trace = hyperband(objective, sampler, args.R, args.eta, rng, args.iterations)
    elapsed = time.perf_counter() - start
    rows = [(i, e.resource, _fmt(e.objective), _fmt(e.best_so_far)) for i, e in enumerate(trace.entries, 1)]
    _write_text(args.out, _csv_text(("iteration", "resource", "objective", "best_so_far"), rows))
    print(f"{len(trace)} evaluations in {elapsed:.2f}s; best {_fmt(trace.entries[-1].best_so_far)}",
          file=sys.stderr)
    return 0


# --- bench ------------------------------------------------------------------

def _curve_rows(label: str, results, config, normalized) -> list:
    rows = []
    for rep in range(config.replications):
        for fold in range(config.n_tasks):
            curve = results[fold, rep]
            norm = normalized[fold, rep]
            for it in range(len(curve)):
                rows.append((label, fold, rep, it + 1, _fmt(curve[it]), _fmt(norm[it])))
    return rows


def cmd_bench(args) -> int:
    workers = _workers(args.workers)
    config = TransferExperimentConfig(n_tasks=args.tasks, replications=args.reps, budget=args.budget,
                                      methods=(args.method,), algo=args.algo, n_t=args.nt,
                                      seed=args.seed, R=args.R, eta=args.eta, nu=args.nu,
                                      workers=workers)
    start = time.perf_counter()
    runs = leave_one_task_out(config)
    if args.method == "original" and args.algo == "random":
        base_runs = runs
    else:
        base_cfg = TransferExperimentConfig(n_tasks=args.tasks, replications=args.reps,
                                            budget=args.budget, methods=("original",), algo="random",
                                            n_t=args.nt, seed=args.seed, workers=workers)
        base_runs = leave_one_task_out(base_cfg)
    keys = [(f, r) for r in range(config.replications) for f in range(config.n_tasks)]
    base = {k: base_runs[("original", *k)].curve for k in keys}
    curves = {k: runs[(args.method, *k)].curve for k in keys}
    norm = normalize_curves(curves, base)
    rows = _curve_rows(f"{args.method}+{args.algo}", curves, config, norm.curves)
    if base_runs is not runs:
        rows += _curve_rows("original+random", base, config, normalize_curves(base, base).curves)
    _write_text(args.out, _csv_text(("method", "fold", "rep", "iteration", "best_so_far", "normalized"), rows))
    warned = sorted({w for r in runs.values() for w in r.warnings})
    for w in warned:
        print(f"warning: {w}", file=sys.stderr)
    print(f"{len(keys)} runs in {time.perf_counter() - start:.1f}s; final median normalized "
          f"{_fmt(norm.median[-1])}", file=sys.stderr)
    return 0


# --- report -----------------------------------------------------------------

def _read_bench(paths: Sequence[str]) -> dict[str, dict[int, list[float]]]:
    data: dict[str, dict[int, list[float]]] = {}
    for path in paths:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except FileNotFoundError:
            raise CliInputError(f"{path}: file not found") from None
        reader = csv.DictReader(io.StringIO(text))
        need = {"method", "fold", "rep", "iteration", "best_so_far", "normalized"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise CliInputError(f"{path}: expected columns {sorted(need)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                it = int(row["iteration"])
                v = float(row["normalized"])
            except (TypeError, ValueError):
                raise CliInputError(f"{path}:{lineno}: bad iteration or normalized value") from None
            data.setdefault(row["method"], {}).setdefault(it, []).append(v)
    return data


def cmd_report(args) -> int:
    data = _read_bench(args.inputs)
    rows = []
    for method in sorted(data):
        for it in sorted(data[method]):
            v = np.array(data[method][it])
            with np.errstate(over="ignore", invalid="ignore"):
                se = v.std(ddof=1) / np.sqrt(v.size) if v.size > 1 else 0.0
                rows.append((method, it, v.size, _fmt(v.mean()), _fmt(se), _fmt(np.median(v))))
    _write_text(args.out, _csv_text(("method", "iteration", "n", "mean", "stderr", "median"), rows))
    if args.data:
        blocks = []
        for method in sorted(data):
            lines = [f"# {method}", "# iteration mean stderr median"]
            lines += [f"{it} {m} {s} {md}" for name, it, _, m, s, md in rows if name == method]
            blocks.append("\n".join(lines))
        Path(args.data).write_text("\n\n\n".join(blocks) + "\n", encoding="utf-8")
    return 0


# --- make-history -----------------------------------------------------------

def cmd_make_history(args) -> int:
    tasks = [gen_ridge_task(t) for t in range(args.tasks)]
    histories = source_histories(tasks, args.nt, RngStream(args.seed).derive("make-history"), args.R)
    dump_history([r for h in histories for r in h.records], args.out)
    if args.schema_out:
        dump_schema(sgd_schema(), args.schema_out)
    return 0


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spaceforge", description="Learn search spaces from past tuning runs.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("learn", help="fit a box or ellipsoid around per-task incumbents")
    q.add_argument("--history", required=True, help="evaluation history (JSON Lines)")
    q.add_argument("--schema", required=True, help="parameter schema (JSON)")
    q.add_argument("--geometry", choices=("box", "ellipsoid"), required=True)
    q.add_argument("--slack", action="store_true", help="allow outliers, calibrated by --nu")
    q.add_argument("--nu", type=float, default=None, help="target outlier fraction")
    q.add_argument("--grid", type=_grid, default=DEFAULT_GRID, help="comma-separated multipliers")
    q.add_argument("--tol", type=float, default=1e-6)
    q.add_argument("--out", required=True, help="space file to write")
    q.set_defaults(func=cmd_learn)

    q = sub.add_parser("sample", help="draw configurations uniformly from a space")
    q.add_argument("--space", help="space file; omit to sample the schema's own box")
    q.add_argument("--schema", required=True)
    q.add_argument("--n", type=_nonneg, required=True)
    q.add_argument("--seed", type=_u64, default=DEFAULT_SEED)
    q.add_argument("--out", help="output file (default stdout)")
    q.set_defaults(func=cmd_sample)

    q = sub.add_parser("optimize", help="run random search or Hyperband on a built-in objective")
    q.add_argument("--algo", choices=("random", "hyperband"), required=True)
    q.add_argument("--space")
    q.add_argument("--schema", required=True)
    q.add_argument("--budget", type=_positive)
    q.add_argument("--R", type=_positive, default=81)
    q.add_argument("--eta", type=_positive, default=3)
    q.add_argument("--iterations", type=_positive, default=1, help="Hyperband passes over all brackets")
    q.add_argument("--seed", type=_u64, default=DEFAULT_SEED)
    q.add_argument("--objective", default="sphere", help="'sphere' or 'ridge:<seed>'")
    q.add_argument("--out")
    q.set_defaults(func=cmd_optimize)

    q = sub.add_parser("bench", help="leave-one-task-out transfer benchmark on ridge tasks")
    q.add_argument("--method", choices=METHODS, required=True)
    q.add_argument("--algo", choices=("random", "hyperband"), default="random")
    q.add_argument("--tasks", type=int, default=30)
    q.add_argument("--reps", type=int, default=10)
    q.add_argument("--budget", type=_positive, default=50)
    q.add_argument("--nt", type=_positive, default=64)
    q.add_argument("--R", type=_positive, default=81)
    q.add_argument("--eta", type=_positive, default=3)
    q.add_argument("--nu", type=float, default=None)
    q.add_argument("--seed", type=_u64, default=DEFAULT_SEED)
    q.add_argument("--workers", type=_positive, default=1)
    q.add_argument("--out")
    q.set_defaults(func=cmd_bench)

    q = sub.add_parser("report", help="aggregate bench CSVs per method and iteration")
    q.add_argument("inputs", nargs="+")
    q.add_argument("--out")
    q.add_argument("--data", help="also write a gnuplot-style data file")
    q.set_defaults(func=cmd_report)

    q = sub.add_parser("make-history", help="write random evaluations of the ridge tasks")
    q.add_argument("--tasks", type=_positive, default=30)
    q.add_argument("--nt", type=_positive, default=64)
    q.add_argument("--R", type=_positive, default=81)
    q.add_argument("--seed", type=_u64, default=DEFAULT_SEED)
    q.add_argument("--out", required=True)
    q.add_argument("--schema-out")
    q.set_defaults(func=cmd_make_history)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, CliInputError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SolverError, SamplingError, EvaluationError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
