"""Domain types shared by the learners, samplers and optimizers.

Numeric vectors always follow the schema's declaration order of numeric
dimensions; categorical dimensions are carried along untouched.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

__all__ = [
    "SchemaError",
    "SolverError",
    "NumericDim",
    "CategoricalDim",
    "ParameterSchema",
    "EvaluationRecord",
    "TaskHistory",
    "Incumbent",
    "BoxSpace",
    "EllipsoidSpace",
    "SlackReport",
    "CalibrationConfig",
    "TraceEntry",
    "Trace",
    "extract_incumbents",
    "project_numeric",
    "group_by_task",
    "as_points",
    "solve_clarabel",
    "sparsify_slacks",
]

ACTIVITY_TOL = 1e-6


class SchemaError(ValueError):
    """Raised when a schema or record is malformed."""


class SolverError(RuntimeError):
    """A numerical routine failed to converge; ``best`` holds its last iterate."""

    def __init__(self, message: str, best: Any = None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class NumericDim:
    name: str
    lower: float
    upper: float
    is_integer: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise SchemaError(f"dimension {self.name!r}: bounds must be finite")
        if not self.lower < self.upper:
            raise SchemaError(
                f"dimension {self.name!r}: lower ({self.lower}) must be < upper ({self.upper})"
            )


@dataclass(frozen=True)
class CategoricalDim:
    name: str
    values: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        if not self.values:
            raise SchemaError(f"categorical dimension {self.name!r} has an empty domain")


@dataclass(frozen=True)
class ParameterSchema:
    """The original search space: numeric ranges plus categorical domains."""

    dims: tuple[NumericDim, ...] = ()
    cats: tuple[CategoricalDim, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(self.dims))
        object.__setattr__(self, "cats", tuple(self.cats))
        names = [d.name for d in self.dims] + [c.name for c in self.cats]
        seen = set()
        for name in names:
            if name in seen:
                raise SchemaError(f"duplicate dimension name {name!r}")
            seen.add(name)

    @property
    def p(self) -> int:
        return len(self.dims)

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dims]

    @property
    def lower(self) -> np.ndarray:
        return np.array([d.lower for d in self.dims], dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return np.array([d.upper for d in self.dims], dtype=float)

    @property
    def ranges(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, x: np.ndarray, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def validate(self, config: Mapping[str, Any]) -> None:
        """Raise :class:`SchemaError` naming the first offending dimension."""
        for d in self.dims:
            if d.name not in config:
                raise SchemaError(f"missing value for dimension {d.name!r}")
            v = config[d.name]
            if isinstance(v, bool) or not isinstance(v, (int, float, np.integer, np.floating)):
                raise SchemaError(f"dimension {d.name!r}: expected a number, got {v!r}")
            v = float(v)
            if not (d.lower <= v <= d.upper):
                raise SchemaError(
                    f"dimension {d.name!r}: value {v} outside [{d.lower}, {d.upper}]"
                )
            if d.is_integer and v != round(v):
                raise SchemaError(f"dimension {d.name!r}: value {v} is not integral")
        for c in self.cats:
            if c.name not in config:
                raise SchemaError(f"missing value for dimension {c.name!r}")
            if config[c.name] not in c.values:
                raise SchemaError(
                    f"dimension {c.name!r}: value {config[c.name]!r} not in {list(c.values)}"
                )


@dataclass(frozen=True)
class EvaluationRecord:
    task_id: str
    config: Mapping[str, Any]
    objective: float


@dataclass(frozen=True)
class TaskHistory:
    task_id: str
    records: tuple[EvaluationRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        for r in self.records:
            if r.task_id != self.task_id:
                raise SchemaError(
                    f"record for task {r.task_id!r} found in history of task {self.task_id!r}"
                )


@dataclass(frozen=True)
class Incumbent:
    task_id: str
    x_star: np.ndarray
    y_star: float
    cat_star: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class BoxSpace:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise ValueError("lower and upper must have the same length")
        if np.any(lo > hi):
            raise ValueError("box lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def p(self) -> int:
        return self.lower.size

    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def contains(self, x: np.ndarray, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))


@dataclass(frozen=True)
class EllipsoidSpace:
    """The set ``{x : ||A x + b|| <= 1}`` with ``A`` symmetric positive definite."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if A.ndim != 2 or A.shape != (b.size, b.size):
            raise ValueError(f"A must be {b.size}x{b.size}, got shape {A.shape}")
        if not np.allclose(A, A.T, rtol=0.0, atol=1e-9 * max(1.0, np.abs(A).max())):
            raise ValueError("A must be symmetric")
        A = 0.5 * (A + A.T)
        if np.linalg.eigvalsh(A).min() <= 0.0:
            raise ValueError("A must be positive definite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def p(self) -> int:
        return self.b.size

    @property
    def center(self) -> np.ndarray:
        return -np.linalg.solve(self.A, self.b)


@dataclass(frozen=True)
class SlackReport:
    """Per-task slack values of a soft fit.

    For boxes ``lower``/``upper`` hold the two one-sided slacks; for ellipsoids
    only ``values`` is populated. ``values`` is always the per-task total.
    """

    task_ids: tuple[str, ...]
    values: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    lam: float = 0.0
    tol: float = ACTIVITY_TOL

    @property
    def active(self) -> np.ndarray:
        return self.values > self.tol

    @property
    def n_active(self) -> int:
        return int(self.active.sum())

    @property
    def total(self) -> float:
        return float(self.values.sum())

    @classmethod
    def zeros(cls, task_ids: Sequence[str], box: bool = False) -> "SlackReport":
        n = len(task_ids)
        z = np.zeros(n)
        if box:
            return cls(tuple(task_ids), z, np.zeros(n), np.zeros(n))
        return cls(tuple(task_ids), z)

    def to_dict(self) -> dict:
        out = {
            "task_ids": list(self.task_ids),
            "values": self.values.tolist(),
            "active": self.active.tolist(),
            "lambda": self.lam,
            "tol": self.tol,
        }
        if self.lower is not None:
            out["lower"] = self.lower.tolist()
            out["upper"] = self.upper.tolist()
        return out

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SlackReport":
        lo = d.get("lower")
        hi = d.get("upper")
        return cls(
            tuple(d["task_ids"]),
            np.asarray(d["values"], dtype=float),
            None if lo is None else np.asarray(lo, dtype=float),
            None if hi is None else np.asarray(hi, dtype=float),
            float(d.get("lambda", 0.0)),
            float(d.get("tol", ACTIVITY_TOL)),
        )


DEFAULT_GRID = (1e-3, 1e-2, 1e-1, 1.0, 10.0)


@dataclass(frozen=True)
class CalibrationConfig:
    nu: float = 0.1
    grid: tuple[float, ...] = DEFAULT_GRID
    tol: float = ACTIVITY_TOL

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(float(s) for s in self.grid))
        if not 0.0 <= self.nu < 1.0:
            raise ValueError(f"nu must lie in [0, 1), got {self.nu}")
        if not self.grid:
            raise ValueError("calibration grid is empty")
        if any(s <= 0 for s in self.grid):
            raise ValueError("grid multipliers must be positive")
        if any(b <= a for a, b in zip(self.grid, self.grid[1:])):
            raise ValueError("grid must be strictly ascending")


@dataclass(frozen=True)
class TraceEntry:
    config: Mapping[str, Any]
    objective: float
    resource: int
    best_so_far: float


@dataclass
class Trace:
    seed: int | None = None
    entries: list[TraceEntry] = field(default_factory=list)
    wall_clock: float | None = None

    def append(self, config: Mapping[str, Any], objective: float, resource: int) -> TraceEntry:
        best = objective if not self.entries else min(self.entries[-1].best_so_far, objective)
        entry = TraceEntry(config, float(objective), int(resource), float(best))
        self.entries.append(entry)
        return entry

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def objectives(self) -> np.ndarray:
        return np.array([e.objective for e in self.entries])

    @property
    def best_so_far(self) -> np.ndarray:
        return np.array([e.best_so_far for e in self.entries])

    @property
    def resources(self) -> np.ndarray:
        return np.array([e.resource for e in self.entries], dtype=int)

    def best_at_resource(self, budgets: Sequence[float]) -> np.ndarray:
        """Best objective seen once cumulative resource reaches each budget.

        Entries are counted while their cumulative resource is ``<= budget``;
        budgets reached before the first evaluation completes give ``inf``.
        """
        cum = np.cumsum(self.resources)
        best = self.best_so_far
        idx = np.searchsorted(cum, np.asarray(budgets, dtype=float), side="right") - 1
        out = np.full(idx.shape, np.inf)
        ok = idx >= 0
        out[ok] = best[idx[ok]]
        return out


def project_numeric(record: EvaluationRecord | Mapping[str, Any], schema: ParameterSchema) -> np.ndarray:
    """Numeric part of a configuration as a float vector in schema order."""
    config = record.config if isinstance(record, EvaluationRecord) else record
    out = np.empty(schema.p)
    for j, d in enumerate(schema.dims):
        if d.name not in config:
            raise SchemaError(f"missing value for dimension {d.name!r}")
        out[j] = float(config[d.name])
    return out


def group_by_task(records: Sequence[EvaluationRecord]) -> list[TaskHistory]:
    """Split records into per-task histories, keeping first-appearance order."""
    grouped: dict[str, list[EvaluationRecord]] = {}
    for r in records:
        grouped.setdefault(r.task_id, []).append(r)
    return [TaskHistory(t, rs) for t, rs in grouped.items()]


def extract_incumbents(histories: Sequence[TaskHistory], schema: ParameterSchema) -> list[Incumbent]:
    """Best record of every task; ties go to the earliest record."""
    out = []
    for h in histories:
        if not h.records:
            raise SchemaError(f"task {h.task_id!r} has no evaluations")
        best = None
        for r in h.records:
            schema.validate(r.config)
            if math.isnan(r.objective):
                raise SchemaError(f"task {h.task_id!r}: objective is NaN")
            if best is None or r.objective < best.objective:
                best = r
        cats = {c.name: best.config[c.name] for c in schema.cats}
        out.append(Incumbent(h.task_id, project_numeric(best, schema), float(best.objective), cats))
    return out


def as_points(incumbents) -> tuple[np.ndarray, tuple[str, ...]]:
    """Stack incumbents (or raw vectors) into a ``(T, p)`` array plus task ids."""
    items = list(incumbents)
    if items and isinstance(items[0], Incumbent):
        X = np.array([np.asarray(i.x_star, dtype=float) for i in items], dtype=float)
        ids = tuple(i.task_id for i in items)
    else:
        X = np.array(items, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1) if X.size else X.reshape(0, 0)
        ids = tuple(str(t) for t in range(len(X)))
    if X.ndim != 2:
        raise ValueError("points must form a (T, p) array")
    return X, ids


def _clarabel(problem) -> None:
    import cvxpy as cp

    # Inaccurate solutions are screened by the callers, so cvxpy's warning is noise.
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="Solution may be inaccurate")
        problem.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)


def solve_clarabel(problem, what: str, fallback=None) -> None:
    """Solve a cvxpy problem tightly with Clarabel; raise :class:`SolverError` on failure."""
    import cvxpy as cp

    try:
        _clarabel(problem)
    except cp.error.SolverError as exc:
        raise SolverError(f"{what} failed: {exc}", best=fallback) from exc
    if problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        raise SolverError(f"{what} ended with status {problem.status}", best=fallback)


def sparsify_slacks(problem, slack, weights, bound, initial: np.ndarray, rounds: int = 2) -> bool:
    """Move to the sparsest-slack point of an optimal face.

    ``problem`` minimises ``weights @ slack`` over the free part of a solution
    (the volume-defining part held fixed) subject to the original constraints
    and ``sum(slack) <= bound``; ``initial`` are the slacks of the solution
    being refined. Each round reweights by ``1 / (slack + 1e-5)``. Returns
    False if no round solves, in which case the caller keeps its solution.
    """
    import cvxpy as cp

    initial = np.maximum(np.asarray(initial, dtype=float), 0.0)
    total = float(initial.sum())
    for tol in (1e-9, 1e-8):
        bound.value = total + tol * (1.0 + total)
        xi = initial
        solved = False
        for _ in range(rounds):
            weights.value = 1.0 / (xi + 1e-5)
            try:
                _clarabel(problem)
            except cp.error.SolverError:
                break
            if problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or slack.value is None:
                break
            if np.maximum(slack.value, 0.0).sum() > total + 10 * tol * (1.0 + total):
                break
            solved = True
            xi = np.maximum(slack.value, 0.0)
        if solved:
            return True
    return False
