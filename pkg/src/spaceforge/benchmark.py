"""SGD-on-ridge-regression task family and the leave-one-task-out transfer harness.

Each task is a random ridge problem. A configuration sets the learning rate,
momentum and regularization of an SGD-with-momentum run; one unit of resource
is three SGD updates, and the objective is the training RMSE at the last
iterate.
"""
from __future__ import annotations

import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .core import (EvaluationRecord, NumericDim, ParameterSchema, TaskHistory, Trace,
                   extract_incumbents)
from .learn import METHODS, learn_space
from .optimizers import hyperband, hyperband_schedule, random_search
from .sampling import RngStream, make_sampler

__all__ = [
    "N_OBS",
    "N_FEATURES",
    "UPDATES_PER_RESOURCE",
    "DIVERGED",
    "RidgeTask",
    "SgdHyperparams",
    "gen_ridge_task",
    "sgd_schema",
    "sgd_objective",
    "sgd_objective_batch",
    "RidgeObjective",
    "TransferExperimentConfig",
    "source_histories",
    "leave_one_task_out",
    "NormalizedCurves",
    "normalize_curves",
]

N_OBS = 81
N_FEATURES = 81
UPDATES_PER_RESOURCE = 3
DIVERGED = sys.float_info.max
HP_NAMES = ("learning_rate", "momentum", "regularization")


@dataclass(frozen=True, eq=False)
class RidgeTask:
    seed: int
    theta: np.ndarray
    tau: np.ndarray

    @property
    def n(self) -> int:
        return self.theta.shape[0]

    @property
    def p(self) -> int:
        return self.theta.shape[1]


@dataclass(frozen=True)
class SgdHyperparams:
    learning_rate: float
    momentum: float
    regularization: float

    def __post_init__(self):
        for name, (lo, hi) in zip(HP_NAMES, _RANGES):
            v = getattr(self, name)
            if not lo <= v <= hi:
                raise ValueError(f"{name}={v} outside [{lo}, {hi}]")

    @classmethod
    def from_config(cls, config: Mapping[str, Any]) -> "SgdHyperparams":
        return cls(*(float(config[k]) for k in HP_NAMES))


_RANGES = ((0.001, 1.0), (0.3, 0.999), (0.001, 10.0))


def sgd_schema() -> ParameterSchema:
    return ParameterSchema(tuple(NumericDim(n, lo, hi) for n, (lo, hi) in zip(HP_NAMES, _RANGES)))


def gen_ridge_task(seed: int, n: int = N_OBS, p: int = N_FEATURES) -> RidgeTask:
    """Standard-normal design, ``tau = theta @ w + 0.1 * noise``."""
    rng = RngStream(seed).derive("ridge-task")
    theta = rng.normal((n, p))
    w = rng.normal(p)
    tau = theta @ w + 0.1 * rng.normal(n)
    return RidgeTask(int(seed), theta, tau)


def _example_indices(task: RidgeTask, resource: int, eval_seed: int) -> np.ndarray:
    return RngStream(eval_seed).derive("sgd-examples").integers(0, task.n, size=UPDATES_PER_RESOURCE * resource)


def sgd_objective_batch(task: RidgeTask, lr, momentum, reg, resource: int, eval_seed: int) -> np.ndarray:
    """RMSE after ``3 * resource`` momentum-SGD updates for each row of hyperparameters.

    All rows share the same example sequence, so the result for one row does
    not depend on which other rows are in the batch.
    """
    if resource < 0:
        raise ValueError("resource must be non-negative")
    lr = np.atleast_1d(np.asarray(lr, dtype=float))[:, None]
    mom = np.atleast_1d(np.asarray(momentum, dtype=float))[:, None]
    reg = np.atleast_1d(np.asarray(reg, dtype=float))[:, None]
    m = max(len(lr), len(mom), len(reg))
    U = np.zeros((m, task.p))
    V = np.zeros((m, task.p))
    # Row-wise reductions instead of matrix products: BLAS picks kernels by
    # batch size, which would make a row's result depend on its batch.
    with np.errstate(over="ignore", invalid="ignore"):
        for i in _example_indices(task, resource, eval_seed):
            th = task.theta[i]
            resid = (U * th).sum(axis=1) - task.tau[i]
            G = resid[:, None] * th[None, :] + 2.0 * reg * U
            V = mom * V + lr * G
            U = U - V
        R = (U[:, None, :] * task.theta[None, :, :]).sum(axis=2) - task.tau[None, :]
        rmse = np.sqrt(np.mean(R * R, axis=1))
    return np.where(np.isfinite(rmse), rmse, DIVERGED)


def sgd_objective(task: RidgeTask, hp: SgdHyperparams, resource: int, eval_seed: int) -> float:
    return float(sgd_objective_batch(task, hp.learning_rate, hp.momentum, hp.regularization,
                                     resource, eval_seed)[0])


class RidgeObjective:
    """Resource-aware objective on one task; the eval seed fixes the example stream."""

    def __init__(self, task: RidgeTask, eval_seed: int | None = None, max_resource: int = 81):
        self.task = task
        self.eval_seed = task.seed if eval_seed is None else int(eval_seed)
        self.max_resource = int(max_resource)

    def __call__(self, config: Mapping[str, Any], resource: int) -> float:
        return self.evaluate_batch([config], resource)[0]

    def evaluate_batch(self, configs: Sequence[Mapping[str, Any]], resource: int) -> list[float]:
        if not configs:
            return []
        H = np.array([[float(c[k]) for k in HP_NAMES] for c in configs])
        out = sgd_objective_batch(self.task, H[:, 0], H[:, 1], H[:, 2], resource, self.eval_seed)
        return [float(v) for v in out]


@dataclass(frozen=True)
class TransferExperimentConfig:
    n_tasks: int = 30
    replications: int = 10
    budget: int = 50
    methods: tuple[str, ...] = ("original",)
    algo: str = "random"
    n_t: int = 64
    seed: int = 0
    R: int = 81
    eta: int = 3
    nu: float | None = None
    workers: int = 1

    def __post_init__(self):
        if self.n_tasks < 2:
            raise ValueError("need at least 2 tasks for leave-one-task-out")
        if self.replications < 1:
            raise ValueError("need at least 1 replication")
        if self.budget < 1:
            raise ValueError("budget must be at least 1")
        if self.n_t < 1:
            raise ValueError("n_t must be at least 1")
        if self.algo not in ("random", "hyperband"):
            raise ValueError(f"unknown algo {self.algo!r}")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}; expected one of {METHODS}")


@dataclass
class FoldResult:
    method: str
    algo: str
    fold: int
    rep: int
    curve: np.ndarray
    trace: Trace
    warnings: tuple[str, ...] = ()


def source_histories(tasks: Sequence[RidgeTask], n_t: int, rng: RngStream, R: int = 81) -> list[TaskHistory]:
    """``n_t`` uniformly random full-resource evaluations on each task."""
    schema = sgd_schema()
    sampler = make_sampler(None, schema)
    out = []
    for task in tasks:
        trng = rng.derive("history", task.seed)
        configs = [sampler.sample(trng) for _ in range(n_t)]
        ys = RidgeObjective(task, max_resource=R).evaluate_batch(configs, R)
        out.append(TaskHistory(str(task.seed), [EvaluationRecord(str(task.seed), c, y)
                                                for c, y in zip(configs, ys)]))
    return out


def _hb_iterations(budget: int, R: int, eta: int) -> int:
    per_iter = sum(b.total_resource for b in hyperband_schedule(R, eta))
    return max(1, math.ceil(budget * R / per_iter))


def _run_rep(config: TransferExperimentConfig, rep: int) -> list[FoldResult]:
    root = RngStream(config.seed).derive("rep", rep)
    tasks = [gen_ridge_task(t) for t in range(config.n_tasks)]
    schema = sgd_schema()
    histories = source_histories(tasks, config.n_t, root, config.R)
    incumbents = extract_incumbents(histories, schema)
    methods = list(dict.fromkeys(config.methods))
    results = []
    for fold in range(config.n_tasks):
        source = [inc for t, inc in enumerate(incumbents) if t != fold]
        objective = RidgeObjective(tasks[fold], max_resource=config.R)
        for method in methods:
            learned = learn_space(source, method, schema, nu=config.nu)
            sampler = make_sampler(learned.space, schema)
            # Every method sees the same search stream for a fold.
            rng = root.derive("search", fold)
            if config.algo == "random":
                trace = random_search(objective, sampler, config.budget, rng, config.R)
                curve = trace.best_so_far
            else:
                trace = hyperband(objective, sampler, config.R, config.eta, rng,
                                  _hb_iterations(config.budget, config.R, config.eta))
                curve = trace.best_at_resource(np.arange(1, config.budget + 1) * config.R)
            results.append(FoldResult(method, config.algo, fold, rep, curve, trace, learned.warnings))
    return results


def _workers(requested: int) -> int:
    env = os.environ.get("SPACEFORGE_WORKERS")
    n = int(env) if env else requested
    return max(1, n)


def leave_one_task_out(config: TransferExperimentConfig) -> dict[tuple[str, int, int], FoldResult]:
    """All held-out runs keyed by ``(method, fold, rep)``.

    Replications run in parallel when more than one worker is configured;
    results do not depend on the worker count.
    """
    workers = min(_workers(config.workers), config.replications)
    reps = range(config.replications)
    if workers == 1:
        chunks = [_run_rep(config, r) for r in reps]
    else:
        with ProcessPoolExecutor(workers) as pool:
            chunks = list(pool.map(_run_rep, [config] * len(reps), reps))
    return {(r.method, r.fold, r.rep): r for chunk in chunks for r in chunk}


@dataclass(frozen=True)
class NormalizedCurves:
    curves: dict[Any, np.ndarray]
    mean: np.ndarray
    stderr: np.ndarray
    median: np.ndarray = field(default=None)


def normalize_curves(curves: Mapping[Any, np.ndarray], baselines: Mapping[Any, np.ndarray]) -> NormalizedCurves:
    """Divide each best-so-far curve by its matching random-search run's final best."""
    if set(curves) != set(baselines):
        raise ValueError("method and baseline runs must share the same keys")
    if not curves:
        raise ValueError("no curves to normalize")
    out = {}
    for key, curve in curves.items():
        final = float(np.asarray(baselines[key], dtype=float)[-1])
        if final == 0.0:
            raise ValueError(f"random-search baseline reached 0 for {key}; normalization undefined")
        out[key] = np.asarray(curve, dtype=float) / final
    M = np.vstack(list(out.values()))
    n = M.shape[0]
    # Diverged runs normalize to huge values; their overflow to inf is expected.
    with np.errstate(over="ignore", invalid="ignore"):
        mean = M.mean(axis=0)
        stderr = M.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(M.shape[1])
    return NormalizedCurves(out, mean, stderr, np.median(M, axis=0))
