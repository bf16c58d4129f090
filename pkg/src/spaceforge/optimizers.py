"""Random search and Hyperband over any sampler.

The optimizers only ever ask the sampler for new configurations, so the same
control flow runs on the original space, a learned box, or a learned
ellipsoid.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Mapping, Protocol, Sequence

import numpy as np

from .core import Trace
from .sampling import RngStream

__all__ = [
    "ResourceObjective",
    "EvaluationError",
    "Rung",
    "Bracket",
    "hyperband_schedule",
    "random_search",
    "successive_halving",
    "hyperband",
]


class ResourceObjective(Protocol):
    """``objective(config, resource) -> float``; lower is better.

    Implementations may also provide ``evaluate_batch(configs, resource)``,
    which the optimizers use for all evaluations of one rung.
    """

    max_resource: int

    def __call__(self, config: Mapping[str, Any], resource: int) -> float: ...


class EvaluationError(RuntimeError):
    def __init__(self, config: Mapping[str, Any], resource: int, cause: BaseException):
        super().__init__(f"objective failed at resource {resource} for {dict(config)!r}: {cause}")
        self.config = config
        self.resource = resource


@dataclass(frozen=True)
class Rung:
    n: int
    resource: int


@dataclass(frozen=True)
class Bracket:
    s: int
    rungs: tuple[Rung, ...]

    @property
    def total_resource(self) -> int:
        return sum(r.n * r.resource for r in self.rungs)


def _int_log(R: int, eta: int) -> int:
    s = 0
    while eta ** (s + 1) <= R:
        s += 1
    return s


def _rungs(n: int, r: int, eta: int, R: int) -> list[Rung]:
    rungs = []
    k = 0
    while True:
        n_k = n // eta ** k
        if n_k < 1:
            break
        res = min(r * eta ** k, R)
        rungs.append(Rung(n_k, res))
        if res >= R or n // eta ** (k + 1) < 1:
            break
        k += 1
    # The final survivor always gets the full resource.
    last = rungs[-1]
    rungs[-1] = Rung(last.n, R)
    return rungs


def hyperband_schedule(R: int, eta: int = 3) -> list[Bracket]:
    """Brackets ``s = s_max .. 0`` with their rung sizes and resources."""
    if eta < 2:
        raise ValueError("eta must be an integer >= 2")
    if R < eta:
        raise ValueError("R must be at least eta")
    s_max = _int_log(R, eta)
    out = []
    for s in range(s_max, -1, -1):
        n = -(-(s_max + 1) * eta ** s // (s + 1))
        r = max(1, R // eta ** s)
        out.append(Bracket(s, tuple(_rungs(n, r, eta, R))))
    return out


def _evaluate(objective, configs: Sequence[Mapping[str, Any]], resource: int) -> list[float]:
    batch = getattr(objective, "evaluate_batch", None)
    if batch is not None:
        try:
            return [float(v) for v in batch(configs, resource)]
        except Exception:
            pass  # fall through to locate the failing configuration
    out = []
    for c in configs:
        try:
            out.append(float(objective(c, resource)))
        except Exception as exc:
            raise EvaluationError(c, resource, exc) from exc
    return out


def _full_resource(objective) -> int:
    return int(getattr(objective, "max_resource", 1))


def random_search(objective, sampler, budget: int, rng: RngStream, resource: int | None = None) -> Trace:
    """Evaluate ``budget`` sampled configurations at full resource."""
    if budget < 1:
        raise ValueError("budget must be at least 1")
    resource = _full_resource(objective) if resource is None else resource
    configs = [sampler.sample(rng) for _ in range(budget)]
    trace = Trace(seed=rng.seed)
    for c, y in zip(configs, _evaluate(objective, configs, resource)):
        trace.append(c, y, resource)
    return trace


def successive_halving(objective, sampler, n: int, r: int, eta: int, rng: RngStream,
                       R: int | None = None, trace: Trace | None = None) -> Trace:
    """One successive-halving bracket, appended to ``trace`` if given.

    Rung ``k`` evaluates ``floor(n / eta**k)`` configurations at resource
    ``r * eta**k``; the last rung always runs at ``R``. Survivors are the
    lowest objectives of the previous rung, ties resolved by sampling order.
    """
    if n < 1 or r < 1:
        raise ValueError("n and r must be at least 1")
    if eta < 2:
        raise ValueError("eta must be an integer >= 2")
    R = _full_resource(objective) if R is None else R
    trace = Trace(seed=rng.seed) if trace is None else trace
    configs = [sampler.sample(rng) for _ in range(n)]
    for k, rung in enumerate(_rungs(n, r, eta, R)):
        configs = configs[: rung.n]
        losses = _evaluate(objective, configs, rung.resource)
        for c, y in zip(configs, losses):
            trace.append(c, y, rung.resource)
        order = np.argsort(np.asarray(losses), kind="stable")
        configs = [configs[i] for i in order]
    return trace


def hyperband(objective, sampler, R: int, eta: int, rng: RngStream, iterations: int = 1) -> Trace:
    """Run all Hyperband brackets ``iterations`` times, most exploratory first."""
    if iterations < 1:
        raise ValueError("iterations must be at least 1")
    schedule = hyperband_schedule(R, eta)
    trace = Trace(seed=rng.seed)
    for _ in range(iterations):
        for bracket in schedule:
            first = bracket.rungs[0]
            successive_halving(objective, sampler, first.n, first.resource, eta, rng, R, trace)
    return trace
