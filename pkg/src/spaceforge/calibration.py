"""Choosing the slack penalty from an outlier fraction.

The penalty is searched over ``lam = s / |Q|`` where ``Q`` is the volume
measure of the hard fit and ``s`` runs over a scale-free grid. The smallest
``lam`` whose soft fit leaves at least ``ceil(nu * T)`` incumbents with active
slack wins. How many active slacks count as "enough" is decided solely by
:func:`required_active`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Union

import numpy as np

from .box import BoxFitResult, BoxSlackProblem, slack_scales
from .core import CalibrationConfig, ParameterSchema, as_points
from .ellipsoid import EllipsoidFitResult, EllipsoidSlackProblem

__all__ = ["GridRecord", "CalibrationResult", "required_active", "calibrate", "DEFAULT_NU"]

Geometry = Literal["box", "ellipsoid"]
FitResult = Union[BoxFitResult, EllipsoidFitResult]

DEFAULT_NU = {"box": 0.5, "ellipsoid": 0.1}
Q_FLOOR = 1e-12


@dataclass(frozen=True)
class GridRecord:
    s: float
    lam: float
    n_active: int
    volume_term: float
    slack_sum: float

    def to_dict(self) -> dict:
        return {"s": self.s, "lambda": self.lam, "n_active": self.n_active,
                "volume_term": self.volume_term, "slack_sum": self.slack_sum}


@dataclass(frozen=True)
class CalibrationResult:
    geometry: str
    nu: float
    q_hard: float
    required: int
    s: float | None
    lam: float | None
    fit: FitResult
    hard: FitResult
    grid: tuple[GridRecord, ...]
    saturated: bool

    def to_dict(self) -> dict:
        return {
            "geometry": self.geometry,
            "nu": self.nu,
            "q_hard": self.q_hard,
            "required_active": self.required,
            "s": self.s,
            "lambda": self.lam,
            "calibration_saturated": self.saturated,
            "grid": [g.to_dict() for g in self.grid],
        }


def required_active(nu: float, T: int) -> int:
    """Active slacks needed so that at most ``(1 - nu) * T`` incumbents stay inside."""
    return max(0, math.ceil(nu * T - 1e-9))


def _volume_term(fit: FitResult) -> float:
    if isinstance(fit, BoxFitResult):
        return fit.width_sq
    return fit.log_volume


def calibrate(incumbents, geometry: Geometry, config: CalibrationConfig | None = None,
              schema: ParameterSchema | None = None, tol: float = 1e-6) -> CalibrationResult:
    """Fit the slack-penalised geometry at the penalty selected by ``config.nu``.

    Every grid point is solved, including those after the first qualifying
    one, so the returned grid record can be inspected for monotonicity.
    """
    if geometry not in DEFAULT_NU:
        raise ValueError(f"unknown geometry {geometry!r}")
    incumbents = list(incumbents)
    X, ids = as_points(incumbents)
    T = len(X)
    if T == 0:
        raise ValueError("calibration needs at least one incumbent")
    if config is None:
        config = CalibrationConfig(nu=DEFAULT_NU[geometry])

    if geometry == "box":
        if schema is not None:
            scales = slack_scales(schema)
        else:
            scales = (np.ones(X.shape[1]), np.ones(X.shape[1]))
        problem = BoxSlackProblem(incumbents, *scales, tol=config.tol)
        hard = problem._result(problem.hard.space.lower, problem.hard.space.upper, 0.0)
        q = 0.5 * hard.width_sq
    elif geometry == "ellipsoid":
        scale = schema.ranges if schema is not None else None
        problem = EllipsoidSlackProblem(X, tol, scale, task_ids=ids, activity_tol=config.tol)
        hard = problem.hard
        q = hard.log_volume
    else:
        raise ValueError(f"unknown geometry {geometry!r}")

    if abs(q) < Q_FLOOR:
        raise ValueError("degenerate hard fit; calibration undefined")

    need = required_active(config.nu, T)
    records = []
    chosen = None
    for s in config.grid:
        lam = s / abs(q)
        fit = problem.solve(lam)
        records.append(GridRecord(s, lam, fit.slack.n_active, _volume_term(fit), fit.slack.total))
        if chosen is None and fit.slack.n_active >= need:
            chosen = (s, lam, fit)

    if chosen is None:
        return CalibrationResult(geometry, config.nu, q, need, None, None, hard, hard,
                                 tuple(records), True)
    s, lam, fit = chosen
    return CalibrationResult(geometry, config.nu, q, need, s, lam, fit, hard, tuple(records), False)
