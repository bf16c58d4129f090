"""From incumbents to a learned search space, for every supported method."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .box import fit_box
from .calibration import DEFAULT_NU, CalibrationResult, calibrate
from .core import (BoxSpace, CalibrationConfig, DEFAULT_GRID, EllipsoidSpace, Incumbent,
                   ParameterSchema, SlackReport)
from .ellipsoid import fit_mvee

__all__ = ["METHODS", "LearnedSpace", "learn_space"]

METHODS = ("original", "box", "box-slack", "ellipsoid", "ellipsoid-slack")


@dataclass(frozen=True)
class LearnedSpace:
    method: str
    space: BoxSpace | EllipsoidSpace | None
    slack: SlackReport | None = None
    q: float | None = None
    calibration: CalibrationResult | None = None
    warnings: tuple[str, ...] = field(default_factory=tuple)

    @property
    def geometry(self) -> str:
        if self.space is None:
            return "original"
        return "box" if isinstance(self.space, BoxSpace) else "ellipsoid"


def learn_space(incumbents: Sequence[Incumbent], method: str, schema: ParameterSchema,
                nu: float | None = None, grid: Sequence[float] = DEFAULT_GRID,
                tol: float = 1e-6) -> LearnedSpace:
    """Learn the search space named by ``method`` from the given incumbents.

    ``original`` skips learning. The ``-slack`` methods calibrate the penalty
    from ``nu`` (defaults 0.5 for boxes and 0.1 for ellipsoids).
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if method == "original":
        return LearnedSpace(method, None)
    if schema.p == 0:
        raise ValueError("schema has no numeric parameters to learn a space for")
    warnings = []
    if len(incumbents) == 1:
        warnings.append("single source task: learned space degenerates to a point")

    if method == "box":
        fit = fit_box(incumbents)
        if np.any(fit.space.upper == fit.space.lower) and len(incumbents) > 1:
            warnings.append("zero-width dimensions in learned box")
        return LearnedSpace(method, fit.space, fit.slack, fit.objective, warnings=tuple(warnings))
    if method == "ellipsoid":
        fit = fit_mvee(incumbents, tol, scale=schema.ranges,
                       task_ids=[i.task_id for i in incumbents])
        return LearnedSpace(method, fit.space, fit.slack, fit.log_volume, warnings=tuple(warnings))

    geometry = method.split("-")[0]
    config = CalibrationConfig(nu=DEFAULT_NU[geometry] if nu is None else nu, grid=tuple(grid))
    cal = calibrate(incumbents, geometry, config, schema, tol)
    if cal.saturated:
        warnings.append("calibration_saturated: no grid point reached the outlier fraction")
    return LearnedSpace(method, cal.fit.space, cal.fit.slack, cal.q_hard, cal, tuple(warnings))
