"""Axis-aligned bounding boxes around incumbents, with an outlier-tolerant variant."""
from __future__ import annotations

from dataclasses import dataclass

import cvxpy as cp
import numpy as np
from scipy.optimize import linprog

from .core import (ACTIVITY_TOL, BoxSpace, ParameterSchema, SlackReport, SolverError, as_points,
                   solve_clarabel, sparsify_slacks)

__all__ = [
    "BoxFitResult",
    "fit_box",
    "slack_scales",
    "optimal_slacks_given_box",
    "box_soft_objective",
    "exact_penalty_lambda",
    "BoxSlackProblem",
    "fit_box_slack",
]

SCALE_FLOOR = 1e-3


@dataclass(frozen=True)
class BoxFitResult:
    space: BoxSpace
    slack: SlackReport
    objective: float

    @property
    def width_sq(self) -> float:
        """Squared Euclidean norm of the box widths, ``||u - l||^2``."""
        w = self.space.upper - self.space.lower
        return float(w @ w)


def fit_box(incumbents) -> BoxFitResult:
    """Tightest box containing every incumbent: element-wise min and max."""
    X, ids = as_points(incumbents)
    if X.shape[0] == 0:
        raise ValueError("cannot fit a box to an empty incumbent set")
    if X.shape[1] == 0:
        raise ValueError("cannot fit a box in zero dimensions (no numeric parameters)")
    space = BoxSpace(X.min(axis=0), X.max(axis=0))
    w = space.upper - space.lower
    return BoxFitResult(space, SlackReport.zeros(ids, box=True), 0.5 * float(w @ w))


def slack_scales(schema: ParameterSchema) -> tuple[np.ndarray, np.ndarray]:
    """Scales ``(|l0|, |u0|)`` floored at ``1e-3`` of each dimension's range."""
    floor = SCALE_FLOOR * schema.ranges
    return np.maximum(np.abs(schema.lower), floor), np.maximum(np.abs(schema.upper), floor)


def optimal_slacks_given_box(lower, upper, incumbents, lower_scale, upper_scale):
    """Smallest feasible ``(xi_minus, xi_plus)`` per incumbent for a fixed box."""
    X, _ = as_points(incumbents)
    lo, hi = np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
    ls, us = np.asarray(lower_scale, dtype=float), np.asarray(upper_scale, dtype=float)
    if np.any(ls <= 0) or np.any(us <= 0):
        raise ValueError("slack scales must be strictly positive")
    xi_minus = np.maximum(0.0, ((lo - X) / ls).max(axis=1))
    xi_plus = np.maximum(0.0, ((X - hi) / us).max(axis=1))
    return xi_minus, xi_plus


def box_soft_objective(lower, upper, incumbents, lam, lower_scale, upper_scale) -> float:
    """Value of the slack-penalised box problem with slacks at their minimal values."""
    X, _ = as_points(incumbents)
    xm, xp = optimal_slacks_given_box(lower, upper, X, lower_scale, upper_scale)
    w = np.asarray(upper, dtype=float) - np.asarray(lower, dtype=float)
    return 0.5 * lam * float(w @ w) + float((xm + xp).sum()) / (2 * len(X))


def _min_max_load(X: np.ndarray, extreme: np.ndarray, demand: np.ndarray) -> float:
    # Split each dimension's demand over the incumbents sitting on that face so
    # that the largest per-incumbent share is minimal.
    T, p = X.shape
    edges = [(t, j) for j in range(p) if demand[j] > 0 for t in np.flatnonzero(X[:, j] == extreme[j])]
    if not edges:
        return 0.0
    n = len(edges)
    c = np.zeros(n + 1)
    c[-1] = 1.0
    dims = sorted({j for _, j in edges})
    A_eq = np.zeros((len(dims), n + 1))
    for k, (t, j) in enumerate(edges):
        A_eq[dims.index(j), k] = 1.0
    A_ub = np.zeros((T, n + 1))
    for k, (t, j) in enumerate(edges):
        A_ub[t, k] = 1.0
    A_ub[:, -1] = -1.0
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(T), A_eq=A_eq, b_eq=demand[dims], method="highs")
    if res.status != 0:
        raise SolverError(f"multiplier LP failed: {res.message}")
    return float(res.x[-1])


def exact_penalty_lambda(incumbents, lower_scale, upper_scale) -> float:
    """Largest ``lam`` for which the hard box still solves the slack problem.

    Below this value the linear slack penalty dominates every Lagrange
    multiplier of the hard problem, so zero slack is optimal.
    """
    X, _ = as_points(incumbents)
    hard = fit_box(X).space
    w = hard.upper - hard.lower
    load = max(
        _min_max_load(X, hard.upper, w * np.asarray(upper_scale, dtype=float)),
        _min_max_load(X, hard.lower, w * np.asarray(lower_scale, dtype=float)),
    )
    if load == 0.0:
        return np.inf
    return 1.0 / (2 * len(X) * load)


class BoxSlackProblem:
    """Slack-penalised box fit compiled once and re-solved for several ``lam``.

    Below :func:`exact_penalty_lambda` the hard box is returned as is. Above
    it, the QP solution is moved along its optimal face (same widths, shifted)
    to the point with the fewest active slacks.
    """

    def __init__(self, incumbents, lower_scale, upper_scale, tol: float = ACTIVITY_TOL):
        self.X, self.task_ids = as_points(incumbents)
        T, p = self.X.shape
        if T == 0:
            raise ValueError("cannot fit a box to an empty incumbent set")
        if p == 0:
            raise ValueError("cannot fit a box in zero dimensions (no numeric parameters)")
        self.ls = np.asarray(lower_scale, dtype=float)
        self.us = np.asarray(upper_scale, dtype=float)
        if np.any(self.ls <= 0) or np.any(self.us <= 0):
            raise ValueError("slack scales must be strictly positive")
        self.tol = tol
        self.hard = fit_box(self.X)
        self.lam_exact = exact_penalty_lambda(self.X, self.ls, self.us)

        self._lam = cp.Parameter(nonneg=True)
        self._l = cp.Variable(p)
        self._u = cp.Variable(p)
        xm = cp.Variable(T, nonneg=True)
        xp = cp.Variable(T, nonneg=True)
        ones = np.ones((1, p))
        cons = [
            self._l[None, :] - cp.reshape(xm, (T, 1), order="C") @ (ones * self.ls) <= self.X,
            self.X <= self._u[None, :] + cp.reshape(xp, (T, 1), order="C") @ (ones * self.us),
        ]
        obj = 0.5 * self._lam * cp.sum_squares(self._u - self._l) + cp.sum(xm + xp) / (2 * T)
        self._prob = cp.Problem(cp.Minimize(obj), cons)

        # Widths are unique at the optimum; only a translation can trade slack.
        self._lo_fixed = cp.Parameter(p)
        self._hi_fixed = cp.Parameter(p)
        self._shift = cp.Variable(p)
        self._slack_face = cp.Variable(2 * T, nonneg=True)
        fm, fp = self._slack_face[:T], self._slack_face[T:]
        self._weights = cp.Parameter(2 * T, nonneg=True)
        self._bound = cp.Parameter()
        self._sparsify = cp.Problem(
            cp.Minimize(self._weights @ self._slack_face),
            [
                (self._lo_fixed + self._shift)[None, :] - cp.reshape(fm, (T, 1), order="C") @ (ones * self.ls) <= self.X,
                self.X <= (self._hi_fixed + self._shift)[None, :] + cp.reshape(fp, (T, 1), order="C") @ (ones * self.us),
                cp.sum(self._slack_face) <= self._bound,
            ],
        )

    def _result(self, lower, upper, lam) -> BoxFitResult:
        xm, xp = optimal_slacks_given_box(lower, upper, self.X, self.ls, self.us)
        report = SlackReport(self.task_ids, xm + xp, xm, xp, lam=lam, tol=self.tol)
        value = box_soft_objective(lower, upper, self.X, lam, self.ls, self.us)
        return BoxFitResult(BoxSpace(lower, upper), report, value)

    def solve(self, lam: float) -> BoxFitResult:
        if not np.isfinite(lam) or lam <= 0:
            raise ValueError(f"lambda must be positive and finite, got {lam}")
        if lam <= self.lam_exact:
            return self._result(self.hard.space.lower, self.hard.space.upper, lam)
        self._lam.value = lam
        solve_clarabel(self._prob, "box slack fit", self.hard)
        lo = np.asarray(self._l.value, dtype=float)
        hi = np.asarray(self._u.value, dtype=float)
        hi = np.maximum(hi, lo)
        xm, xp = optimal_slacks_given_box(lo, hi, self.X, self.ls, self.us)
        self._lo_fixed.value, self._hi_fixed.value = lo, hi
        if sparsify_slacks(self._sparsify, self._slack_face, self._weights, self._bound,
                           np.concatenate([xm, xp])):
            lo = lo + self._shift.value
            hi = hi + self._shift.value
        return self._result(lo, hi, lam)


def fit_box_slack(incumbents, lam: float, schema: ParameterSchema | None = None,
                  scales: tuple[np.ndarray, np.ndarray] | None = None) -> BoxFitResult:
    """Box minimising ``lam/2 ||u-l||^2 + mean slack / 2``.

    Slack scales come from ``schema`` (see :func:`slack_scales`) unless given
    explicitly as ``scales=(lower_scale, upper_scale)``.
    """
    if scales is None:
        if schema is None:
            raise ValueError("either schema or scales is required")
        scales = slack_scales(schema)
    return BoxSlackProblem(incumbents, *scales).solve(lam)
