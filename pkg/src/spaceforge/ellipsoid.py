"""Minimum-volume enclosing ellipsoids and their slack-penalised relaxation.

Points are whitened per dimension before solving (a dimension-wise scale,
typically the original parameter range) so that the degeneracy floor and the
solver tolerances are scale free. The minimum-volume ellipsoid is affinely
equivariant, so whitening does not change the solution.
"""
from __future__ import annotations

from dataclasses import dataclass

import cvxpy as cp
import numpy as np

from .core import (ACTIVITY_TOL, EllipsoidSpace, SlackReport, SolverError, as_points,
                   solve_clarabel, sparsify_slacks)

__all__ = [
    "EllipsoidFitResult",
    "ellipsoid_norm",
    "log_volume",
    "ellipsoid_from_shape",
    "khachiyan",
    "fit_mvee",
    "ellipsoid_soft_objective",
    "EllipsoidSlackProblem",
    "fit_mvee_slack",
]

DEGENERACY_FLOOR = 1e-6
MAX_ITER = 100_000


@dataclass(frozen=True)
class EllipsoidFitResult:
    space: EllipsoidSpace
    slack: SlackReport
    log_volume: float
    support: tuple[int, ...]
    objective: float
    weights: np.ndarray | None = None
    iterations: int = 0


def ellipsoid_norm(space: EllipsoidSpace, x) -> float | np.ndarray:
    """``||A x + b||``; accepts one point or a ``(T, p)`` stack of points."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != space.p:
        raise ValueError(f"point has dimension {x.shape[-1]}, ellipsoid has {space.p}")
    r = x @ space.A.T + space.b
    out = np.linalg.norm(r, axis=-1)
    return float(out) if out.ndim == 0 else out


def log_volume(space: EllipsoidSpace | np.ndarray) -> float:
    """``log det(A^{-1})``, the volume measure being minimised."""
    A = space.A if isinstance(space, EllipsoidSpace) else np.asarray(space, dtype=float)
    sign, logdet = np.linalg.slogdet(A)
    if sign <= 0 or np.linalg.eigvalsh(0.5 * (A + A.T)).min() <= 0:
        raise ValueError("A is not positive definite")
    return -float(logdet)


def _sym_sqrt(M: np.ndarray) -> np.ndarray:
    M = 0.5 * (M + M.T)
    w, V = np.linalg.eigh(M)
    if w.min() <= 0:
        raise ValueError("shape matrix is not positive definite")
    S = (V * np.sqrt(w)) @ V.T
    return 0.5 * (S + S.T)


def ellipsoid_from_shape(M: np.ndarray, center: np.ndarray) -> EllipsoidSpace:
    """Ellipsoid ``(x-c)^T M (x-c) <= 1`` in ``||A x + b|| <= 1`` form."""
    A = _sym_sqrt(np.asarray(M, dtype=float))
    return EllipsoidSpace(A, -A @ np.asarray(center, dtype=float))


def khachiyan(Z: np.ndarray, eps: float = 1e-6, max_iter: int = MAX_ITER) -> tuple[np.ndarray, int]:
    """Dual weights of the minimum-volume ellipsoid around the rows of ``Z``.

    Barycentric coordinate ascent on the lifted points ``(z, 1)`` with away
    steps; stops once every lifted Mahalanobis norm lies within ``(1 +/- eps)``
    of ``d + 1`` on the support. Requires the rows of ``Z`` to span their
    affine hull of dimension ``d``.

    Returns the weights and the number of iterations used.
    """
    T, d = Z.shape
    n = d + 1
    Q = np.hstack([Z, np.ones((T, 1))])
    u = np.full(T, 1.0 / T)
    for it in range(max_iter):
        X = (Q.T * u) @ Q
        try:
            L = np.linalg.cholesky(X)
        except np.linalg.LinAlgError as exc:
            raise SolverError("lifted scatter matrix became singular", best=u) from exc
        G = np.linalg.solve(L, Q.T)
        m = np.einsum("ij,ij->j", G, G)
        j = int(np.argmax(m))
        on = u > 0
        k = int(np.flatnonzero(on)[np.argmin(m[on])])
        eps_plus = m[j] / n - 1.0
        eps_minus = 1.0 - m[k] / n
        if max(eps_plus, eps_minus) <= eps:
            return u, it
        if eps_plus >= eps_minus:
            beta = (m[j] - n) / (n * (m[j] - 1.0))
            u *= 1.0 - beta
            u[j] += beta
        else:
            drop = u[k] / (1.0 - u[k]) if u[k] < 1.0 else np.inf
            beta = (n - m[k]) / (n * (m[k] - 1.0)) if m[k] > 1.0 else drop
            beta = min(beta, drop)
            u *= 1.0 + beta
            u[k] -= beta
            u[k] = max(u[k], 0.0)
        u /= u.sum()
    raise SolverError(f"Khachiyan did not reach eps={eps} in {max_iter} iterations", best=u)


def _scale_for(X: np.ndarray, scale) -> np.ndarray:
    if scale is None:
        rng = X.max(axis=0) - X.min(axis=0)
        return np.where(rng > 0, rng, 1.0)
    s = np.asarray(scale, dtype=float).reshape(-1)
    if s.shape != (X.shape[1],) or np.any(s <= 0):
        raise ValueError("scale must be a positive vector with one entry per dimension")
    return s


def _norms(space: EllipsoidSpace, X: np.ndarray) -> np.ndarray:
    return np.linalg.norm(X @ space.A.T + space.b, axis=1)


def fit_mvee(points, tol: float = 1e-6, scale=None, max_iter: int = MAX_ITER,
             task_ids=None) -> EllipsoidFitResult:
    """Minimum-volume ellipsoid containing all points, to relative accuracy ``tol``.

    Directions in which the (whitened) scatter has variance below
    ``DEGENERACY_FLOOR**2`` are treated as flat; the ellipsoid gets a semi-axis
    of ``DEGENERACY_FLOOR`` (in whitened units) there. The result is rescaled
    so that the farthest point lies exactly on the boundary.
    """
    X, ids = as_points(points)
    if task_ids is not None:
        ids = tuple(task_ids)
    if not 0.0 < tol < 1.0:
        raise ValueError(f"tolerance must lie in (0, 1), got {tol}")
    T, p = X.shape
    if T == 0:
        raise ValueError("cannot fit an ellipsoid to an empty point set")
    if p == 0:
        raise ValueError("cannot fit an ellipsoid in zero dimensions (no numeric parameters)")
    s = _scale_for(X, scale)
    mean = X.mean(axis=0)
    Y = (X - mean) / s

    evals, V = np.linalg.eigh(Y.T @ Y / T)
    flat = evals < DEGENERACY_FLOOR ** 2
    Vk, Vf = V[:, ~flat], V[:, flat]
    k = Vk.shape[1]

    Zk = Y @ Vk
    weights = np.full(T, 1.0 / T)
    iters = 0
    if k > 0:
        try:
            weights, iters = khachiyan(Zk, tol, max_iter)
        except SolverError as exc:
            best = _assemble(Zk, exc.best, Vk, Vf, Y, X, s, mean, ids, max_iter, tol)
            raise SolverError(str(exc), best=best) from exc
    return _assemble(Zk, weights, Vk, Vf, Y, X, s, mean, ids, iters, tol)


def _assemble(Zk, weights, Vk, Vf, Y, X, s, mean, ids, iters, tol) -> EllipsoidFitResult:
    T, p = X.shape
    k = Vk.shape[1]
    M_y = np.zeros((p, p))
    c_y = np.zeros(p)
    if k > 0:
        c_z = weights @ Zk
        D = Zk - c_z
        S = (D.T * weights) @ D
        M_z = np.linalg.inv(S) / k
        M_y += Vk @ M_z @ Vk.T
        c_y = Vk @ c_z
    if Vf.shape[1] > 0:
        off = np.abs((Y - c_y) @ Vf).max() if T else 0.0
        axis = max(DEGENERACY_FLOOR, 2.0 * off)
        M_y += Vf @ Vf.T / axis ** 2
    q = np.einsum("ti,ij,tj->t", Y - c_y, M_y, Y - c_y).max()
    if q > 1e-300:
        M_y /= q
    M_x = M_y / np.outer(s, s)
    space = ellipsoid_from_shape(M_x, mean + s * c_y)
    norms = _norms(space, X)
    # Very flat shapes lose a few digits in the square root; renormalise on the
    # norms as they will actually be evaluated.
    if norms.max() > 0:
        space = EllipsoidSpace(space.A / norms.max(), space.b / norms.max())
        norms = _norms(space, X)
    support = tuple(int(t) for t in np.flatnonzero(norms >= 1.0 - 10.0 * tol))
    lv = log_volume(space)
    return EllipsoidFitResult(space, SlackReport.zeros(ids), lv, support, lv, weights, iters)


def ellipsoid_soft_objective(space: EllipsoidSpace, points, lam: float) -> float:
    """``lam * log det(A^{-1}) + mean(max(0, ||A x_t + b|| - 1))``."""
    X, _ = as_points(points)
    xi = np.maximum(0.0, _norms(space, X) - 1.0)
    return lam * log_volume(space) + float(xi.mean())


class EllipsoidSlackProblem:
    """Slack-penalised ellipsoid fit, compiled once and re-solved per ``lam``.

    For ``lam`` below ``1 / (T * p * max_t w_t)`` (``w`` the hard fit's dual
    weights) the linear slack penalty exceeds every constraint multiplier of
    the hard problem and the hard ellipsoid is returned directly; half that
    bound is used as a safety margin against the inexact weights.

    Linear slack penalties often leave a whole face of optimal solutions that
    trade slack between incumbents at equal cost. After the main solve, a
    reweighted-l1 pass over that face (objective within ``1e-8`` relative)
    picks the solution with the fewest active slacks.
    """

    def __init__(self, points, tol: float = 1e-6, scale=None, task_ids=None,
                 activity_tol: float = ACTIVITY_TOL):
        self.X, self.task_ids = as_points(points)
        if task_ids is not None:
            self.task_ids = tuple(task_ids)
        T, p = self.X.shape
        self.tol = tol
        self.activity_tol = activity_tol
        self.hard = fit_mvee(self.X, tol, scale, task_ids=self.task_ids)
        self.scale = _scale_for(self.X, scale)
        self.mean = self.X.mean(axis=0)
        self.lam_exact = 0.5 / (T * p * float(self.hard.weights.max()))

        self._Y = Y = (self.X - self.mean) / self.scale
        self._lam = cp.Parameter(nonneg=True)
        self._A = cp.Variable((p, p), PSD=True)
        self._b = cp.Variable(p)
        self._xi = xi = cp.Variable(T, nonneg=True)
        cons = [cp.norm(Y @ self._A + self._b[None, :], 2, axis=1) <= 1 + xi,
                self._A << np.eye(p) / DEGENERACY_FLOOR]
        obj = -self._lam * cp.log_det(self._A) + cp.sum(xi) / T
        self._prob = cp.Problem(cp.Minimize(obj), cons)

        self._A_fixed = cp.Parameter((p, p))
        self._b_face = cp.Variable(p)
        self._xi_face = cp.Variable(T, nonneg=True)
        self._weights = cp.Parameter(T, nonneg=True)
        self._bound = cp.Parameter()
        self._sparsify = cp.Problem(
            cp.Minimize(self._weights @ self._xi_face),
            [cp.norm(Y @ self._A_fixed + self._b_face[None, :], 2, axis=1) <= 1 + self._xi_face,
             cp.sum(self._xi_face) <= self._bound],
        )

    def _result(self, space: EllipsoidSpace, lam: float) -> EllipsoidFitResult:
        norms = _norms(space, self.X)
        xi = np.maximum(0.0, norms - 1.0)
        report = SlackReport(self.task_ids, xi, lam=lam, tol=self.activity_tol)
        lv = log_volume(space)
        support = tuple(int(t) for t in np.flatnonzero(np.abs(norms - 1.0) <= 10.0 * self.tol))
        return EllipsoidFitResult(space, report, lv, support, lam * lv + float(xi.mean()))

    def solve(self, lam: float) -> EllipsoidFitResult:
        if not np.isfinite(lam) or lam <= 0:
            raise ValueError(f"lambda must be positive and finite, got {lam}")
        if lam <= self.lam_exact:
            return self._result(self.hard.space, lam)
        self._lam.value = lam
        solve_clarabel(self._prob, "ellipsoid slack fit", self.hard)
        if self._A.value is None:
            raise SolverError("ellipsoid slack fit returned no solution", best=self.hard)
        A_y = 0.5 * (self._A.value + self._A.value.T)
        b_y = np.asarray(self._b.value, dtype=float)
        self._A_fixed.value = A_y
        xi0 = np.maximum(0.0, np.linalg.norm(self._Y @ A_y + b_y, axis=1) - 1.0)
        if sparsify_slacks(self._sparsify, self._xi_face, self._weights, self._bound, xi0):
            b_y = np.asarray(self._b_face.value, dtype=float)
        try:
            c_y = -np.linalg.solve(A_y, b_y)
            M_x = (A_y @ A_y) / np.outer(self.scale, self.scale)
            space = ellipsoid_from_shape(M_x, self.mean + self.scale * c_y)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise SolverError("ellipsoid slack fit returned a singular shape", best=self.hard) from exc
        return self._result(space, lam)


def fit_mvee_slack(points, lam: float, tol: float = 1e-6, scale=None) -> EllipsoidFitResult:
    """Ellipsoid minimising ``lam * log det(A^{-1}) + mean slack``."""
    return EllipsoidSlackProblem(points, tol, scale).solve(lam)
