"""Centralized ground truth for the saddle point of the coupled problem.

Quadratic instances are solved exactly through the KKT system. General
instances use the centralized primal-dual iteration on the regularized
Lagrangian with N multiplier copies, which every agent would run if the
network averages of the multipliers and of the residual were available.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    DimensionMismatchError,
    DivergedError,
    MaxIterError,
    NotQuadraticError,
    SingularKKTError,
)
from .problem import ProblemInstance

__all__ = [
    "SaddlePoint",
    "PrimalDualTrajectory",
    "solve_kkt_quadratic",
    "primal_dual_field",
    "centralized_primal_dual",
    "saddle_residual",
    "solve_saddle_point",
]

DIVERGENCE_THRESHOLD = 1e12


@dataclass(frozen=True)
class SaddlePoint:
    x_star: np.ndarray
    lambda_star: np.ndarray
    kkt_residual: float

    def to_dict(self) -> dict:
        return {
            "x_star": self.x_star.tolist(),
            "lambda_star": self.lambda_star.tolist(),
            "kkt_residual": self.kkt_residual,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> SaddlePoint:
        return cls(np.asarray(d["x_star"], float), np.asarray(d["lambda_star"], float), float(d["kkt_residual"]))

    @classmethod
    def from_json(cls, text: str) -> SaddlePoint:
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class PrimalDualTrajectory:
    """Recorded iterates; row k holds the state after ``k * record_every`` steps."""

    x: np.ndarray
    lam: np.ndarray
    gamma: float
    kappa: float
    record_every: int = 1


def saddle_residual(p: ProblemInstance, x, lam_bar) -> float:
    """``|grad f(x) + A' lam_bar| + |A x - b|``."""
    x = np.asarray(x, dtype=float)
    lam_bar = np.asarray(lam_bar, dtype=float)
    if lam_bar.shape != (p.m,):
        raise DimensionMismatchError(f"multiplier has shape {lam_bar.shape}, expected ({p.m},)")
    A = p.A
    return float(np.linalg.norm(p.grad(x) + A.T @ lam_bar) + np.linalg.norm(A @ x - p.b))


def solve_kkt_quadratic(p: ProblemInstance) -> SaddlePoint:
    """Solve ``[Q A'; A 0] (x, lam) = (-q, b)`` by pivoted LU."""
    if not p.is_quadratic:
        raise NotQuadraticError("closed-form KKT solve needs every cost to be quadratic")
    n, m = p.n, p.m
    Q = scipy.linalg.block_diag(*[c.Q for c in p.costs])
    q = np.concatenate([c.q for c in p.costs])
    A = p.A
    K = np.block([[Q, A.T], [A, np.zeros((m, m))]])
    rhs = np.concatenate([-q, p.b])
    if np.linalg.cond(K) > 1e13:
        raise SingularKKTError("KKT matrix is singular; check strong convexity and full row rank of A")
    lu = scipy.linalg.lu_factor(K)
    sol = scipy.linalg.lu_solve(lu, rhs)
    # one round of iterative refinement
    sol = sol + scipy.linalg.lu_solve(lu, rhs - K @ sol)
    x, lam = sol[:n], sol[n:]
    return SaddlePoint(x, lam, saddle_residual(p, x, lam))


def primal_dual_field(p: ProblemInstance, x, lam, kappa: float):
    """Descent/ascent directions of the regularized Lagrangian.

    Returns ``(-dL/dx, dL/dlam)`` with ``lam`` stacked as ``N*m`` copies; the
    fixed points are exactly ``(x*, 1 (x) lam*)``.
    """
    N, m = p.N, p.m
    L = np.asarray(lam, dtype=float).reshape(N, m)
    avg = L.mean(axis=0)
    dx = -(p.grad(x) + p.A.T @ avg)
    res = (p.A @ x - p.b) / N
    dlam = kappa * (avg - L) + res
    return dx, dlam.ravel()


def centralized_primal_dual(
    p: ProblemInstance,
    gamma: float,
    kappa: float,
    iters: int,
    x0=None,
    lam0=None,
    record_every: int = 1,
) -> PrimalDualTrajectory:
    """Run the primal-dual iteration with exact global averages.

    Raises
    ------
    DivergedError
        As soon as the state norm exceeds 1e12 or turns non-finite.
    """
    if not gamma > 0 or not kappa > 0:
        raise ValueError("gamma and kappa must be positive")
    x = np.zeros(p.n) if x0 is None else np.array(x0, dtype=float)
    lam = np.zeros(p.N * p.m) if lam0 is None else np.array(lam0, dtype=float)
    if x.shape != (p.n,) or lam.shape != (p.N * p.m,):
        raise DimensionMismatchError("initial point has the wrong shape")
    xs, ls = [x.copy()], [lam.copy()]
    for t in range(1, iters + 1):
        dx, dlam = primal_dual_field(p, x, lam, kappa)
        x = x + gamma * dx
        lam = lam + gamma * dlam
        size = max(np.max(np.abs(x), initial=0.0), np.max(np.abs(lam), initial=0.0))
        if not np.isfinite(size) or size > DIVERGENCE_THRESHOLD:
            raise DivergedError(f"centralized primal-dual diverged at iteration {t} (gamma={gamma:g})")
        if t % record_every == 0:
            xs.append(x.copy())
            ls.append(lam.copy())
    return PrimalDualTrajectory(np.array(xs), np.array(ls), gamma, kappa, record_every)


def _default_gamma(p: ProblemInstance, kappa: float) -> float:
    lip = max(c.lipschitz() for c in p.costs)
    a_norm = np.linalg.norm(p.A, 2)
    return 1.0 / (lip + 2.0 * a_norm / np.sqrt(p.N) + kappa)


def solve_saddle_point(
    p: ProblemInstance,
    kappa: float = 1.0,
    tol: float = 1e-10,
    max_iter: int = 10**6,
    gamma: float | None = None,
) -> SaddlePoint:
    """Saddle point by KKT solve (quadratic) or by primal-dual iteration.

    The iterative branch halves ``gamma`` after a divergence and stops once the
    saddle residual at the averaged multiplier drops below ``tol``.
    """
    if p.is_quadratic:
        return solve_kkt_quadratic(p)
    gamma = _default_gamma(p, kappa) if gamma is None else gamma
    for _ in range(30):
        try:
            return _iterate_to_tolerance(p, gamma, kappa, tol, max_iter)
        except DivergedError:
            gamma *= 0.5
    raise DivergedError("primal-dual oracle failed to converge for any tried step size")


def _iterate_to_tolerance(p, gamma, kappa, tol, max_iter) -> SaddlePoint:
    N, m = p.N, p.m
    x = np.zeros(p.n)
    lam = np.zeros(N * m)
    best = None
    for t in range(max_iter):
        dx, dlam = primal_dual_field(p, x, lam, kappa)
        x = x + gamma * dx
        lam = lam + gamma * dlam
        if t % 50 == 0:
            size = max(np.max(np.abs(x)), np.max(np.abs(lam)))
            if not np.isfinite(size) or size > DIVERGENCE_THRESHOLD:
                raise DivergedError(f"diverged at iteration {t}")
            lam_bar = lam.reshape(N, m).mean(axis=0)
            r = saddle_residual(p, x, lam_bar)
            spread = float(np.max(np.abs(lam.reshape(N, m) - lam_bar)))
            if r <= tol and spread <= tol:
                return SaddlePoint(x, lam_bar, r)
            best = r
    raise MaxIterError(f"no convergence within {max_iter} iterations (last residual {best:.3g})")
