"""Damped least squares (Levenberg-Marquardt) on ``sum(r(x)**2)``.

Weights belong inside the residuals: the solver only ever sees the plain
sum of squares.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import NonFiniteResidual, SingularNormalEquations

LAMBDA_MAX = 1e16


@dataclass
class LmProblem:
    residual: Callable[[np.ndarray], np.ndarray]
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None


@dataclass(frozen=True)
class LmOptions:
    max_iter: int = 100
    cost_tol: float = 1e-10
    step_tol: float = 1e-10
    lambda_init: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    jac_step: float = 1e-6

    def __post_init__(self):
        for name in ("max_iter", "cost_tol", "step_tol", "lambda_init", "lambda_up",
                     "lambda_down", "jac_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class LmReport:
    x: np.ndarray
    cost: float
    initial_cost: float
    iterations: int
    converged: bool
    reason: str
    cost_history: list = field(default_factory=list)


def _eval(problem: LmProblem, x: np.ndarray) -> np.ndarray:
    r = np.atleast_1d(np.asarray(problem.residual(x), dtype=float))
    if not np.all(np.isfinite(r)):
        raise NonFiniteResidual(f"residual is not finite at x={x!r}")
    return r


def numeric_jacobian(problem: LmProblem, x, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of the residual, shape ``(m, n)``."""
    if not h > 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        cols.append((_eval(problem, x + e) - _eval(problem, x - e)) / (2.0 * h))
    return np.stack(cols, axis=1)


def solve(problem: LmProblem, x0, opts: LmOptions | None = None) -> LmReport:
    """Minimise ``sum(problem.residual(x)**2)`` starting from ``x0``.

    Marquardt damping ``J^T J + lambda * diag(J^T J)``; lambda is multiplied by
    ``lambda_up`` after a rejected step and divided by ``lambda_down`` after an
    accepted one. Only strictly cost-decreasing steps are accepted.
    """
    opts = opts or LmOptions()
    x = np.array(x0, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise ValueError("x0 must be finite")
    jac = problem.jacobian or (lambda p: numeric_jacobian(problem, p, opts.jac_step))

    r = _eval(problem, x)
    cost = float(r @ r)
    initial = cost
    history = [cost]
    lam = opts.lambda_init
    reason = "max_iter"
    converged = False
    it = 0
    if cost == 0.0:
        return LmReport(x, cost, initial, 0, True, "zero_cost", history)

    while it < opts.max_iter:
        it += 1
        J = np.asarray(jac(x), dtype=float).reshape(r.size, x.size)
        A = J.T @ J
        g = J.T @ r
        diag = np.maximum(np.diag(A), 1e-12 * max(1.0, float(np.max(np.diag(A)))))
        accepted = False
        while lam <= LAMBDA_MAX:
            try:
                dx = np.linalg.solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                dx = None
            if dx is None or not np.all(np.isfinite(dx)):
                lam *= opts.lambda_up
                continue
            if np.linalg.norm(dx) < opts.step_tol:
                reason, converged = "step_tol", True
                # keep the last tiny step only if it still lowers the cost
                try:
                    r_new = _eval(problem, x + dx)
                except NonFiniteResidual:
                    break
                if float(r_new @ r_new) < cost:
                    x, r, cost = x + dx, r_new, float(r_new @ r_new)
                    history.append(cost)
                break
            x_new = x + dx
            try:
                r_new = _eval(problem, x_new)
            except NonFiniteResidual:
                lam *= opts.lambda_up
                continue
            cost_new = float(r_new @ r_new)
            if cost_new < cost:
                accepted = True
                lam = max(lam / opts.lambda_down, 1e-300)
                break
            lam *= opts.lambda_up
        else:
            if dx is None or not np.all(np.isfinite(dx)):
                raise SingularNormalEquations("damped normal equations unsolvable at max damping")
            # no decrease even under maximal damping: local minimum to precision
            reason, converged = "stalled", True
        if not accepted:
            break
        rel = (cost - cost_new) / cost
        assert cost_new <= cost
        x, r, cost = x_new, r_new, cost_new
        history.append(cost)
        if cost == 0.0:
            reason, converged = "zero_cost", True
            break
        if rel < opts.cost_tol:
            reason, converged = "cost_tol", True
            break
    return LmReport(x, cost, initial, it, converged, reason, history)
