"""Box-constrained convex QP solver (Hildreth dual coordinate ascent).

Minimizes 0.5 S' P S + g' S subject to lower <= diag(scaling) S <= upper.
The positive diagonal scaling maps the problem to u = scaling * S, where the
constraints are a plain box; the dual of the box problem is solved by cyclic
coordinate ascent (Hildreth), warm-startable across receding-horizon calls.
Stationarity is reported in the unscaled variables:

    P S* + g - lam_lower + lam_upper = 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import _core
from .errors import ConvergenceError, FeasibilityError

SWEEP_CHUNK = 8


@dataclass(frozen=True)
class QpProblem:
    hessian: np.ndarray
    gradient: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    scaling: np.ndarray = None  # positive diagonal, stored as a vector

    def __post_init__(self):
        p = np.asarray(self.hessian, dtype=float)
        d = p.shape[0]
        if p.shape != (d, d):
            raise ValueError("hessian must be square")
        if not np.allclose(p, p.T, rtol=1e-10, atol=0.0):
            raise ValueError("hessian must be symmetric")
        object.__setattr__(self, "hessian", 0.5 * (p + p.T))
        object.__setattr__(self, "gradient", np.asarray(self.gradient, dtype=float))
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float))
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float))
        scaling = self.scaling
        if scaling is None:
            scaling = np.ones(d)
        scaling = np.asarray(scaling, dtype=float)
        if scaling.ndim == 2:
            scaling = np.diag(scaling)
        if np.any(scaling <= 0.0):
            raise ValueError("scaling must be positive definite diagonal")
        object.__setattr__(self, "scaling", scaling)
        if self.gradient.shape != (d,) or self.lower.shape != (d,) or self.upper.shape != (d,):
            raise ValueError("gradient/bound dimensions do not match the hessian")
        if np.any(self.lower >= self.upper):
            raise ValueError("lower bounds must be strictly below upper bounds")

    @property
    def dim(self):
        return self.hessian.shape[0]


@dataclass(frozen=True)
class QpSolution:
    minimizer: np.ndarray
    lam_lower: np.ndarray
    lam_upper: np.ndarray
    kkt_residual: float
    iterations: int
    dual_trace: tuple = ()


def _scaled_problem(problem):
    """Return (P_u, g_u) of the problem expressed in u = scaling * S."""
    inv = 1.0 / problem.scaling
    p_u = problem.hessian * np.outer(inv, inv)
    g_u = problem.gradient * inv
    return p_u, g_u


def solve_box_qp(problem, tol=1e-8, max_iter=None, warm_start=None,
                 collect_trace=False):
    """Solve the box QP to a KKT residual below `tol`.

    If the unconstrained minimizer is feasible it is returned immediately
    (zero sweeps).  Otherwise Hildreth coordinate ascent runs on the dual
    until the residual converges; exceeding `max_iter` sweeps raises
    ConvergenceError carrying the best iterate.  `warm_start` accepts a
    previous QpSolution (or a (lam_lower, lam_upper) pair) for the dual.
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    d = problem.dim
    if max_iter is None:
        max_iter = 500 * d
    p_u, g_u = _scaled_problem(problem)
    try:
        factor = cho_factor(p_u)
    except np.linalg.LinAlgError as exc:
        raise ValueError("hessian is not positive definite") from exc

    lo, hi = problem.lower, problem.upper
    u_free = cho_solve(factor, -g_u)
    if np.all(u_free >= lo) and np.all(u_free <= hi):
        sol = QpSolution(
            minimizer=u_free / problem.scaling,
            lam_lower=np.zeros(d),
            lam_upper=np.zeros(d),
            kkt_residual=float(np.max(np.abs(p_u @ u_free + g_u), initial=0.0)),
            iterations=0,
        )
        return sol

    pinv = cho_solve(factor, np.eye(d))
    # stacked constraints [I; -I] u <= [hi; -lo]
    h_mat = np.block([[pinv, -pinv], [-pinv, pinv]])
    h_mat = np.ascontiguousarray(0.5 * (h_mat + h_mat.T))
    q = pinv @ g_u
    k_vec = np.ascontiguousarray(np.concatenate([hi + q, -lo - q]))

    lam = np.zeros(2 * d)
    if warm_start is not None:
        if isinstance(warm_start, QpSolution):
            start_up, start_lo = warm_start.lam_upper, warm_start.lam_lower
        else:
            start_lo, start_up = warm_start
        lam[:d] = np.maximum(start_up / problem.scaling, 0.0)
        lam[d:] = np.maximum(start_lo / problem.scaling, 0.0)

    trace = []
    sweeps = 0
    best = None
    best_res = np.inf
    while sweeps < max_iter:
        chunk = 1 if collect_trace else min(SWEEP_CHUNK, max_iter - sweeps)
        _core.hildreth_sweeps(h_mat, k_vec, lam, chunk)
        sweeps += chunk
        if collect_trace:
            trace.append(float(-0.5 * lam @ h_mat @ lam - k_vec @ lam))
        u_raw = -(q + pinv @ (lam[:d] - lam[d:]))
        u = np.clip(u_raw, lo, hi)
        stat = np.max(np.abs(p_u @ (u - u_raw)), initial=0.0)
        comp = max(
            np.max(lam[d:] * np.abs(u - lo), initial=0.0),
            np.max(lam[:d] * np.abs(hi - u), initial=0.0),
        )
        res = max(stat, comp, np.max(np.abs(u_raw - u), initial=0.0))
        if res < best_res:
            best_res = res
            best = (u, lam.copy())
        if res < tol:
            return QpSolution(
                minimizer=u / problem.scaling,
                lam_lower=lam[d:] * problem.scaling,
                lam_upper=lam[:d] * problem.scaling,
                kkt_residual=float(res),
                iterations=sweeps,
                dual_trace=tuple(trace),
            )
    u, lam_best = best
    fallback = QpSolution(
        minimizer=u / problem.scaling,
        lam_lower=lam_best[d:] * problem.scaling,
        lam_upper=lam_best[:d] * problem.scaling,
        kkt_residual=float(best_res),
        iterations=sweeps,
        dual_trace=tuple(trace),
    )
    raise ConvergenceError(
        f"box QP did not reach tol={tol:g} in {max_iter} sweeps "
        f"(best residual {best_res:.3g})",
        best=fallback,
        residual=float(best_res),
    )


def kkt_residual(problem, candidate, active_tol=1e-8):
    """KKT residual of a feasible candidate: max(stationarity, complementarity).

    Multipliers are recovered from the projected gradient at the bounds
    detected active within `active_tol` (in the scaled variable).  Raises
    FeasibilityError naming the first violated index if the candidate leaves
    the box by more than 1e-12 (scaled units).
    """
    x = np.asarray(candidate, dtype=float)
    u = problem.scaling * x
    lo, hi = problem.lower, problem.upper
    slack = 1e-12 * np.maximum(1.0, np.maximum(np.abs(lo), np.abs(hi)))
    below = u < lo - slack
    above = u > hi + slack
    if np.any(below) or np.any(above):
        idx = int(np.argmax(below | above))
        raise FeasibilityError(f"candidate violates bound {idx}", index=idx)

    grad = problem.hessian @ x + problem.gradient
    act = active_tol * np.maximum(1.0, np.maximum(np.abs(lo), np.abs(hi)))
    at_lower = u <= lo + act
    at_upper = u >= hi - act
    lam_lower = np.where(at_lower, np.maximum(grad, 0.0), 0.0)
    lam_upper = np.where(at_upper, np.maximum(-grad, 0.0), 0.0)
    stationarity = np.max(np.abs(grad - lam_lower + lam_upper), initial=0.0)
    complementarity = max(
        np.max(lam_lower * np.abs(u - lo), initial=0.0),
        np.max(lam_upper * np.abs(hi - u), initial=0.0),
    )
    return float(max(stationarity, complementarity))
