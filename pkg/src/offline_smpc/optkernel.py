"""Small dense LP / convex QP solving and definiteness checks.

LPs go through HiGHS (via scipy) with tightened tolerances. QPs with a
positive definite Hessian use the Goldfarb-Idnani dual active-set method
(quadprog); the positive semidefinite case, and any instance where the dual
method stalls, falls back to a primal active-set method started from an LP
phase-1 point.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import quadprog
import scipy.linalg
from scipy.optimize import linprog

from .config import settings


class InputError(ValueError):
    """Malformed problem data (shapes, non-finite entries, asymmetry)."""


class StatusKind(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class LinearProgram:
    cost: np.ndarray
    ineq_lhs: np.ndarray
    ineq_rhs: np.ndarray
    maximize: bool = False

    def __post_init__(self):
        cost = np.asarray(self.cost, dtype=float).ravel()
        lhs = np.asarray(self.ineq_lhs, dtype=float)
        rhs = np.asarray(self.ineq_rhs, dtype=float).ravel()
        if lhs.ndim != 2:
            lhs = lhs.reshape(len(rhs), cost.size)
        _check_dims(cost.size, lhs, rhs)
        object.__setattr__(self, "cost", cost)
        object.__setattr__(self, "ineq_lhs", lhs)
        object.__setattr__(self, "ineq_rhs", rhs)


@dataclass(frozen=True)
class QuadraticProgram:
    """min 1/2 z'Hz + c'z  s.t.  A z <= b."""

    hessian: np.ndarray
    linear: np.ndarray
    ineq_lhs: np.ndarray
    ineq_rhs: np.ndarray

    def __post_init__(self):
        hess = np.atleast_2d(np.asarray(self.hessian, dtype=float))
        lin = np.asarray(self.linear, dtype=float).ravel()
        lhs = np.asarray(self.ineq_lhs, dtype=float)
        rhs = np.asarray(self.ineq_rhs, dtype=float).ravel()
        if lhs.ndim != 2:
            lhs = lhs.reshape(len(rhs), lin.size)
        if hess.shape != (lin.size, lin.size):
            raise InputError(f"hessian shape {hess.shape} does not match {lin.size} variables")
        _check_dims(lin.size, lhs, rhs)
        scale = max(1.0, np.abs(hess).max(initial=0.0))
        if np.abs(hess - hess.T).max(initial=0.0) > settings.symmetry_tol * scale:
            raise InputError("hessian is not symmetric")
        hess = 0.5 * (hess + hess.T)
        if lin.size and min_eigenvalue(hess) < -1e-8 * np.linalg.norm(hess, 2):
            raise InputError("hessian is not positive semidefinite")
        object.__setattr__(self, "hessian", hess)
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "ineq_lhs", lhs)
        object.__setattr__(self, "ineq_rhs", rhs)


@dataclass(frozen=True)
class SolveStatus:
    kind: StatusKind
    objective: float | None = None
    point: np.ndarray | None = None
    # Lagrange multipliers of the inequality rows (QP only)
    multipliers: np.ndarray | None = None
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.kind is StatusKind.OPTIMAL


def _check_dims(n_vars, lhs, rhs):
    if lhs.shape != (rhs.size, n_vars):
        raise InputError(f"constraint matrix {lhs.shape} inconsistent with {rhs.size} rows x {n_vars} vars")
    if not (np.all(np.isfinite(lhs)) and np.all(np.isfinite(rhs))):
        raise InputError("constraint data must be finite")


def _highs_options():
    return {
        "primal_feasibility_tolerance": 1e-10,
        "dual_feasibility_tolerance": 1e-10,
        "maxiter": settings.lp_max_iter,
    }


def _raw_linprog(cost, lhs, rhs):
    n = cost.size
    if lhs.shape[0] == 0:
        lhs, rhs = np.zeros((1, n)), np.zeros(1)
    return linprog(
        cost,
        A_ub=lhs,
        b_ub=rhs,
        bounds=[(None, None)] * n,
        method="highs",
        options=_highs_options(),
    )


def solve_lp(lp: LinearProgram) -> SolveStatus:
    sign = -1.0 if lp.maximize else 1.0
    n = lp.cost.size
    if n == 0:
        if np.any(lp.ineq_rhs < -settings.feas_tol):
            return SolveStatus(StatusKind.INFEASIBLE)
        return SolveStatus(StatusKind.OPTIMAL, 0.0, np.zeros(0))
    res = _raw_linprog(sign * lp.cost, lp.ineq_lhs, lp.ineq_rhs)
    if res.status == 0:
        x = np.asarray(res.x, dtype=float)
        return SolveStatus(StatusKind.OPTIMAL, float(lp.cost @ x), x)
    if res.status == 1:
        return SolveStatus(StatusKind.NUMERICAL_FAILURE, message=res.message)
    if res.status in (2, 3):
        # HiGHS may report "infeasible or unbounded"; disambiguate with a pure feasibility solve
        feas = _raw_linprog(np.zeros(n), lp.ineq_lhs, lp.ineq_rhs)
        if feas.status == 0:
            return SolveStatus(StatusKind.UNBOUNDED, message=res.message)
        if feas.status == 2:
            return SolveStatus(StatusKind.INFEASIBLE, message=feas.message)
    return SolveStatus(StatusKind.NUMERICAL_FAILURE, message=res.message)


def min_eigenvalue(m) -> float:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.shape[0] != m.shape[1]:
        raise InputError("matrix must be square")
    scale = max(1.0, np.abs(m).max(initial=0.0))
    if np.abs(m - m.T).max(initial=0.0) > settings.symmetry_tol * scale:
        raise InputError("matrix is not symmetric")
    if m.size == 0:
        return float("inf")
    return float(np.linalg.eigvalsh(0.5 * (m + m.T))[0])


def kkt_residuals(qp: QuadraticProgram, z, lam):
    """(stationarity, complementarity, primal infeasibility, dual infeasibility)."""
    H, c, A, b = qp.hessian, qp.linear, qp.ineq_lhs, qp.ineq_rhs
    slack = b - A @ z
    stat = H @ z + c + A.T @ lam
    return (
        float(np.abs(stat).max(initial=0.0)),
        float(np.abs(lam * slack).max(initial=0.0)),
        float(max(0.0, -slack.min(initial=0.0))),
        float(max(0.0, -lam.min(initial=0.0))),
    )


def _kkt_ok(qp, z, lam, feas_slack=0.0):
    stat, comp, primal, dual = kkt_residuals(qp, z, lam)
    scale = 1.0 + max(np.abs(qp.linear).max(initial=0.0), np.abs(qp.hessian).max(initial=0.0) * (1.0 + np.abs(z).max(initial=0.0)))
    bscale = 1.0 + np.abs(qp.ineq_rhs).max(initial=0.0)
    tol = settings.kkt_tol
    return (
        stat <= tol * scale
        and comp <= tol * scale * bscale
        and dual <= tol * scale
        and primal <= settings.feas_tol * bscale + feas_slack
    )


def _objective(qp, z):
    return float(0.5 * z @ qp.hessian @ z + qp.linear @ z)


def phase_one(A, b):
    """Minimal uniform relaxation ``s >= 0`` with ``A z <= b + s`` feasible.

    Returns ``(s, z)``; ``s == 0`` means the rows are feasible as given.
    """
    n = A.shape[1]
    if A.shape[0] == 0:
        return 0.0, np.zeros(n)
    norms = np.maximum(np.linalg.norm(A, axis=1), 1.0)
    lhs = np.hstack([A, -norms[:, None]])
    lhs = np.vstack([lhs, np.eye(1, n + 1, n) * -1.0])
    rhs = np.append(b, 0.0)
    cost = np.zeros(n + 1)
    cost[-1] = 1.0
    res = _raw_linprog(cost, lhs, rhs)
    if res.status != 0:
        raise ArithmeticError(f"phase-1 LP failed: {res.message}")
    z = np.asarray(res.x[:n], dtype=float)
    viol = float(max(0.0, (A @ z - b).max(initial=0.0)))
    return viol, z


def _null_space(M, n):
    if M.shape[0] == 0:
        return np.eye(n)
    return scipy.linalg.null_space(M, rcond=1e-12)


def primal_active_set(qp: QuadraticProgram, z0, max_iter=None):
    """Primal active-set method for convex (possibly singular) QPs.

    ``z0`` must be feasible. Returns ``(kind, z, lam)``.
    """
    H, c, A, b = qp.hessian, qp.linear, qp.ineq_lhs, qp.ineq_rhs
    n = c.size
    max_iter = max_iter or settings.qp_max_iter
    z = np.array(z0, dtype=float)
    work: list[int] = []
    hscale = max(1.0, np.abs(H).max(initial=0.0))
    zero_steps = 0
    for _ in range(max_iter):
        g = H @ z + c
        Aw = A[work]
        Z = _null_space(Aw, n)
        p = np.zeros(n)
        alpha_cap = 1.0
        if Z.shape[1]:
            Hz = Z.T @ H @ Z
            gz = Z.T @ g
            w, V = np.linalg.eigh(0.5 * (Hz + Hz.T))
            flat = w <= 1e-10 * hscale
            g_flat = V[:, flat] @ (V[:, flat].T @ gz)
            if np.linalg.norm(g_flat) > 1e-12 * (1.0 + np.linalg.norm(g)):
                p = -Z @ g_flat
                alpha_cap = np.inf
            else:
                inv = np.where(flat, 0.0, 1.0 / np.where(flat, 1.0, w))
                p = -Z @ (V @ (inv * (V.T @ gz)))
        if np.linalg.norm(p) <= 1e-13 * (1.0 + np.linalg.norm(z)):
            if not work:
                return StatusKind.OPTIMAL, z, np.zeros(A.shape[0])
            lam_w, *_ = np.linalg.lstsq(Aw.T, -g, rcond=None)
            if lam_w.min() >= -1e-12 * (1.0 + np.abs(lam_w).max()):
                lam = np.zeros(A.shape[0])
                lam[work] = np.maximum(lam_w, 0.0)
                return StatusKind.OPTIMAL, z, lam
            # Bland-style choice once degenerate steps pile up
            if zero_steps > 2 * n + 10:
                drop = min(i for i, li in zip(work, lam_w) if li < 0)
            else:
                drop = work[int(np.argmin(lam_w))]
            work.remove(drop)
            continue
        Ap = A @ p
        slack = np.maximum(b - A @ z, 0.0)
        mask = Ap > 1e-12 * np.linalg.norm(p) * np.maximum(np.linalg.norm(A, axis=1), 1e-300)
        if work:
            mask[work] = False
        alpha, block = alpha_cap, -1
        if np.any(mask):
            idx = np.flatnonzero(mask)
            ratios = slack[idx] / Ap[idx]
            rmin = ratios.min()
            if rmin < alpha:
                alpha = rmin
                block = int(idx[np.flatnonzero(ratios <= rmin)[0]])
        if not np.isfinite(alpha):
            return StatusKind.UNBOUNDED, z, None
        zero_steps = zero_steps + 1 if alpha <= 0.0 else 0
        z = z + alpha * p
        if block >= 0:
            work.append(block)
    return StatusKind.NUMERICAL_FAILURE, z, None


def _dual_active_set(qp):
    H, c, A, b = qp.hessian, qp.linear, qp.ineq_lhs, qp.ineq_rhs
    try:
        if A.shape[0]:
            z, _, _, _, lam, _ = quadprog.solve_qp(H, -c, -A.T, -b, 0)
        else:
            z, _, _, _, lam, _ = quadprog.solve_qp(H, -c, np.zeros((c.size, 1)), -np.ones(1), 0)
            lam = np.zeros(0)
    except ValueError:
        return None
    return np.asarray(z, dtype=float), np.asarray(lam, dtype=float)


def _is_pd(H):
    if H.size == 0:
        return True
    try:
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        return False
    return min_eigenvalue(H) > 1e-10 * max(1.0, np.abs(H).max())


def solve_qp(qp: QuadraticProgram, warm_start=None) -> SolveStatus:
    """Solve a convex QP.

    Rows infeasible by no more than the feasibility tolerance are relaxed by
    that minimal amount instead of being reported infeasible.
    """
    n = qp.linear.size
    A, b = qp.ineq_lhs, qp.ineq_rhs
    bscale = 1.0 + np.abs(b).max(initial=0.0)
    if n == 0:
        if np.any(b < -settings.feas_tol * bscale):
            return SolveStatus(StatusKind.INFEASIBLE)
        return SolveStatus(StatusKind.OPTIMAL, 0.0, np.zeros(0), np.zeros(b.size))
    if _is_pd(qp.hessian):
        out = _dual_active_set(qp)
        if out is not None:
            z, lam = out
            if _kkt_ok(qp, z, lam):
                return SolveStatus(StatusKind.OPTIMAL, _objective(qp, z), z, lam)
    # primal route: needs a feasible start
    start = None
    if warm_start is not None:
        w = np.asarray(warm_start, dtype=float)
        if w.shape == (n,) and (A @ w - b).max(initial=0.0) <= 0.0:
            start = w
    relax = 0.0
    if start is None:
        viol, start = phase_one(A, b)
        if viol > settings.feas_tol * bscale:
            return SolveStatus(StatusKind.INFEASIBLE, message=f"minimal violation {viol:.3e}")
        if viol > 0.0:
            relax = viol
    work_qp = qp if relax == 0.0 else QuadraticProgram(qp.hessian, qp.linear, A, b + relax)
    # tiny residual infeasibility of the LP point is absorbed here
    shift = float(max(0.0, (A @ start - work_qp.ineq_rhs).max(initial=0.0)))
    if shift > 0.0:
        relax += shift
        work_qp = QuadraticProgram(qp.hessian, qp.linear, A, b + relax)
    kind, z, lam = primal_active_set(work_qp, start)
    if kind is StatusKind.UNBOUNDED:
        return SolveStatus(StatusKind.UNBOUNDED)
    if kind is not StatusKind.OPTIMAL:
        return SolveStatus(StatusKind.NUMERICAL_FAILURE, message="active-set iteration limit")
    if not _kkt_ok(qp, z, lam, feas_slack=relax):
        return SolveStatus(StatusKind.NUMERICAL_FAILURE, message="KKT residual above tolerance")
    return SolveStatus(StatusKind.OPTIMAL, _objective(qp, z), z, lam)
