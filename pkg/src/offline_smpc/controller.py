"""Receding-horizon controller over a fixed artifact.

At state x the controller minimizes [x; v]' Q~ [x; v] over v subject to the
artifact's constraints (x, v) in D and D_R, and applies u = K x + v*_0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .artifact import ControllerArtifact
from .config import settings
from .optkernel import QuadraticProgram, StatusKind, solve_qp


class ControllerError(RuntimeError):
    """The QP solver failed numerically; distinct from an infeasible state."""


@dataclass(frozen=True)
class ControlDecision:
    u: np.ndarray | None
    v_star: np.ndarray | None
    objective: float | None
    status: StatusKind

    @property
    def feasible(self) -> bool:
        return self.status is StatusKind.OPTIMAL


class MPCController:
    """Online controller holding the last solution and a step counter."""

    def __init__(self, artifact: ControllerArtifact):
        self.artifact = artifact
        n = artifact.n
        cons = artifact.constraints
        Hv = cons.lhs[:, n:]
        # rows without a v-part only restrict x; they are checked directly
        has_v = np.linalg.norm(Hv, axis=1) > 0.0
        self._x_rows = (cons.lhs[~has_v, :n], cons.rhs[~has_v])
        self._Hx = cons.lhs[has_v, :n]
        self._Hv = Hv[has_v]
        self._h = cons.rhs[has_v]
        Qt = artifact.Qtilde
        self._Qxx = Qt[:n, :n]
        self._Qvx = Qt[n:, :n]
        self._hess = 2.0 * Qt[n:, n:]
        self._all = cons
        self.last_v = None
        self.k = 0
        self.last_status = None

    def solve(self, x) -> ControlDecision:
        """Pure solve at x; does not touch the controller state."""
        x = np.asarray(x, dtype=float).ravel()
        if x.shape != (self.artifact.n,) or not np.all(np.isfinite(x)):
            raise ValueError("state must be a finite vector of length n")
        Ax, bx = self._x_rows
        if bx.size:
            scale = 1.0 + np.abs(bx).max()
            if np.any(Ax @ x - bx > settings.feas_tol * scale):
                return ControlDecision(None, None, None, StatusKind.INFEASIBLE)
        qp = QuadraticProgram(self._hess, 2.0 * self._Qvx @ x, self._Hv, self._h - self._Hx @ x)
        res = solve_qp(qp)
        if res.kind is StatusKind.INFEASIBLE:
            return ControlDecision(None, None, None, StatusKind.INFEASIBLE)
        if res.kind is not StatusKind.OPTIMAL:
            raise ControllerError(f"QP solve failed: {res.kind.value} {res.message}")
        v = res.point
        m = self.artifact.m
        u = self.artifact.K @ x + v[:m]
        objective = float(res.objective + x @ self._Qxx @ x)
        return ControlDecision(u, v, objective, StatusKind.OPTIMAL)

    def step(self, x) -> ControlDecision:
        decision = self.solve(x)
        self.k += 1
        self.last_status = decision.status
        if decision.feasible:
            self.last_v = decision.v_star
        return decision

    def is_feasible(self, x, v) -> bool:
        """(x, v) inside D and D_R, with the global feasibility tolerance."""
        z = np.concatenate([np.asarray(x, dtype=float).ravel(), np.asarray(v, dtype=float).ravel()])
        if self._all.n_rows == 0:
            return True
        scale = 1.0 + np.abs(self._all.rhs).max()
        return bool(np.all(self._all.lhs @ z - self._all.rhs <= settings.feas_tol * scale))

    def shifted_candidate(self, v) -> np.ndarray:
        """(v_1, ..., v_{T-1}, 0)."""
        m = self.artifact.m
        v = np.asarray(v, dtype=float).ravel()
        return np.concatenate([v[m:], np.zeros(m)])


def value_function(artifact: ControllerArtifact, x, controller: MPCController | None = None):
    """Optimal value V_T(x), or None where the online QP is infeasible."""
    ctrl = controller if controller is not None else MPCController(artifact)
    decision = ctrl.solve(x)
    return decision.objective if decision.feasible else None
