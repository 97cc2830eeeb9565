"""Offline design: sampled constraint sets, redundancy removal, the T-step set,
its robust control invariant subset, the first-step constraint, the
stability certificate and the artifact that bundles them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.stats

from . import geometry
from .artifact import ControllerArtifact
from .config import parallel_map
from .controller import MPCController
from .geometry import Polytope, ResourceError
from .optkernel import min_eigenvalue
from .prediction import (
    DesignError,
    DesignSpec,
    build_cost_matrix,
    build_prediction,
    compute_terminal_P,
    compute_terminal_set,
    first_input_map,
)
from .uncertainty import (
    UncertaintyModel,
    closed_loop_vertices,
    draw_multisample,
    draw_q,
    realize,
    stream,
    subset_sample_count,
    vertex_bound,
)

RAW_ROW_CAP = 10_000_000
CP_LEVEL = 0.95


@dataclass(frozen=True)
class SampledConstraintSet:
    """Raw sampled rows over (x, v) in groups of one (family, row, stage)."""

    groups: tuple  # of Polytope, every row tagged
    budgets: tuple  # of dict, one per sampled group
    dim: int

    @property
    def polytope(self) -> Polytope:
        out = Polytope(np.zeros((0, self.dim)), np.zeros(0), ())
        for g in self.groups:
            out = out.intersect(g)
        return out

    @property
    def n_rows(self) -> int:
        return sum(g.n_rows for g in self.groups)


def _budget(family, row, stage, d, eps, delta, policy, count):
    formula = policy if policy != "min" else "min(subset_eq13, subset_eq14)"
    return {"family": family, "row": int(row), "stage": int(stage), "d": int(d), "eps": float(eps),
            "delta": float(delta), "formula": formula, "count": int(count)}


def _tagged(lhs, tag):
    lhs = np.atleast_2d(lhs)
    return Polytope(lhs, np.ones(lhs.shape[0]), (tag,) * lhs.shape[0])


def _unit_directions(m, count, rng):
    a = rng.standard_normal((count, m))
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def plan_budgets(spec: DesignSpec, X_T: Polytope) -> list:
    """Every sampled group with its decision dimension and sample count."""
    n, m, T, delta, policy = spec.n, spec.m, spec.T, spec.delta, spec.budget_policy
    plan = []
    for j, eps in enumerate(spec.eps_x):
        for l in range(1, T):
            d = n + l * m
            plan.append(_budget("state", j, l, d, eps, delta, policy, subset_sample_count(d, eps, delta, policy)))
    for j in range(spec.H_u.shape[0]):
        for l in range(1, T):
            d = n + l * m
            N = subset_sample_count(d, spec.eps_h, delta, policy)
            plan.append(_budget("input", j, l, d, spec.eps_h, delta, policy, N))
    for j in range(X_T.n_rows):
        d = n + T * m
        plan.append(_budget("terminal", j, T, d, spec.eps_h, delta, policy, subset_sample_count(d, spec.eps_h, delta, policy)))
    for j, eps in enumerate(spec.input_directions):
        plan.append(_budget("direction", j, 0, m, eps, delta, policy, subset_sample_count(m, eps, delta, policy)))
    return plan


def build_sampled_sets(model: UncertaintyModel, spec: DesignSpec, X_T: Polytope, seed: int) -> SampledConstraintSet:
    """Rows of the sampled state, input, terminal and direction constraint
    sets plus the unsampled hard rows on the applied input.

    Every (family, row, stage) group draws its own multisample from the
    stream keyed by (seed, family, row, stage).
    """
    n, m, T = spec.n, spec.m, spec.T
    dim = n + T * m
    plan = plan_budgets(spec, X_T)
    raw = sum(b["count"] for b in plan) + spec.H_u.shape[0]
    if raw > RAW_ROW_CAP:
        raise ResourceError(f"{raw} sampled rows exceed the cap of {RAW_ROW_CAP}; increase eps or shorten T")
    H_T = X_T.lhs / X_T.rhs[:, None] if X_T.n_rows else X_T.lhs

    def build(b):
        fam, j, l, N = b["family"], b["row"], b["stage"], b["count"]
        tag = (fam, l, j)
        if fam == "direction":
            a = _unit_directions(m, N, stream(seed, "direction", j))
            return _tagged(a @ first_input_map(spec.K, T, 0), tag)
        ms = draw_multisample(model, N, l, seed, fam, j, l)
        ens = build_prediction(model, ms.draws, spec.K, T)
        if fam == "state":
            return _tagged(spec.H_x[j] @ ens.state_rows(l), tag)
        if fam == "input":
            return _tagged(spec.H_u[j] @ ens.input_rows(l), tag)
        return _tagged(H_T[j] @ ens.state_rows(T), tag)

    groups = [build(b) for b in plan]
    G0 = first_input_map(spec.K, T, 0)
    for j in range(spec.H_u.shape[0]):
        groups.append(_tagged(spec.H_u[j] @ G0, ("hard_first_input", 0, j)))
    return SampledConstraintSet(tuple(groups), tuple(plan), dim)


def reduce(sset: SampledConstraintSet) -> Polytope:
    """D: the union of all groups with every redundant row removed.

    Groups are reduced on their own first (cheap, and most rows go there),
    then the union. Row tags survive.
    """
    reduced = parallel_map(geometry.remove_redundant, [g for g in sset.groups if g.n_rows])
    union = Polytope(np.zeros((0, sset.dim)), np.zeros(0), ())
    for g in reduced:
        union = union.intersect(g)
    if union.n_rows == 0:
        return union
    return geometry.remove_redundant(union)


@dataclass(frozen=True)
class FirstStepConstraint:
    C_T: Polytope
    C_inf: Polytope
    D_R: Polytope
    iterations: int


def first_step_rows(C_inf: Polytope, model: UncertaintyModel, spec: DesignSpec) -> Polytope:
    """H_inf A_cl^j x + H_inf B^j v_0 <= h_inf for every vertex j, over (x, v)."""
    n, m, T = spec.n, spec.m, spec.T
    blocks, rhs, tags = [], [], []
    for j, (Acl, B) in enumerate(closed_loop_vertices(model, spec.K)):
        H = np.zeros((C_inf.n_rows, n + T * m))
        H[:, :n] = C_inf.lhs @ Acl
        H[:, n : n + m] = C_inf.lhs @ B
        blocks.append(H)
        rhs.append(C_inf.rhs)
        tags.extend(("first_step", j, r) for r in range(C_inf.n_rows))
    if not blocks or C_inf.n_rows == 0:
        return Polytope(np.zeros((0, n + T * m)), np.zeros(0), ())
    return Polytope(np.vstack(blocks), np.concatenate(rhs), tuple(tags))


def build_first_step_constraint(D: Polytope, model: UncertaintyModel, spec: DesignSpec) -> FirstStepConstraint:
    n, m = spec.n, spec.m
    if geometry.is_empty(D):
        raise DesignError("sampled constraint set D is empty")
    C_T = geometry.project(D, range(n + m))
    verts = closed_loop_vertices(model, spec.K)
    res = geometry.max_robust_control_invariant(C_T, verts, n_state=n)
    if res.reason == "empty" or geometry.is_empty(res.polytope):
        raise DesignError("no robustly feasible region: the robust control invariant set is empty")
    if not res.converged:
        raise DesignError(f"robust control invariant recursion failed: {res.reason}")
    C_inf = res.polytope
    D_R = first_step_rows(C_inf, model, spec)
    if D_R.n_rows:
        D_R = geometry.remove_redundant(D_R)
    return FirstStepConstraint(C_T, C_inf, D_R, res.iterations)


# --------------------------------------------------------------------------- certificate


def stability_matrix(A, B, Q, R, P_l, P_u, eps_f):
    """Block matrix whose positive definiteness at vertex (A, B) certifies
    expected decrease despite candidate infeasibility with probability eps_f."""
    c = eps_f / (1.0 - eps_f)
    top = np.hstack([Q - c * (A.T @ P_u @ A - P_l), -c * A.T @ P_u @ B])
    bottom = np.hstack([-c * B.T @ P_u @ A, R - c * B.T @ P_u @ B])
    M = np.vstack([top, bottom])
    return 0.5 * (M + M.T)


def stability_certificate(model: UncertaintyModel, spec: DesignSpec, eps_f, P_l, P_u, extra=None) -> dict:
    if not 0.0 <= eps_f < 1.0:
        raise ValueError("eps_f must lie in [0, 1)")
    P_l = np.atleast_2d(P_l)
    P_u = np.atleast_2d(P_u)
    if min_eigenvalue(P_l) <= 0 or min_eigenvalue(P_u) <= 0:
        raise ValueError("P_l and P_u must be positive definite")
    eigs = []
    for A, B in vertex_bound(model).vertices:
        eigs.append(min_eigenvalue(stability_matrix(A, B, spec.Q, spec.R, P_l, P_u, eps_f)))
    failing = [j for j, e in enumerate(eigs) if not e > 0.0]
    record = {
        "eps_f": float(eps_f),
        "P_l": P_l.tolist(),
        "P_u": P_u.tolist(),
        "min_eigenvalues": [float(e) for e in eigs],
        "lambda_min": float(min(eigs)),
        "failing_vertices": failing,
        "passed": not failing,
        "conditional_on": "eps_f upper bound estimated from sampled probe transitions",
    }
    if extra:
        record.update(extra)
    return record


def clopper_pearson_upper(events: int, trials: int, level=CP_LEVEL) -> float:
    """One-sided upper confidence bound on a binomial rate."""
    if trials <= 0:
        raise ValueError("need at least one trial")
    if events >= trials:
        return 1.0
    return float(scipy.stats.beta.ppf(level, events + 1, trials - events))


def unconstrained_lower_bound(Qtilde, n):
    """P_l with x' P_l x = min_v [x; v]' Q~ [x; v] (Schur complement)."""
    Qxx, Qxv, Qvv = Qtilde[:n, :n], Qtilde[:n, n:], Qtilde[n:, n:]
    P = Qxx - Qxv @ np.linalg.solve(Qvv, Qxv.T)
    return 0.5 * (P + P.T)


@dataclass(frozen=True)
class BoundsEstimate:
    P_l: np.ndarray
    P_u: np.ndarray
    ratio: float
    eps_f: float
    eps_f_upper: float
    events: int
    trials: int
    seed: int


def probe_points(C_inf: Polytope, n_probe: int, rng, box_radius=10.0):
    """Vertices (dim <= 3) and ray-shot boundary points of C_inf; unbounded
    sets are clipped to a box first. Also returns interior points."""
    n = C_inf.dim
    region = C_inf.intersect(Polytope.box(-box_radius * np.ones(n), box_radius * np.ones(n)))
    region = Polytope(region.lhs, region.rhs)
    pts = []
    if n <= 3:
        pts.append(geometry.vertices(region))
    pts.append(geometry.boundary_points(region, n_probe, rng))
    inner = geometry.boundary_points(region, n_probe, rng, interior=True)
    return np.vstack(pts), inner


def estimate_bounds_and_epsf(artifact: ControllerArtifact, model: UncertaintyModel, n_probe: int, seed: int,
                             inflation=1.2) -> BoundsEstimate:
    """P_l, P_u = inflation * lambda * P_l and a sampled estimate of eps_f.

    lambda is the largest probed ratio V_T(x) / x' P_l x. eps_f counts probe
    transitions x -> x+ (one random q each) after which the shifted candidate
    (v*_1, ..., v*_{T-1}, 0) is infeasible; its Clopper-Pearson upper bound is
    what the certificate uses.
    """
    if n_probe < 1:
        raise ValueError("probe budget must be positive")
    n, m = artifact.n, artifact.m
    ctrl = MPCController(artifact)
    P_l = unconstrained_lower_bound(artifact.Qtilde, n)
    rng = stream(seed, "probe")
    boundary, inner = probe_points(artifact.C_inf, n_probe, rng)
    pts = np.vstack([boundary, inner])
    ratio = 1.0
    decisions = [ctrl.solve(x) for x in pts]
    for x, dec in zip(pts, decisions):
        quad = float(x @ P_l @ x)
        if dec.feasible and quad > 1e-12:
            ratio = max(ratio, dec.objective / quad)
    qs = draw_q(model, (len(pts),), stream(seed, "probe_q"))
    A, B = realize(model, qs)
    events = trials = 0
    for i, (x, dec) in enumerate(zip(pts, decisions)):
        if not dec.feasible:
            continue
        x_next = A[i] @ x + B[i] @ dec.u
        trials += 1
        if not ctrl.is_feasible(x_next, ctrl.shifted_candidate(dec.v_star)):
            events += 1
    if trials == 0:
        raise DesignError("no probe point admitted a feasible solution")
    return BoundsEstimate(P_l, inflation * ratio * P_l, ratio, events / trials,
                          clopper_pearson_upper(events, trials), events, trials, int(seed))


def certify(artifact: ControllerArtifact, model: UncertaintyModel, spec: DesignSpec, n_probe: int, seed: int) -> dict:
    est = estimate_bounds_and_epsf(artifact, model, n_probe, seed)
    extra = {"eps_f_estimate": est.eps_f, "eps_f_upper_cp95": est.eps_f_upper, "probe_events": est.events,
             "probe_trials": est.trials, "lambda": est.ratio, "inflation": 1.2, "probe_seed": int(seed),
             "n_probe": int(n_probe)}
    eps_used = est.eps_f_upper
    if eps_used >= 1.0:
        return {"eps_f": 1.0, "passed": False, "lambda_min": None, "min_eigenvalues": [],
                "failing_vertices": list(range(len(vertex_bound(model).vertices))), **extra}
    return stability_certificate(model, spec, eps_used, est.P_l, est.P_u, extra)


# --------------------------------------------------------------------------- pipeline


@dataclass
class DesignResult:
    artifact: ControllerArtifact
    sampled: SampledConstraintSet
    log: list = field(default_factory=list)


def _row_counts(p: Polytope) -> dict:
    counts = {}
    for tag in p.tags or ():
        fam = tag[0] if tag is not None else "untagged"
        counts[fam] = counts.get(fam, 0) + 1
    return dict(sorted(counts.items()))


def design(model: UncertaintyModel, spec: DesignSpec, seed: int = 0, mc_samples: int = 20_000,
           terminal_draws: int = 20_000, n_probe: int = 200, run_certificate: bool = True) -> DesignResult:
    """The complete offline design."""
    if model.n != spec.n or model.m != spec.m:
        raise ValueError("model and design spec dimensions disagree")
    log = []
    if spec.P is None:
        tw = compute_terminal_P(model, spec, n_draws=terminal_draws, seed=seed)
        spec = spec.with_P(tw.P)
        log.append(f"terminal weight: {tw.iterations} iterations, residual min eigenvalue {tw.residual_min_eig:.3e}")
    X_T = compute_terminal_set(model, spec)
    log.append(f"terminal set: {X_T.n_rows} rows")
    cost = build_cost_matrix(model, spec, mc_samples, seed)
    log.append(f"cost matrix: {'exact enumeration' if cost.exact else f'{mc_samples} Monte Carlo draws'}")
    sset = build_sampled_sets(model, spec, X_T, seed)
    for b in sset.budgets:
        log.append(f"budget {b['family']}[row {b['row']}, stage {b['stage']}]: d={b['d']} eps={b['eps']} "
                   f"delta={b['delta']} N={b['count']}")
    D = reduce(sset)
    log.append(f"rows: {sset.n_rows} sampled, {D.n_rows} after redundancy removal {_row_counts(D)}")
    fs = build_first_step_constraint(D, model, spec)
    log.append(f"T-step set: {fs.C_T.n_rows} rows; invariant set: {fs.C_inf.n_rows} rows after "
               f"{fs.iterations} iterations; first-step rows: {fs.D_R.n_rows}")
    n_sets = len(sset.budgets)
    stats = {
        "rows_sampled": sset.n_rows,
        "rows_reduced": D.n_rows,
        "rows_by_family": _row_counts(D),
        "rows_first_step": fs.D_R.n_rows,
        "invariance_iterations": fs.iterations,
        "cost_exact": cost.exact,
        "confidence_per_set": 1.0 - spec.delta,
        "sampled_sets": n_sets,
        "confidence_union_bound": max(0.0, 1.0 - n_sets * spec.delta),
    }
    art = ControllerArtifact(
        n=spec.n, m=spec.m, T=spec.T, K=spec.K, Q=spec.Q, R=spec.R, P=spec.P, Qtilde=cost.Qtilde,
        D=D, D_R=fs.D_R, C_T=fs.C_T, C_inf=fs.C_inf, X_T=X_T, H_x=spec.H_x, eps_x=spec.eps_x, H_u=spec.H_u,
        eps_h=spec.eps_h, delta=spec.delta, input_directions=spec.input_directions,
        seeds={"design": int(seed), "mc_samples": int(mc_samples), "terminal_draws": int(terminal_draws)},
        budgets=list(sset.budgets), stats=stats,
    )
    if run_certificate:
        art.certificate = certify(art, model, spec, n_probe, seed)
        c = art.certificate
        lam = "n/a" if c["lambda_min"] is None else f"{c['lambda_min']:.4g}"
        log.append(f"certificate: eps_f={c['eps_f']:.4g} lambda_min={lam} {'pass' if c['passed'] else 'FAIL'}")
    return DesignResult(art, sset, log)
