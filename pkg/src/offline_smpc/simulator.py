"""Closed-loop Monte Carlo campaigns: constraint-violation statistics,
recursive-feasibility and Lyapunov monitoring, and an online scenario MPC
baseline that redraws its scenarios at every step.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.stats

from . import geometry
from .artifact import ControllerArtifact
from .config import parallel_map
from .controller import MPCController
from .designer import clopper_pearson_upper
from .geometry import Polytope
from .optkernel import QuadraticProgram, StatusKind, solve_qp
from .plants import direction_violation_probability
from .prediction import build_prediction, first_input_map
from .uncertainty import SampleBudget, UncertaintyModel, draw_q, realize, sample_count, stream, vertex_bound

SUMMARY_VERSION = "offline-smpc-summary/1"
TRAJECTORY_VERSION = "offline-smpc-trajectory/1"
DISTURBANCES = ("stochastic", "vertex_random", "vertex_adversarial")
X0_MODES = ("interior", "boundary", "mixed")


class CampaignError(ValueError):
    pass


@dataclass
class Campaign:
    artifact: ControllerArtifact
    model: UncertaintyModel
    n_rollouts: int = 100
    steps: int = 50
    seed: int = 0
    disturbance: str = "stochastic"
    x0: np.ndarray | None = None  # explicit initial states, one per row
    x0_mode: str = "mixed"
    threshold: float = 1e-3
    direction_checks: int = 1  # fresh random directions per step and family
    baseline: bool = False


@dataclass
class RolloutRecord:
    states: np.ndarray  # (k+1, n)
    inputs: np.ndarray  # (k, m)
    q: np.ndarray  # (k, n_q) realized parameters
    values: np.ndarray  # (k+1,) V_T at each visited state, nan when infeasible
    statuses: list  # per solve
    violations: np.ndarray  # (k+1, p) state rows exceeded, row 0 is the initial state
    hard_excess: np.ndarray  # (k,) max over rows of H_u u - 1
    candidate_feasible: np.ndarray  # (k,) shifted candidate feasible at the successor
    direction_violations: np.ndarray  # (k, n_dir) fresh-direction checks violated
    direction_probability: np.ndarray  # (k, n_dir) exact violation probability of u_k
    rows_per_solve: int = 0
    infeasible: bool = False


@dataclass
class CampaignResult:
    summary: dict
    records: list
    timing: dict = field(default_factory=dict)


# --------------------------------------------------------------------------- initial states


def sample_initial_states(artifact: ControllerArtifact, n: int, seed: int, mode="mixed", shrink=1e-6):
    """Points of C_inf: ray-shot boundary points pulled inwards by ``shrink``
    (relative), interior points, or half of each."""
    if mode not in X0_MODES:
        raise CampaignError(f"unknown x0 mode {mode!r}")
    rng = stream(seed, "x0")
    region = artifact.C_inf
    if region.n_rows == 0 or not np.isfinite(_extent(region)):
        region = region.intersect(Polytope.box(-np.ones(artifact.n), np.ones(artifact.n)))
        region = Polytope(region.lhs, region.rhs)
    center, _ = geometry.chebyshev_center(region, radius_cap=1e6)
    n_b = {"boundary": n, "interior": 0, "mixed": n // 2}[mode]
    pts = []
    if n_b:
        b = geometry.boundary_points(region, n_b, rng)
        pts.append(center + (1.0 - shrink) * (b - center))
    if n - n_b:
        pts.append(geometry.boundary_points(region, n - n_b, rng, interior=True))
    return np.vstack(pts)


def _extent(p: Polytope):
    try:
        return max(geometry.support(p, d) for d in np.vstack([np.eye(p.dim), -np.eye(p.dim)]))
    except geometry.EmptyPolytopeError:
        return -np.inf


# --------------------------------------------------------------------------- rollouts


def _direction_rows(artifact, rng, count):
    m = artifact.m
    a = rng.standard_normal((len(artifact.input_directions), count, m))
    return a / np.linalg.norm(a, axis=-1, keepdims=True)


def _adversarial_vertex(artifact, verts, x, u):
    """Vertex pushing the successor closest to (or furthest out of) C_inf."""
    succ = [A @ x + B @ u for A, B in verts]
    C = artifact.C_inf
    if C.n_rows:
        norms = np.linalg.norm(C.lhs, axis=1)
        score = [np.max((C.lhs @ s - C.rhs) / norms) for s in succ]
    else:
        score = [float(s @ artifact.P @ s) for s in succ]
    return int(np.argmax(score))


class _Stepper:
    """Chooses the parameter realization of each step."""

    def __init__(self, c: Campaign):
        self.c = c
        vb = vertex_bound(c.model)
        self.verts = vb.vertices
        self.q_verts = vb.q_vertices

    def __call__(self, r, k, x, u):
        c = self.c
        rng = stream(c.seed, "disturbance", r, k)
        if c.disturbance == "stochastic":
            q = draw_q(c.model, (), rng)
        elif c.disturbance == "vertex_random":
            q = self.q_verts[rng.integers(len(self.q_verts))]
        else:
            q = self.q_verts[_adversarial_vertex(c.artifact, self.verts, x, u)]
        return np.asarray(q, dtype=float)


def _rollout(c: Campaign, r: int, x0, solve_fn, stepper, ctrl: MPCController):
    art = c.artifact
    n, m = art.n, art.m
    n_dir = len(art.input_directions)
    K = c.steps
    xs, us, qs, vals, stats = [np.asarray(x0, dtype=float)], [], [], [], []
    hard, cand, dviol, dprob = [], [], [], []
    rows_used = 0
    infeasible = False
    x = xs[0]
    dec = solve_fn(x, r, 0)
    for k in range(K):
        stats.append(dec.status.value)
        if not dec.feasible:
            vals.append(np.nan)
            infeasible = True
            break
        vals.append(dec.objective)
        rows_used = max(rows_used, getattr(dec, "rows", 0))
        u = dec.u
        q = stepper(r, k, x, u)
        A, B = realize(c.model, q)
        x_next = A @ x + B @ u
        hard.append(float(np.max(art.H_u @ u - 1.0)) if art.H_u.shape[0] else -np.inf)
        cand.append(ctrl.is_feasible(x_next, ctrl.shifted_candidate(dec.v_star)))
        if n_dir:
            a = _direction_rows(art, stream(c.seed, "direction_check", r, k), c.direction_checks)
            dviol.append(np.any(a @ u > 1.0, axis=1))
            dprob.append(np.full(n_dir, float(direction_violation_probability(u)[0])))
        us.append(u)
        qs.append(np.atleast_1d(q))
        xs.append(x_next)
        x = x_next
        dec = solve_fn(x, r, k + 1)
    if not infeasible:
        stats.append(dec.status.value)
        vals.append(dec.objective if dec.feasible else np.nan)
        infeasible = not dec.feasible
    states = np.array(xs)
    viol = (states @ art.H_x.T > 1.0) if art.H_x.shape[0] else np.zeros((len(xs), 0), dtype=bool)
    return RolloutRecord(
        states=states,
        inputs=np.array(us).reshape(-1, m),
        q=np.array(qs).reshape(len(us), -1),
        values=np.array(vals, dtype=float),
        statuses=stats,
        violations=viol,
        hard_excess=np.array(hard, dtype=float),
        candidate_feasible=np.array(cand, dtype=bool),
        direction_violations=np.array(dviol, dtype=bool).reshape(len(us), n_dir),
        direction_probability=np.array(dprob, dtype=float).reshape(len(us), n_dir),
        rows_per_solve=rows_used,
        infeasible=infeasible,
    )


@dataclass(frozen=True)
class _Decision:
    u: np.ndarray | None
    v_star: np.ndarray | None
    objective: float | None
    status: StatusKind
    rows: int = 0

    @property
    def feasible(self):
        return self.status is StatusKind.OPTIMAL


def _check_campaign(c: Campaign):
    if c.disturbance not in DISTURBANCES:
        raise CampaignError(f"unknown disturbance mode {c.disturbance!r}")
    if c.n_rollouts < 1 or c.steps < 1:
        raise CampaignError("need at least one rollout and one step")
    if c.model.n != c.artifact.n or c.model.m != c.artifact.m:
        raise CampaignError("model and artifact dimensions disagree")


def _initial_states(c: Campaign):
    if c.x0 is None:
        return sample_initial_states(c.artifact, c.n_rollouts, c.seed, c.x0_mode)
    x0 = np.atleast_2d(np.asarray(c.x0, dtype=float))
    if x0.shape[1] != c.artifact.n:
        raise CampaignError("initial states have the wrong dimension")
    reps = math.ceil(c.n_rollouts / len(x0))
    return np.tile(x0, (reps, 1))[: c.n_rollouts]


def run_campaign(c: Campaign) -> CampaignResult:
    """Closed-loop rollouts of the artifact controller.

    Initial states outside C_inf are rejected. A rollout stops at the first
    infeasible QP, which is counted (it must never happen from C_inf).
    """
    _check_campaign(c)
    x0s = _initial_states(c)
    for i, x0 in enumerate(x0s):
        if not geometry.contains(c.artifact.C_inf, x0, tol=1e-7):
            raise CampaignError(f"initial state {i} lies outside C_inf")
    ctrl = MPCController(c.artifact)
    stepper = _Stepper(c)
    rows = c.artifact.constraints.n_rows

    def solve_fn(x, r, k):
        d = ctrl.solve(x)
        return _Decision(d.u, d.v_star, d.objective, d.status, rows)

    t0 = time.perf_counter()
    records = parallel_map(lambda r: _rollout(c, r, x0s[r], solve_fn, stepper, ctrl), range(c.n_rollouts))
    elapsed = time.perf_counter() - t0
    n_solves = sum(len(rec.statuses) for rec in records)
    summary = summarize(c, records, controller="offline")
    return CampaignResult(summary, records, {"seconds": elapsed, "solves": n_solves,
                                             "seconds_per_solve": elapsed / max(1, n_solves)})


# --------------------------------------------------------------------------- online scenario baseline


def baseline_sample_count(artifact: ControllerArtifact, eps=None, delta=None) -> int:
    """Scenario count for the online program: d = T m, eps = the smallest
    risk level in the problem."""
    if eps is None:
        levels = list(artifact.eps_x) + [artifact.eps_h] + list(artifact.input_directions)
        eps = min(levels)
    delta = artifact.delta if delta is None else delta
    return sample_count(SampleBudget(artifact.T * artifact.m, eps, delta, "scenario_eq7"))


def scenario_rows(artifact: ControllerArtifact, model: UncertaintyModel, q):
    """Rows over (x, v) of the scenario program for draws q of shape (N, T, n_q)."""
    T, K = artifact.T, artifact.K
    ens = build_prediction(model, q, K, T)
    blocks = []
    for l in range(1, T):
        if artifact.H_x.shape[0]:
            blocks.append(np.einsum("jn,snd->sjd", artifact.H_x, ens.state_rows(l)).reshape(-1, ens.state_rows(l).shape[-1]))
    for l in range(T):
        if artifact.H_u.shape[0]:
            U = ens.input_rows(l) if l else np.broadcast_to(first_input_map(K, T, 0), ens.input_rows(0).shape)
            blocks.append(np.einsum("jm,smd->sjd", artifact.H_u, U).reshape(-1, U.shape[-1]))
    if artifact.X_T.n_rows:
        H_T = artifact.X_T.lhs / artifact.X_T.rhs[:, None]
        S = ens.state_rows(T)
        blocks.append(np.einsum("jn,snd->sjd", H_T, S).reshape(-1, S.shape[-1]))
    H = np.vstack(blocks) if blocks else np.zeros((0, artifact.n + T * artifact.m))
    return H, np.ones(H.shape[0])


def run_online_scenario_baseline(c: Campaign, n_scenarios=None) -> CampaignResult:
    """Receding-horizon scenario MPC with fresh scenarios at every step and
    the same cost matrix. Infeasible steps end the rollout and are logged."""
    _check_campaign(c)
    art = c.artifact
    n = art.n
    N_s = baseline_sample_count(art) if n_scenarios is None else int(n_scenarios)
    x0s = _initial_states(c)
    ctrl = MPCController(art)
    stepper = _Stepper(c)
    Qt = art.Qtilde
    hess = 2.0 * Qt[n:, n:]

    def solve_fn(x, r, k):
        q = draw_q(c.model, (N_s, art.T), stream(c.seed, "baseline", r, k))
        H, h = scenario_rows(art, c.model, q)
        qp = QuadraticProgram(hess, 2.0 * Qt[n:, :n] @ x, H[:, n:], h - H[:, :n] @ x)
        res = solve_qp(qp)
        if res.kind is not StatusKind.OPTIMAL:
            return _Decision(None, None, None, StatusKind.INFEASIBLE, H.shape[0])
        u = art.K @ x + res.point[: art.m]
        return _Decision(u, res.point, float(res.objective + x @ Qt[:n, :n] @ x), StatusKind.OPTIMAL, H.shape[0])

    t0 = time.perf_counter()
    records = parallel_map(lambda r: _rollout(c, r, x0s[r], solve_fn, stepper, ctrl), range(c.n_rollouts))
    elapsed = time.perf_counter() - t0
    n_solves = sum(len(rec.statuses) for rec in records)
    summary = summarize(c, records, controller="online_scenario")
    summary["baseline"] = {"n_scenarios": N_s, "rows_per_solve": max(rec.rows_per_solve for rec in records),
                           "artifact_rows": art.constraints.n_rows}
    return CampaignResult(summary, records, {"seconds": elapsed, "solves": n_solves,
                                             "seconds_per_solve": elapsed / max(1, n_solves)})


# --------------------------------------------------------------------------- statistics


def binomial_interval(events: int, trials: int, level=0.95):
    """Two-sided Clopper-Pearson interval."""
    if trials == 0:
        return 0.0, 1.0
    a = 1.0 - level
    lo = 0.0 if events == 0 else float(scipy.stats.beta.ppf(a / 2, events, trials - events + 1))
    hi = 1.0 if events == trials else float(scipy.stats.beta.ppf(1 - a / 2, events + 1, trials - events))
    return lo, hi


def _rate_table(flags_per_rollout, eps, start_step):
    """Per-step violation statistics from per-rollout boolean sequences."""
    steps = max((len(f) for f in flags_per_rollout), default=0)
    table = []
    passed = True
    for k in range(start_step, steps):
        col = [bool(f[k]) for f in flags_per_rollout if len(f) > k]
        trials, events = len(col), int(sum(col))
        rate = events / trials
        limit = eps + 3.0 * math.sqrt(eps * (1.0 - eps) / trials)
        lo, hi = binomial_interval(events, trials)
        ok = rate <= limit
        passed &= ok
        table.append({"step": k, "events": events, "trials": trials, "rate": rate, "ci95": [lo, hi],
                      "limit": limit, "passed": ok})
    return table, passed


def _mean_se(values):
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return 0.0, 0.0, 0
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se, int(v.size)


def summarize(c: Campaign, records, controller="offline") -> dict:
    art = c.artifact
    Q, R = art.Q, art.R
    infeasible = sum(rec.infeasible for rec in records)
    out = {
        "format_version": SUMMARY_VERSION,
        "controller": controller,
        "seed": int(c.seed),
        "n_rollouts": int(c.n_rollouts),
        "steps": int(c.steps),
        "disturbance": c.disturbance,
        "x0_mode": "explicit" if c.x0 is not None else c.x0_mode,
        "infeasible_solves": int(infeasible),
        "recursive_feasibility_passed": infeasible == 0,
    }
    rows = []
    all_ok = True
    for j, eps in enumerate(art.eps_x):
        table, ok = _rate_table([rec.violations[:, j] for rec in records], float(eps), 1)
        rows.append({"row": j, "eps": float(eps), "passed": ok,
                     "max_rate": max((t["rate"] for t in table), default=0.0), "per_step": table})
        all_ok &= ok
    out["state_chance_constraints"] = {"rows": rows, "passed": all_ok,
                                       "gated": c.disturbance == "stochastic"}
    excess = [float(rec.hard_excess.max()) for rec in records if rec.hard_excess.size]
    worst = max(excess, default=-math.inf)
    out["hard_input"] = {"max_excess": worst if np.isfinite(worst) else None, "passed": worst <= 1e-8}
    if art.input_directions:
        fams = []
        for j, eps in enumerate(art.input_directions):
            table, ok = _rate_table([rec.direction_violations[:, j] for rec in records], float(eps), 0)
            probs = np.concatenate([rec.direction_probability[:, j] for rec in records])
            fams.append({"family": j, "eps": float(eps), "passed": ok,
                         "max_rate": max((t["rate"] for t in table), default=0.0),
                         "max_exact_probability": float(probs.max()) if probs.size else 0.0,
                         "per_step": table})
        out["direction_chance_constraints"] = {"families": fams, "passed": all(f["passed"] for f in fams)}
    events = sum(int((~rec.candidate_feasible).sum()) for rec in records)
    trials = sum(int(rec.candidate_feasible.size) for rec in records)
    out["eps_f"] = {"events": events, "trials": trials, "rate": events / trials if trials else 0.0,
                    "upper_cp95": clopper_pearson_upper(events, trials) if trials else 1.0}
    drift_all, drift_cand = [], []
    for rec in records:
        for k in range(len(rec.inputs)):
            if not (np.isfinite(rec.values[k]) and np.isfinite(rec.values[k + 1])):
                continue
            x, u = rec.states[k], rec.inputs[k]
            d = rec.values[k + 1] - rec.values[k] + x @ Q @ x + u @ R @ u
            drift_all.append(d)
            if rec.candidate_feasible[k]:
                drift_cand.append(d)
    mean_c, se_c, n_c = _mean_se(drift_cand)
    mean_a, se_a, n_a = _mean_se(drift_all)
    out["lyapunov"] = {"mean_drift_candidate_feasible": mean_c, "se_candidate_feasible": se_c,
                       "n_candidate_feasible": n_c, "mean_drift_all": mean_a, "se_all": se_a, "n_all": n_a,
                       "passed": mean_c <= 3.0 * se_c}
    reached = [bool(np.any(np.linalg.norm(rec.states, axis=1) < c.threshold)) for rec in records]
    final = [float(np.linalg.norm(rec.states[-1])) for rec in records]
    out["convergence"] = {"threshold": c.threshold, "fraction_reached": float(np.mean(reached)),
                          "median_final_norm": float(np.median(final)), "max_final_norm": float(np.max(final))}
    gate_cc = c.disturbance == "stochastic"
    suite = out["recursive_feasibility_passed"] and out["hard_input"]["passed"]
    if gate_cc:
        suite = suite and all_ok and out.get("direction_chance_constraints", {"passed": True})["passed"]
    out["statistical_suite_passed"] = bool(suite)
    return out


def estimate_epsf_closed_loop(c: Campaign) -> dict:
    """Rate of infeasible shifted candidates along closed-loop rollouts."""
    return run_campaign(c).summary["eps_f"]


# --------------------------------------------------------------------------- export


def write_summary(summary: dict, path) -> None:
    Path(path).write_text(json.dumps(summary, sort_keys=True, indent=1, allow_nan=False) + "\n")


def trajectory_header(n, m, p, n_dir):
    cols = ["rollout", "k"] + [f"x{i}" for i in range(n)] + [f"u{i}" for i in range(m)]
    cols += ["V_T", "status"] + [f"viol{j}" for j in range(p)] + [f"dir_viol{j}" for j in range(n_dir)]
    return cols + ["candidate_feasible"]


def write_trajectories(records, artifact: ControllerArtifact, path) -> None:
    """One row per visited state; input and flag columns are empty at the
    last state of a rollout."""
    n, m, p, n_dir = artifact.n, artifact.m, artifact.H_x.shape[0], len(artifact.input_directions)
    with open(path, "w", newline="") as fh:
        fh.write(f"# {TRAJECTORY_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trajectory_header(n, m, p, n_dir))
        for r, rec in enumerate(records):
            for k in range(len(rec.states)):
                has_u = k < len(rec.inputs)
                row = [r, k] + [repr(float(v)) for v in rec.states[k]]
                row += [repr(float(v)) for v in rec.inputs[k]] if has_u else [""] * m
                val = rec.values[k] if k < len(rec.values) else np.nan
                row += ["" if not np.isfinite(val) else repr(float(val))]
                row += [rec.statuses[k] if k < len(rec.statuses) else ""]
                row += [int(v) for v in rec.violations[k]]
                row += [int(v) for v in rec.direction_violations[k]] if has_u else [""] * n_dir
                row += [int(rec.candidate_feasible[k])] if has_u else [""]
                w.writerow(row)


def replay_states(model: UncertaintyModel, record: RolloutRecord) -> np.ndarray:
    """States regenerated from the recorded inputs and parameters."""
    xs = [record.states[0]]
    for u, q in zip(record.inputs, record.q):
        A, B = realize(model, q)
        xs.append(A @ xs[-1] + B @ u)
    return np.array(xs)


__all__ = [
    "Campaign",
    "CampaignResult",
    "RolloutRecord",
    "run_campaign",
    "run_online_scenario_baseline",
    "estimate_epsf_closed_loop",
    "sample_initial_states",
    "write_summary",
    "write_trajectories",
    "replay_states",
]
