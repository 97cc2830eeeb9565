"""H-representation polytopes {x | Hx <= h}.

Redundancy removal follows the row-by-row LP test (maximize a row over all
the others). For large row counts the candidates are first pruned through the
polar dual: after translating a strictly interior point to the origin, row i
is irredundant iff its polar point h_i'^{-1} H_i is a vertex of
conv({0} U {polar points}), which qhull finds quickly. The LP test then
certifies every surviving candidate.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .config import parallel_map, settings
from .optkernel import LinearProgram, StatusKind, solve_lp


class EmptyPolytopeError(ValueError):
    pass


class ResourceError(RuntimeError):
    """A configured size cap (rows, samples) was exceeded."""


class GeometryError(ArithmeticError):
    """An LP inside a set operation failed numerically."""


@dataclass(frozen=True)
class Polytope:
    lhs: np.ndarray
    rhs: np.ndarray
    # optional per-row labels that travel with rows through redundancy removal
    tags: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        rhs = np.asarray(self.rhs, dtype=float).ravel()
        lhs = np.asarray(self.lhs, dtype=float)
        if lhs.ndim == 1:
            lhs = lhs.reshape(rhs.size, -1) if rhs.size else lhs.reshape(0, lhs.size)
        if lhs.shape[0] != rhs.size:
            raise ValueError(f"lhs has {lhs.shape[0]} rows but rhs has {rhs.size}")
        if not (np.all(np.isfinite(lhs)) and np.all(np.isfinite(rhs))):
            raise ValueError("polytope data must be finite")
        if self.tags is not None and len(self.tags) != rhs.size:
            raise ValueError("one tag per row required")
        object.__setattr__(self, "lhs", lhs)
        object.__setattr__(self, "rhs", rhs)
        if self.tags is not None:
            object.__setattr__(self, "tags", tuple(self.tags))

    @property
    def dim(self) -> int:
        return self.lhs.shape[1]

    @property
    def n_rows(self) -> int:
        return self.rhs.size

    @classmethod
    def whole_space(cls, dim):
        return cls(np.zeros((0, dim)), np.zeros(0))

    @classmethod
    def empty(cls, dim):
        return cls(np.zeros((1, dim)), -np.ones(1))

    @classmethod
    def box(cls, lower, upper):
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        eye = np.eye(lower.size)
        return cls(np.vstack([eye, -eye]), np.concatenate([upper, -lower]))

    def take(self, rows) -> Polytope:
        rows = np.asarray(rows, dtype=int)
        tags = None if self.tags is None else tuple(self.tags[i] for i in rows)
        return Polytope(self.lhs[rows], self.rhs[rows], tags)

    def intersect(self, other: Polytope) -> Polytope:
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        tags = None
        if self.tags is not None or other.tags is not None:
            tags = (self.tags or (None,) * self.n_rows) + (other.tags or (None,) * other.n_rows)
        return Polytope(np.vstack([self.lhs, other.lhs]), np.concatenate([self.rhs, other.rhs]), tags)

    def normalized(self) -> Polytope:
        """Rows scaled to unit 2-norm; zero rows kept as they are.

        Rows already at unit norm up to round-off are left untouched, so
        normalizing twice is exact.
        """
        norms = np.linalg.norm(self.lhs, axis=1)
        scale = np.where((norms > 0) & (np.abs(norms - 1.0) > 8 * np.finfo(float).eps), norms, 1.0)
        return Polytope(self.lhs / scale[:, None], self.rhs / scale, self.tags)

    def scaled_to_unit_rhs(self) -> Polytope:
        """Rows rescaled to the ``H x <= 1`` form; requires a positive rhs."""
        if np.any(self.rhs <= 0):
            raise ValueError("origin must be strictly interior for the H x <= 1 form")
        return Polytope(self.lhs / self.rhs[:, None], np.ones(self.n_rows), self.tags)


def support(p: Polytope, direction) -> float:
    """max direction . x over p; +inf if unbounded."""
    status = solve_lp(LinearProgram(direction, p.lhs, p.rhs, maximize=True))
    if status.kind is StatusKind.OPTIMAL:
        return status.objective
    if status.kind is StatusKind.UNBOUNDED:
        return np.inf
    if status.kind is StatusKind.INFEASIBLE:
        raise EmptyPolytopeError("support function of an empty set")
    raise GeometryError(status.message)


def chebyshev_center(p: Polytope, radius_cap=1.0):
    """Center and radius of the largest ball (radius capped) inside p.

    Returns ``(None, -inf)`` when p is empty.
    """
    n = p.dim
    norms = np.linalg.norm(p.lhs, axis=1)
    lhs = np.hstack([p.lhs, norms[:, None]])
    lhs = np.vstack([lhs, np.eye(1, n + 1, n)])
    rhs = np.append(p.rhs, radius_cap)
    cost = np.zeros(n + 1)
    cost[-1] = 1.0
    status = solve_lp(LinearProgram(cost, lhs, rhs, maximize=True))
    if status.kind is StatusKind.INFEASIBLE:
        return None, -np.inf
    if status.kind is not StatusKind.OPTIMAL:
        raise GeometryError(f"Chebyshev LP: {status.kind.value} {status.message}")
    radius = status.point[n]
    # the radius is a free variable: a negative optimum certifies emptiness
    if radius < -settings.feas_tol * (1.0 + np.abs(p.rhs).max(initial=0.0)):
        return None, -np.inf
    return status.point[:n], radius


def is_empty(p: Polytope) -> bool:
    if p.n_rows == 0:
        return False
    status = solve_lp(LinearProgram(np.zeros(p.dim), p.lhs, p.rhs))
    if status.kind is StatusKind.INFEASIBLE:
        return True
    if status.kind is StatusKind.OPTIMAL:
        return False
    raise GeometryError(status.message)


def contains(p: Polytope, point, tol=None) -> bool:
    point = np.asarray(point, dtype=float)
    if p.n_rows == 0:
        return True
    tol = settings.feas_tol if tol is None else tol
    scale = 1.0 + np.abs(p.rhs).max()
    norms = np.maximum(np.linalg.norm(p.lhs, axis=1), 1e-300)
    return bool(np.all((p.lhs @ point - p.rhs) / norms <= tol * scale))


def is_subset(a: Polytope, b: Polytope, tol=None) -> bool:
    """True when a is contained in b (every row of b maximized over a)."""
    if a.dim != b.dim:
        raise ValueError("dimension mismatch")
    tol = settings.redundancy_tol if tol is None else tol
    if is_empty(a):
        return True
    for row, rhs in zip(b.lhs, b.rhs):
        value = support(a, row)
        if value > rhs + tol * (1.0 + abs(rhs)) * max(1.0, np.linalg.norm(row)):
            return False
    return True


def _drop_trivial_rows(p: Polytope, tol):
    """Remove zero rows; an infeasible zero row means the set is empty."""
    norms = np.linalg.norm(p.lhs, axis=1)
    zero = norms <= 1e-14
    if np.any(p.rhs[zero] < -tol):
        raise EmptyPolytopeError("row 0 <= negative")
    return p.take(np.flatnonzero(~zero)), zero


def _dedupe(p: Polytope):
    """Indices of the first occurrence of every distinct (normalized) row."""
    key = np.round(np.hstack([p.lhs, p.rhs[:, None]]), 12)
    _, first = np.unique(key, axis=0, return_index=True)
    return np.sort(first)


def _polar_candidates(p: Polytope, center):
    """Rows whose polar point is a vertex of conv({0} U polar points).

    Also returns, per row, a direction from the center towards the relative
    interior of that row's facet (the mean of the primal vertices dual to
    the adjacent hull facets), or NaN where no such facet was found.
    """
    slack = p.rhs - p.lhs @ center
    pts = p.lhs / slack[:, None]
    dirs = np.full(p.lhs.shape, np.nan)
    # work inside the linear span of the polar points (it contains the origin)
    _, s, vt = np.linalg.svd(pts, full_matrices=False)
    rank = int(np.sum(s > 1e-10 * s[0]))
    coords = pts @ vt[:rank].T
    if rank == 1:
        c = coords[:, 0]
        keep = []
        if c.max() > 0:
            keep.append(int(np.flatnonzero(c >= c.max() * (1 - 1e-12))[0]))
        if c.min() < 0:
            keep.append(int(np.flatnonzero(c <= c.min() * (1 - 1e-12))[0]))
        return np.array(sorted(set(keep)), dtype=int), dirs
    cloud = np.vstack([coords, np.zeros((1, rank))])
    hull = ConvexHull(cloud)
    verts = hull.vertices[hull.vertices < p.n_rows]
    normals, offsets = hull.equations[:, :-1], -hull.equations[:, -1]
    good = offsets > 1e-12 * np.abs(normals).max(axis=1)
    # primal vertex dual to facet f: center + V' n_f / b_f
    duals = (normals[good] / offsets[good, None]) @ vt[:rank]
    acc = np.zeros(p.lhs.shape)
    cnt = np.zeros(p.n_rows)
    for simplex, z in zip(hull.simplices[good], duals):
        idx = simplex[simplex < p.n_rows]
        acc[idx] += z
        cnt[idx] += 1
    has = cnt > 0
    dirs[has] = acc[has] / cnt[has, None]
    return np.sort(verts), dirs


def _row_redundant(p: Polytope, i, rows, tol):
    others = [k for k in rows if k != i]
    status = solve_lp(LinearProgram(p.lhs[i], p.lhs[others], p.rhs[others], maximize=True))
    if status.kind is StatusKind.UNBOUNDED:
        return False
    if status.kind is StatusKind.OPTIMAL:
        return status.objective <= p.rhs[i] + tol * (1.0 + abs(p.rhs[i]))
    if status.kind is StatusKind.INFEASIBLE:
        raise EmptyPolytopeError("other rows are infeasible")
    raise GeometryError(status.message)


def _ray_witnessed(p: Polytope, center, rows, tol, dirs=None, chunk=2048):
    """Rows certified irredundant by a witness point.

    Walking from the center along a direction (the row's unit normal, or a
    supplied one), the first other row becomes active at step t*. If the row
    is already exceeded by more than the tolerance there, that point is a
    witness and no LP is needed.
    """
    rows = np.asarray(rows, dtype=int)
    H = p.lhs[rows]
    slack = p.rhs[rows] - H @ center
    d = H.copy() if dirs is None else np.asarray(dirs, dtype=float)[rows]
    valid = np.all(np.isfinite(d), axis=1)
    d = np.where(valid[:, None], d, 0.0)
    out = np.zeros(rows.size, dtype=bool)
    for start in range(0, rows.size, chunk):
        idx = np.arange(start, min(start + chunk, rows.size))
        G = d[idx] @ H.T  # rate of change of every row along each direction
        own = G[idx - start, idx].copy()
        G[idx - start, idx] = 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(G > 1e-14, slack[None, :] / np.where(G > 1e-14, G, 1.0), np.inf)
            t_star = t.min(axis=1)
            t_own = np.where(own > 1e-14, slack[idx] / np.where(own > 1e-14, own, 1.0), np.inf)
            excess = np.where(np.isinf(t_star), np.inf, (t_star - t_own) * own)
        ok = valid[idx] & (own > 1e-14) & (excess > 2.0 * tol * (1.0 + np.abs(p.rhs[rows[idx]])))
        out[idx] = ok
    return out


def remove_redundant(p: Polytope, use_hull=True) -> Polytope:
    """Same set with every redundant row removed.

    Rows are normalized to unit norm first. Each candidate row is tested
    against all other candidates (in parallel when configured); flagged rows
    are then re-tested in descending index order against the rows still
    kept, so of a mutually redundant pair the lower-indexed row survives.
    """
    tol = settings.redundancy_tol
    if p.n_rows == 0:
        return p
    p = p.normalized()
    p, _ = _drop_trivial_rows(p, tol)
    if p.n_rows == 0:
        return p
    p = p.take(_dedupe(p))
    center, radius = chebyshev_center(p)
    if center is None:
        raise EmptyPolytopeError("polytope is empty")
    rows = np.arange(p.n_rows)
    dirs = None
    if p.dim == 1:
        rows = _interval_rows(p)
    elif use_hull and radius > settings.interior_tol and p.n_rows > 2 * p.dim + 2:
        try:
            rows, dirs = _polar_candidates(p, center)
        except (QhullError, ValueError, np.linalg.LinAlgError):
            rows = np.arange(p.n_rows)
    rows = [int(i) for i in rows]
    witnessed = np.zeros(len(rows), dtype=bool)
    if rows:
        witnessed = _ray_witnessed(p, center, rows, tol)
        if dirs is not None:
            witnessed |= _ray_witnessed(p, center, rows, tol, dirs)
    to_test = [i for i, w in zip(rows, witnessed) if not w]
    tested = dict(zip(to_test, parallel_map(lambda i: _row_redundant(p, i, rows, tol), to_test)))
    flags = [tested.get(i, False) for i in rows]
    kept = set(rows)
    for i, flagged in sorted(zip(rows, flags), reverse=True):
        if flagged and _row_redundant(p, i, sorted(kept), tol):
            kept.discard(i)
    return p.take(sorted(kept))


def _interval_rows(p: Polytope):
    c = p.lhs[:, 0]
    bounds = p.rhs / c
    keep = []
    pos, neg = np.flatnonzero(c > 0), np.flatnonzero(c < 0)
    if pos.size:
        keep.append(pos[np.argmin(bounds[pos])])
    if neg.size:
        keep.append(neg[np.argmax(bounds[neg])])
    return np.array(sorted(keep), dtype=int)


def _eliminate(p: Polytope, col: int, cap: int) -> Polytope:
    """One Fourier-Motzkin step on column ``col``.

    Pairwise combinations are generated in blocks; whenever the rows held
    exceed half the cap they are pruned (a row redundant for a subset of the
    result is redundant for all of it), so no more than ``cap`` rows are ever
    held at once.
    """
    c = p.lhs[:, col]
    eps = 1e-12
    pos, neg, zero = np.flatnonzero(c > eps), np.flatnonzero(c < -eps), np.flatnonzero(np.abs(c) <= eps)
    keep_cols = [k for k in range(p.dim) if k != col]
    Hp = p.lhs[pos] / c[pos, None]
    hp = p.rhs[pos] / c[pos]
    Hn = p.lhs[neg] / -c[neg, None]
    hn = p.rhs[neg] / -c[neg]

    def combos(block):
        H = (Hp[block, None, :] + Hn[None, :, :]).reshape(-1, p.dim)[:, keep_cols]
        h = (hp[block, None] + hn[None, :]).ravel()
        H[np.abs(H) < 1e-14] = 0.0
        return H, h

    held_H = [p.lhs[zero][:, keep_cols]]
    held_h = [p.rhs[zero]]
    if pos.size * neg.size + zero.size <= cap:
        H, h = combos(np.arange(pos.size))
        return Polytope(np.vstack(held_H + [H]), np.concatenate(held_h + [h]))
    half = cap // 2
    if neg.size > half or zero.size > half:
        raise ResourceError(f"Fourier-Motzkin step needs blocks larger than the row cap {cap}")
    step = max(1, (half - zero.size) // neg.size)
    held = Polytope(held_H[0], held_h[0])
    for start in range(0, pos.size, step):
        H, h = combos(np.arange(start, min(start + step, pos.size)))
        held = Polytope(np.vstack([held.lhs, H]), np.concatenate([held.rhs, h]))
        if held.n_rows > half:
            held = remove_redundant(held)
            if held.n_rows > half:
                raise ResourceError(f"Fourier-Motzkin step keeps {held.n_rows} irredundant rows (cap {cap})")
    return held


def _projection_is_whole_space(p: Polytope, n_keep: int) -> bool:
    """True when the recession cone of p projects onto every +-e_i of the
    first n_keep coordinates, so the projection of the nonempty p is R^n_keep."""
    Hk, He = p.lhs[:, :n_keep], p.lhs[:, n_keep:]
    for i in range(n_keep):
        for sign in (1.0, -1.0):
            status = solve_lp(LinearProgram(np.zeros(He.shape[1]), He, -sign * Hk[:, i]))
            if status.kind is not StatusKind.OPTIMAL:
                return False
    return True


def project(p: Polytope, keep_dims) -> Polytope:
    """Orthogonal projection onto ``keep_dims`` by Fourier-Motzkin elimination.

    The eliminated coordinate at each step minimizes (#positive)*(#negative)
    rows, and redundancy is removed after every single elimination.
    """
    keep_dims = list(keep_dims)
    if len(set(keep_dims)) != len(keep_dims) or any(not 0 <= k < p.dim for k in keep_dims):
        raise ValueError("invalid keep_dims")
    if is_empty(p):
        raise EmptyPolytopeError("cannot project an empty polytope")
    # move kept coordinates to the front, in the requested order
    order = keep_dims + [k for k in range(p.dim) if k not in keep_dims]
    cur = remove_redundant(Polytope(p.lhs[:, order], p.rhs))
    n_keep = len(keep_dims)
    if cur.dim > n_keep and _projection_is_whole_space(cur, n_keep):
        return Polytope.whole_space(n_keep)
    while cur.dim > n_keep:
        cols = range(n_keep, cur.dim)
        cost = [np.sum(cur.lhs[:, k] > 1e-12) * np.sum(cur.lhs[:, k] < -1e-12) for k in cols]
        col = n_keep + int(np.argmin(cost))
        cur = remove_redundant(_eliminate(cur, col, settings.fm_row_cap))
    return cur


def robust_pre(target: Polytope, constraint: Polytope, vertices) -> Polytope:
    """{x | exists u: (x,u) in constraint and A_j x + B_j u in target for all j}."""
    n = target.dim
    m = constraint.dim - n
    if m < 0:
        raise ValueError("constraint must live in (x, u) space with x first")
    if not vertices:
        raise ValueError("vertex list is empty")
    blocks_H = [constraint.lhs]
    blocks_h = [constraint.rhs]
    for A, B in vertices:
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.asarray(B, dtype=float).reshape(n, m)
        if A.shape != (n, n):
            raise ValueError(f"vertex dynamics shape {A.shape} != {(n, n)}")
        blocks_H.append(np.hstack([target.lhs @ A, target.lhs @ B]))
        blocks_h.append(target.rhs)
    stacked = Polytope(np.vstack(blocks_H), np.concatenate(blocks_h))
    if m == 0:
        return remove_redundant(stacked)
    return project(stacked, range(n))


@dataclass(frozen=True)
class InvariantSetResult:
    polytope: Polytope
    converged: bool
    iterations: int
    reason: str = ""


def _contained_rel(a: Polytope, b: Polytope, tol) -> bool:
    """a subset of b, with a relative tolerance on every row of b."""
    for row, rhs in zip(b.lhs, b.rhs):
        value = support(a, row)
        if value > rhs + tol * abs(rhs) + 1e-12:
            return False
    return True


def _invariance_recursion(initial: Polytope, pre_fn) -> InvariantSetResult:
    omega = remove_redundant(initial)
    _, r0 = chebyshev_center(omega, radius_cap=1e6)
    for it in range(1, settings.invariance_max_iter + 1):
        try:
            nxt = remove_redundant(pre_fn(omega).intersect(omega))
        except EmptyPolytopeError:
            return InvariantSetResult(Polytope.empty(omega.dim), True, it, "empty")
        _, r = chebyshev_center(nxt, radius_cap=1e6)
        if _contained_rel(omega, nxt, settings.set_equal_tol):
            return InvariantSetResult(nxt, True, it)
        if r <= settings.interior_tol * max(1.0, r0):
            return InvariantSetResult(nxt, False, it, "iterate lost its interior")
        omega = nxt
    return InvariantSetResult(omega, False, settings.invariance_max_iter, "iteration cap reached")


def max_robust_control_invariant(constraint: Polytope, vertices, n_state=None) -> InvariantSetResult:
    """Largest set kept invariant by some admissible input for every vertex."""
    if n_state is None:
        n_state = np.atleast_2d(vertices[0][0]).shape[0]
    omega0 = project(constraint, range(n_state))
    return _invariance_recursion(omega0, lambda om: robust_pre(om, constraint, vertices))


def max_robust_positively_invariant(state_constraint: Polytope, closed_loop_vertices) -> InvariantSetResult:
    n = state_constraint.dim
    verts = [(np.atleast_2d(A), np.zeros((n, 0))) for A in closed_loop_vertices]
    return _invariance_recursion(state_constraint, lambda om: robust_pre(om, state_constraint, verts))


def vertices(p: Polytope, tol=1e-9) -> np.ndarray:
    """Brute-force vertex enumeration; intended for dim <= 3 only."""
    if p.dim > 3:
        raise ValueError("vertex enumeration is limited to dim <= 3")
    q = remove_redundant(p)
    out = []
    if q.dim == 2:
        # irredundant edges of a polygon meet their angular neighbours at the vertices
        order = np.argsort(np.arctan2(q.lhs[:, 1], q.lhs[:, 0]), kind="stable")
        pairs = sorted({tuple(sorted((int(i), int(j)))) for i, j in zip(order, np.roll(order, -1)) if i != j})
    else:
        pairs = itertools.combinations(range(q.n_rows), q.dim)
    for rows in pairs:
        M = q.lhs[list(rows)]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        x = np.linalg.solve(M, q.rhs[list(rows)])
        if np.all(q.lhs @ x <= q.rhs + tol * (1 + np.abs(q.rhs))):
            if not out or not np.any(np.all(np.abs(np.array(out) - x) <= 1e-9 + 1e-5 * np.abs(x), axis=1)):
                out.append(x)
    return np.array(out).reshape(-1, p.dim)


def boundary_points(p: Polytope, n, rng, interior=False) -> np.ndarray:
    """Points on (or, with ``interior``, inside) p by ray shooting from the
    Chebyshev center in uniformly random directions. Requires p bounded."""
    center, radius = chebyshev_center(p, radius_cap=1e6)
    if center is None:
        raise EmptyPolytopeError("polytope is empty")
    d = rng.standard_normal((n, p.dim))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    slack = p.rhs - p.lhs @ center
    rate = d @ p.lhs.T
    with np.errstate(divide="ignore"):
        steps = np.where(rate > 1e-14, slack[None, :] / np.where(rate > 1e-14, rate, 1.0), np.inf)
    tmax = steps.min(axis=1)
    if not np.all(np.isfinite(tmax)):
        raise ValueError("polytope is unbounded along a sampled ray")
    if interior:
        tmax = tmax * rng.uniform(size=n) ** (1.0 / p.dim)
    return center[None, :] + tmax[:, None] * d
