import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from offline_smpc import geometry
from offline_smpc.geometry import (
    EmptyPolytopeError,
    Polytope,
    ResourceError,
    contains,
    is_subset,
    max_robust_control_invariant,
    max_robust_positively_invariant,
    project,
    remove_redundant,
    robust_pre,
    support,
)
from offline_smpc.optkernel import LinearProgram, solve_lp
from offline_smpc.config import override
from oracles import lp_support, sampled_subset

seeds = st.integers(min_value=0, max_value=2**31 - 1)


def unit_box(dim):
    return Polytope.box(-np.ones(dim), np.ones(dim))


def random_polytope(rng, dim, rows):
    """Bounded polytope containing the origin: random normals, rhs in [0.5, 2]."""
    H = rng.standard_normal((rows, dim))
    H = np.vstack([H, np.eye(dim), -np.eye(dim)])
    h = np.concatenate([rng.uniform(0.5, 2.0, rows), 3 * np.ones(2 * dim)])
    return Polytope(H, h)


def directions(rng, dim, count):
    d = rng.standard_normal((count, dim))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def same_set(a, b, dirs, tol):
    for d in dirs:
        assert support(a, d) == pytest.approx(support(b, d), abs=tol)


def scalar(lo, hi):
    return Polytope([[1.0], [-1.0]], [hi, -lo])


# ----------------------------------------------------------------- redundancy


def test_dominated_row_removed():
    box = unit_box(2)
    p = Polytope(np.vstack([box.lhs, [1.0, 0.0]]), np.append(box.rhs, 2.0))
    out = remove_redundant(p)
    assert out.n_rows == 4
    assert not np.any(np.isclose(out.rhs, 2.0))


def test_duplicate_row_removed():
    box = unit_box(2)
    p = Polytope(np.vstack([box.lhs, [1.0, 0.0]]), np.append(box.rhs, 1.0))
    assert remove_redundant(p).n_rows == 4


def test_tangent_rows_survive_far_rows_removed(rng):
    ang = rng.uniform(0, 2 * np.pi, 50)
    tangent = np.column_stack([np.cos(ang), np.sin(ang)])
    ang2 = rng.uniform(0, 2 * np.pi, 50)
    far = np.column_stack([np.cos(ang2), np.sin(ang2)])
    p = Polytope(np.vstack([tangent, far]), np.concatenate([np.ones(50), 2 * np.ones(50)]),
                 tags=tuple(["t"] * 50 + ["f"] * 50))
    out = remove_redundant(p)
    assert out.n_rows == 50
    assert set(out.tags) == {"t"}


def test_remove_redundant_empty_input():
    with pytest.raises(EmptyPolytopeError):
        remove_redundant(Polytope([[1.0], [-1.0]], [-1.0, 0.0]))


def test_remove_redundant_keeps_support_and_is_idempotent(rng):
    p = random_polytope(rng, 3, 40)
    once = remove_redundant(p)
    twice = remove_redundant(once)
    same_set(p, once, directions(rng, 3, 100), 1e-7)
    assert twice.n_rows == once.n_rows
    np.testing.assert_allclose(twice.lhs, once.lhs)


def test_every_surviving_row_is_irredundant(rng):
    out = remove_redundant(random_polytope(rng, 3, 30))
    for i in range(out.n_rows):
        others = np.delete(np.arange(out.n_rows), i)
        res = solve_lp(LinearProgram(out.lhs[i], out.lhs[others], out.rhs[others], maximize=True))
        assert (not res.optimal) or res.objective > out.rhs[i] + 1e-9


def test_mutually_redundant_pair_keeps_first():
    box = unit_box(2)
    p = Polytope(np.vstack([[2.0, 0.0], box.lhs]), np.concatenate([[2.0], box.rhs]), tags=tuple(range(5)))
    out = remove_redundant(p)
    assert out.n_rows == 4
    assert 0 in out.tags


@given(seeds, st.integers(2, 4))
def test_remove_redundant_property(seed, dim):
    rng = np.random.default_rng(seed)
    p = random_polytope(rng, dim, 15)
    out = remove_redundant(p)
    same_set(p, out, directions(rng, dim, 20), 1e-7)
    assert remove_redundant(out).n_rows == out.n_rows


# ----------------------------------------------------------------- projection


def test_project_box():
    out = project(unit_box(3), [0, 1])
    same_set(out, unit_box(2), np.vstack([np.eye(2), -np.eye(2), [[1, 1], [1, -1]]]), 1e-9)
    assert out.n_rows == 4


def test_project_simplex():
    p = Polytope([[1, 1, 1], [-1, 0, 0], [0, -1, 0], [0, 0, -1]], [1, 0, 0, 0])
    out = project(p, [0, 1])
    tri = Polytope([[1, 1], [-1, 0], [0, -1]], [1, 0, 0])
    assert out.n_rows == 3
    assert is_subset(out, tri) and is_subset(tri, out)


def test_project_matches_lp_support_oracle(rng):
    for _ in range(3):
        p = random_polytope(rng, 4, 8)  # 8 + 8 box rows = 16
        out = project(p, [0, 1])
        for d in directions(rng, 2, 64):
            full = np.concatenate([d, np.zeros(2)])
            assert support(out, d) == pytest.approx(lp_support(p.lhs, p.rhs, full), abs=1e-6)


def test_project_commutes_with_redundancy_removal(rng):
    p = random_polytope(rng, 3, 12)
    a = project(p, [0, 2])
    b = project(remove_redundant(p), [0, 2])
    same_set(a, b, directions(rng, 2, 30), 1e-7)


def test_project_unbounded_direction_gives_whole_space():
    # x free along (1, 1): projection onto x0 is the whole line
    p = Polytope([[1.0, -1.0], [-1.0, 1.0]], [1.0, 1.0])
    out = project(p, [0])
    assert out.n_rows == 0


def test_project_empty_raises():
    with pytest.raises(EmptyPolytopeError):
        project(Polytope([[1.0, 0.0], [-1.0, 0.0]], [-1.0, 0.0]), [1])


def test_project_row_cap():
    rng = np.random.default_rng(3)
    p = random_polytope(rng, 6, 60)
    with override(fm_row_cap=50):
        with pytest.raises(ResourceError):
            project(p, [0])


# ----------------------------------------------------------------- pre-sets and invariance


def test_robust_pre_scalar_recentering():
    cons = Polytope.box([-1.0, -1.0], [1.0, 1.0])
    pre = robust_pre(scalar(-1, 1), cons, [(np.array([[0.5]]), np.array([[1.0]]))])
    same_set(pre, scalar(-1, 1), [[1.0], [-1.0]], 1e-9)


def test_robust_pre_identity_no_input():
    target = scalar(-1, 2)
    cons = scalar(-3, 1)
    pre = robust_pre(target, cons, [(np.eye(1), np.zeros((1, 0)))])
    same_set(pre, scalar(-1, 1), [[1.0], [-1.0]], 1e-9)


def test_robust_pre_binding_vertex():
    verts = [(np.array([[0.5]]), np.zeros((1, 0))), (np.array([[2.0]]), np.zeros((1, 0)))]
    pre = robust_pre(scalar(-1, 1), Polytope.whole_space(1), verts)
    same_set(pre, scalar(-0.5, 0.5), [[1.0], [-1.0]], 1e-9)


def test_robust_pre_single_vertex_zero_B_is_preimage(rng):
    A = rng.standard_normal((2, 2))
    target = random_polytope(rng, 2, 5)
    cons_x = random_polytope(rng, 2, 4)
    cons = Polytope(np.hstack([cons_x.lhs, np.zeros((cons_x.n_rows, 1))]), cons_x.rhs)
    pre = robust_pre(target, cons, [(A, np.zeros((2, 1)))])
    ref = Polytope(np.vstack([target.lhs @ A, cons_x.lhs]), np.concatenate([target.rhs, cons_x.rhs]))
    same_set(pre, ref, directions(rng, 2, 30), 1e-7)


def test_mrci_scalar_contraction():
    cons = Polytope.box([-1.0, -1.0], [1.0, 1.0])
    res = max_robust_control_invariant(cons, [(np.array([[0.5]]), np.array([[1.0]]))])
    assert res.converged and res.iterations == 1
    same_set(res.polytope, scalar(-1, 1), [[1.0], [-1.0]], 1e-12)


def test_mrci_unstable_collapse_not_converged():
    cons = Polytope([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]], [1.0, 1.0, 0.0, 0.0])
    with override(invariance_max_iter=25):
        res = max_robust_control_invariant(cons, [(np.array([[2.0]]), np.array([[0.0]]))])
    assert not res.converged
    # iterates are the nested intervals [-2^-k, 2^-k]
    k = res.iterations
    assert support(res.polytope, [1.0]) == pytest.approx(2.0**-k, rel=1e-9)
    assert support(res.polytope, [-1.0]) == pytest.approx(2.0**-k, rel=1e-9)


def test_mrci_identity_dynamics_returns_projection(rng):
    cons = random_polytope(rng, 3, 6)
    res = max_robust_control_invariant(cons, [(np.eye(2), np.zeros((2, 1)))])
    assert res.converged and res.iterations == 1
    same_set(res.polytope, project(cons, [0, 1]), directions(rng, 2, 20), 1e-7)


def test_mrci_one_step_invariance_at_vertices(rng):
    A = np.array([[1.1, 0.3], [0.0, 0.9]])
    B = np.array([[0.0], [1.0]])
    dA = np.array([[0.05, 0.0], [0.0, 0.05]])
    verts = [(A + dA, B), (A - dA, B)]
    cons = Polytope.box([-3, -3, -1], [3, 3, 1])
    res = max_robust_control_invariant(cons, verts)
    assert res.converged
    om = res.polytope
    for xv in geometry.vertices(om):
        # exists u: (xv, u) in cons and H_om (A_j xv + B_j u) <= h_om for all j
        rows = [cons.lhs[:, 2:]]
        rhs = [cons.rhs - cons.lhs[:, :2] @ xv]
        for Aj, Bj in verts:
            rows.append(om.lhs @ Bj)
            rhs.append(om.rhs - om.lhs @ Aj @ xv)
        lp = solve_lp(LinearProgram([0.0], np.vstack(rows), np.concatenate(rhs) + 1e-9))
        assert lp.optimal


def test_mrpi_cases():
    res = max_robust_positively_invariant(scalar(-1, 1), [np.array([[0.5]])])
    same_set(res.polytope, scalar(-1, 1), [[1.0], [-1.0]], 1e-12)
    res0 = max_robust_positively_invariant(scalar(-2, 3), [np.array([[0.0]])])
    same_set(res0.polytope, scalar(-2, 3), [[1.0], [-1.0]], 1e-12)


def test_mrpi_rotation_keeps_square():
    R = np.array([[0.0, -1.0], [1.0, 0.0]])
    box = unit_box(2)
    res = max_robust_positively_invariant(box, [R, R.T])
    assert res.converged and res.iterations == 1
    for x in geometry.vertices(res.polytope):
        for M in (R, R.T):
            assert contains(res.polytope, M @ x)


# ----------------------------------------------------------------- containment


def test_contains_and_subset():
    box = unit_box(2)
    big = Polytope(box.lhs, 2 * box.rhs)
    assert is_subset(box, big)
    assert not is_subset(big, box)
    assert contains(box, [1.0, 1.0])
    assert not contains(box, [1.0 + 1e-6, 0.0])


@given(seeds)
def test_is_subset_agrees_with_sampling(seed):
    rng = np.random.default_rng(seed)
    a = random_polytope(rng, 2, 4)
    b = Polytope(a.lhs[:4], a.rhs[:4] * rng.uniform(0.7, 1.3, 4))
    b = b.intersect(Polytope.box([-3, -3], [3, 3]))
    sub = is_subset(a, b)
    sampled = sampled_subset(a.lhs, a.rhs, b.lhs, b.rhs, [-3, -3], [3, 3], 10_000, rng)
    if sub:
        assert sampled
    # a sampling oracle can miss thin slivers, so only the certain direction is
    # enforced; a reported violation must be witnessed by some support value
    if not sub:
        assert any(support(a, row) > rhs + 1e-9 for row, rhs in zip(b.lhs, b.rhs))
