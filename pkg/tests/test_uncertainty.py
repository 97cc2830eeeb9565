import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from offline_smpc.optkernel import LinearProgram, solve_lp
from offline_smpc.uncertainty import (
    SampleBudget,
    UncertaintyModel,
    draw_multisample,
    draw_q,
    realize,
    sample_count,
    stream,
    subset_sample_count,
    vertex_bound,
)
from oracles import scenario_count_ref, subset_count_ref, sharp_subset_count_ref


def affine_model(rng, n=2, m=1, n_q=2, distribution="uniform"):
    kw = {}
    if distribution == "truncated_gaussian":
        kw = {"mean": np.zeros(n_q), "std": 0.5 * np.ones(n_q)}
    return UncertaintyModel.affine(rng.standard_normal((n, n)), rng.standard_normal((n, m)),
                                   rng.standard_normal((n_q, n, n)), rng.standard_normal((n_q, n, m)),
                                   -np.ones(n_q), np.ones(n_q), distribution, **kw)


def in_hull(points, vertices):
    """LP feasibility of points as convex combinations of vertices."""
    V = np.asarray(vertices)
    k = V.shape[0]
    for p in points:
        A_eq = np.vstack([V.T, np.ones(k)])
        b_eq = np.append(p, 1.0)
        # equalities as two inequalities, lambda >= 0
        lhs = np.vstack([A_eq, -A_eq, -np.eye(k)])
        rhs = np.concatenate([b_eq + 1e-9, -b_eq + 1e-9, np.zeros(k)])
        if not solve_lp(LinearProgram(np.zeros(k), lhs, rhs)).optimal:
            return False
    return True


# ----------------------------------------------------------------- sample sizes


def test_worked_sample_counts():
    assert sample_count(SampleBudget(5, 0.1, 0.01, "scenario_eq7")) == 137
    assert sample_count(SampleBudget(2, 0.1, 0.01, "subset_eq13")) == 899


def test_subset_count_near_one_and_boundary():
    assert sample_count(SampleBudget(1, 0.999, 0.5, "subset_eq13")) >= 1
    with pytest.raises(ValueError):
        sample_count(SampleBudget(1, 1.0, 0.5, "subset_eq13"))


def test_sharp_subset_validity_range():
    with pytest.raises(ValueError):
        sample_count(SampleBudget(2, 0.2, 0.01, "subset_eq14"))
    assert sample_count(SampleBudget(2, 0.1, 0.01, "subset_eq14")) == sharp_subset_count_ref(2, 0.1, 0.01)


@pytest.mark.parametrize("bad", [dict(d=0), dict(d=2.5), dict(eps=0.0), dict(delta=1.0), dict(formula="eq99")])
def test_sample_count_rejects_bad_input(bad):
    args = {"d": 2, "eps": 0.1, "delta": 0.01, "formula": "subset_eq13", **bad}
    with pytest.raises(ValueError):
        sample_count(SampleBudget(**args))


@given(st.integers(1, 60), st.floats(0.001, 0.99), st.floats(1e-9, 0.9))
def test_counts_match_high_precision(d, eps, delta):
    assert sample_count(SampleBudget(d, eps, delta, "scenario_eq7")) == scenario_count_ref(d, eps, delta)
    assert sample_count(SampleBudget(d, eps, delta, "subset_eq13")) == subset_count_ref(d, eps, delta)


def test_counts_monotone_on_grid():
    ds, epss, deltas = [1, 2, 5, 10], [0.02, 0.05, 0.1, 0.3], [1e-6, 1e-3, 0.05]
    for formula in ("scenario_eq7", "subset_eq13"):
        for d, eps, delta in itertools.product(ds, epss, deltas):
            N = sample_count(SampleBudget(d, eps, delta, formula))
            assert N >= sample_count(SampleBudget(d, eps * 1.5, delta, formula))
            assert N >= sample_count(SampleBudget(d, eps, delta * 2, formula))
            assert N <= sample_count(SampleBudget(d + 1, eps, delta, formula))


def test_sharp_vs_basic_subset_grid_recorded():
    # the sharper bound is not claimed to dominate everywhere; the "min"
    # policy never exceeds either formula
    exceptions = []
    for eps, delta, d in itertools.product([0.02, 0.05, 0.1, 0.13], [1e-2, 1e-6], [2, 10, 50]):
        a = sample_count(SampleBudget(d, eps, delta, "subset_eq13"))
        b = sample_count(SampleBudget(d, eps, delta, "subset_eq14"))
        if b > a:
            exceptions.append((eps, delta, d))
        assert subset_sample_count(d, eps, delta, "min") == min(a, b)
    print(f"grid points where the sharp subset count exceeds the basic one: {exceptions}")
    assert subset_sample_count(2, 0.2, 0.01, "min") == sample_count(SampleBudget(2, 0.2, 0.01))


# ----------------------------------------------------------------- sampling


def test_single_atom_mixture_draws():
    A, B = np.array([[0.3]]), np.array([[1.0]])
    model = UncertaintyModel.deterministic(A, B)
    ms = draw_multisample(model, 50, 4, seed=1)
    As, Bs = realize(model, ms.draws)
    assert np.all(As == 0.3) and np.all(Bs == 1.0)


def test_uniform_box_mean(rng):
    model = affine_model(rng)
    q = draw_multisample(model, 100_000, 1, seed=7).draws[:, 0]
    assert np.all(np.abs(q.mean(axis=0)) <= 3 / np.sqrt(3 * 1e5))
    assert np.all(q >= -1) and np.all(q <= 1)
    assert q.var(axis=0) == pytest.approx(np.full(2, 1 / 3), rel=0.02)


def test_truncated_gaussian_support_and_moments(rng):
    model = affine_model(rng, distribution="truncated_gaussian")
    q = draw_q(model, (40_000,), stream(3, "t"))
    assert np.all(np.abs(q) <= 1)
    assert np.abs(q.mean(axis=0)).max() < 0.02
    # variance of N(0, 0.25) truncated to [-1, 1]
    from scipy.stats import truncnorm

    var = truncnorm(-2, 2, scale=0.5).var()
    assert q.var(axis=0) == pytest.approx(np.full(2, var), rel=0.05)


def test_mixture_weights(rng):
    atoms = [(np.eye(1) * a, np.ones((1, 1))) for a in (0.1, 0.2, 0.3)]
    model = UncertaintyModel.mixture(atoms, [0.5, 0.3, 0.2])
    idx = draw_q(model, (60_000,), stream(0, "w"))[:, 0]
    freq = np.bincount(idx, minlength=3) / idx.size
    assert freq == pytest.approx([0.5, 0.3, 0.2], abs=0.01)


def test_draws_reproducible_and_streams_independent(rng):
    model = affine_model(rng)
    a = draw_multisample(model, 20, 3, seed=11).draws
    b = draw_multisample(model, 20, 3, seed=11).draws
    c = draw_multisample(model, 20, 3, seed=11, tag="other").draws
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    x1 = stream(5, "x", 1, 2).uniform(size=4)
    stream(5, "x", 9).uniform(size=100)
    np.testing.assert_array_equal(x1, stream(5, "x", 1, 2).uniform(size=4))


def test_model_validation():
    with pytest.raises(ValueError):
        UncertaintyModel.affine(np.eye(2), np.ones((2, 1)), np.zeros((1, 2, 2)), np.zeros((1, 2, 1)),
                                [-np.inf], [1.0])
    with pytest.raises(ValueError):
        UncertaintyModel.mixture([(np.eye(1), np.ones((1, 1)))], [0.4])
    with pytest.raises(ValueError):
        UncertaintyModel.affine(np.eye(2), np.ones((2, 1)), np.zeros((1, 2, 2)), np.zeros((1, 2, 1)),
                                [-1.0], [1.0], "truncated_gaussian")


# ----------------------------------------------------------------- realize and vertices


def test_realize_basis_points(rng):
    model = affine_model(rng)
    A, B = realize(model, np.zeros(2))
    np.testing.assert_array_equal(A, model.A0)
    np.testing.assert_array_equal(B, model.B0)
    for i in range(2):
        e = np.eye(2)[i]
        A, B = realize(model, e)
        np.testing.assert_allclose(A, model.A0 + model.A_coeffs[i], atol=1e-15)
        np.testing.assert_allclose(B, model.B0 + model.B_coeffs[i], atol=1e-15)


@given(st.integers(0, 2**31 - 1))
def test_realize_matches_termwise_sum(seed):
    rng = np.random.default_rng(seed)
    model = affine_model(rng, n=3, m=2, n_q=4)
    q = rng.uniform(-1, 1, 4)
    A_ref = model.A0.copy()
    B_ref = model.B0.copy()
    for i in reversed(range(4)):
        A_ref = A_ref + q[i] * model.A_coeffs[i]
        B_ref = B_ref + q[i] * model.B_coeffs[i]
    A, B = realize(model, q)
    np.testing.assert_allclose(A, A_ref, atol=1e-12)
    np.testing.assert_allclose(B, B_ref, atol=1e-12)


def test_vertex_counts(rng):
    assert len(vertex_bound(affine_model(rng, n_q=1)).vertices) == 2
    assert len(vertex_bound(affine_model(rng, n_q=2)).vertices) == 4
    atoms = [(np.eye(2) * a, np.ones((2, 1))) for a in (0.1, 0.2, 0.3)]
    assert len(vertex_bound(UncertaintyModel.mixture(atoms)).vertices) == 3


def test_draws_inside_vertex_hull(rng):
    model = affine_model(rng, n_q=2)
    vb = vertex_bound(model)
    verts = [np.concatenate([A.ravel(), B.ravel()]) for A, B in vb.vertices]
    q = draw_q(model, (500,), stream(2, "hull"))
    A, B = realize(model, q)
    pts = np.hstack([A.reshape(500, -1), B.reshape(500, -1)])
    assert in_hull(pts, verts)
