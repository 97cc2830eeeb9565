"""Stochastic parameter q, the map q -> (A(q), B(q)), its polytopic outer
bound and the sample-size formulas used to size every sampled constraint set.
"""

from __future__ import annotations

import itertools
import math
import zlib
from dataclasses import dataclass

import numpy as np

AFFINE_DISTRIBUTIONS = ("uniform", "truncated_gaussian")
REJECTION_GUARD = 1_000_000


def stream(seed: int, tag: str, *index: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, purpose tag, index...).

    Streams with different keys are statistically independent and each is
    reproducible on its own, regardless of the order in which they are used.
    """
    key = (zlib.crc32(tag.encode()),) + tuple(int(i) for i in index)
    ss = np.random.SeedSequence(int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


# --------------------------------------------------------------------------- sample sizes

FORMULAS = ("scenario_eq7", "subset_eq13", "subset_eq14")


@dataclass(frozen=True)
class SampleBudget:
    d: int
    eps: float
    delta: float
    formula: str = "subset_eq13"

    @property
    def count(self) -> int:
        return sample_count(self)


def _check_budget(d, eps, delta, formula):
    if formula not in FORMULAS:
        raise ValueError(f"unknown formula {formula!r}")
    if not (0.0 < eps < 1.0) or not (0.0 < delta < 1.0):
        raise ValueError("eps and delta must lie in (0, 1)")
    if int(d) != d or d < 1:
        raise ValueError("d must be a positive integer")
    if formula == "subset_eq14" and not eps < 0.14:
        raise ValueError("the sharper subset bound is only valid for eps < 0.14")


def sample_count(budget: SampleBudget) -> int:
    d, eps, delta, formula = budget.d, budget.eps, budget.delta, budget.formula
    _check_budget(d, eps, delta, formula)
    if formula == "scenario_eq7":
        value = (1.0 / eps) * (math.e / (math.e - 1.0)) * (math.log(1.0 / delta) + (d - 1))
    elif formula == "subset_eq13":
        value = (5.0 / eps) * (math.log(4.0 / delta) + d * math.log(40.0 / eps))
    else:
        value = (4.1 / eps) * (math.log(21.64 / delta) + 4.39 * d * math.log2(8.0 * math.e / eps))
    return max(1, math.ceil(value))


def subset_sample_count(d, eps, delta, policy="subset_eq13") -> int:
    """Samples making a sampled halfspace set an inner approximation.

    ``policy="min"`` takes the smaller of the two subset bounds whenever the
    sharper one is valid.
    """
    base = sample_count(SampleBudget(d, eps, delta, "subset_eq13"))
    if policy == "subset_eq13":
        return base
    if policy == "subset_eq14":
        return sample_count(SampleBudget(d, eps, delta, "subset_eq14"))
    if policy == "min":
        if eps < 0.14:
            return min(base, sample_count(SampleBudget(d, eps, delta, "subset_eq14")))
        return base
    raise ValueError(f"unknown budget policy {policy!r}")


# --------------------------------------------------------------------------- model


@dataclass(frozen=True)
class UncertaintyModel:
    """A(q) = A0 + sum_i q_i A_i, B(q) = B0 + sum_i q_i B_i with q on a box,
    or a discrete mixture whose atoms carry their own (A, B).

    For a mixture, a draw ``q`` is the atom index (stored as a length-1 vector).
    """

    A0: np.ndarray
    B0: np.ndarray
    A_coeffs: np.ndarray
    B_coeffs: np.ndarray
    distribution: str
    lower: np.ndarray
    upper: np.ndarray
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    weights: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.A0.shape[0]

    @property
    def m(self) -> int:
        return self.B0.shape[1]

    @property
    def n_q(self) -> int:
        return 1 if self.is_mixture else self.A_coeffs.shape[0]

    @property
    def is_mixture(self) -> bool:
        return self.distribution == "mixture"

    @classmethod
    def affine(cls, A0, B0, A_coeffs, B_coeffs, lower, upper, distribution="uniform", mean=None, std=None):
        A0 = np.atleast_2d(np.asarray(A0, dtype=float))
        n = A0.shape[0]
        B0 = np.asarray(B0, dtype=float).reshape(n, -1)
        m = B0.shape[1]
        A_coeffs = np.asarray(A_coeffs, dtype=float)
        B_coeffs = np.asarray(B_coeffs, dtype=float)
        A_coeffs = A_coeffs.reshape(-1, n, n) if A_coeffs.size else np.zeros((0, n, n))
        B_coeffs = B_coeffs.reshape(-1, n, m) if B_coeffs.size else np.zeros((0, n, m))
        lower = np.asarray(lower, dtype=float).ravel()
        upper = np.asarray(upper, dtype=float).ravel()
        n_q = A_coeffs.shape[0]
        if B_coeffs.shape[0] != n_q or lower.size != n_q or upper.size != n_q:
            raise ValueError("A_coeffs, B_coeffs and the support box must agree on n_q")
        if distribution not in AFFINE_DISTRIBUTIONS:
            raise ValueError(f"unknown distribution {distribution!r}")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper)) and np.all(lower <= upper)):
            raise ValueError("support box must be bounded with lower <= upper")
        if distribution == "truncated_gaussian":
            if mean is None or std is None:
                raise ValueError("truncated Gaussian needs mean and std")
            mean = np.asarray(mean, dtype=float).ravel()
            std = np.asarray(std, dtype=float).ravel()
            if mean.size != n_q or std.size != n_q or not np.all(std > 0) or not np.all(np.isfinite(mean)):
                raise ValueError("truncated Gaussian needs per-coordinate mean and positive std")
        return cls(A0, B0, A_coeffs, B_coeffs, distribution, lower, upper, mean, std)

    @classmethod
    def mixture(cls, atoms, weights=None):
        atoms = [(np.atleast_2d(np.asarray(A, dtype=float)), np.asarray(B, dtype=float)) for A, B in atoms]
        if not atoms:
            raise ValueError("mixture needs at least one atom")
        n = atoms[0][0].shape[0]
        As = np.stack([A for A, _ in atoms])
        Bs = np.stack([B.reshape(n, -1) for _, B in atoms])
        k = len(atoms)
        w = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=float)
        if w.size != k or np.any(w < 0) or not math.isclose(w.sum(), 1.0, rel_tol=1e-12):
            raise ValueError("weights must be nonnegative and sum to one")
        return cls(As[0], Bs[0], As, Bs, "mixture", np.zeros(1), np.array([k - 1.0]), weights=w)

    @classmethod
    def deterministic(cls, A, B):
        return cls.mixture([(A, B)])


def realize(model: UncertaintyModel, q):
    """(A(q), B(q)) for one q or a batch with trailing axis n_q."""
    q = np.asarray(q)
    if model.is_mixture:
        idx = np.asarray(q, dtype=int)
        if idx.ndim and idx.shape[-1] == 1:
            idx = idx[..., 0]
        return model.A_coeffs[idx], model.B_coeffs[idx]
    q = np.asarray(q, dtype=float)
    A = model.A0 + np.tensordot(q, model.A_coeffs, axes=([-1], [0]))
    B = model.B0 + np.tensordot(q, model.B_coeffs, axes=([-1], [0]))
    return A, B


@dataclass(frozen=True)
class Multisample:
    seed: int
    horizon: int
    draws: np.ndarray  # (n, horizon, n_q)


def draw_q(model: UncertaintyModel, shape, rng: np.random.Generator) -> np.ndarray:
    """iid draws of q with array shape ``shape + (n_q,)``."""
    shape = tuple(shape)
    count = int(np.prod(shape)) if shape else 1
    if model.is_mixture:
        idx = rng.choice(model.weights.size, size=count, p=model.weights)
        return idx.reshape(shape + (1,))
    lo, hi = model.lower, model.upper
    if model.distribution == "uniform":
        u = rng.uniform(size=(count, lo.size))
        return (lo + u * (hi - lo)).reshape(shape + (lo.size,))
    out = np.empty((count, lo.size))
    filled = 0
    attempts = 0
    while filled < count:
        need = count - filled
        z = model.mean + model.std * rng.standard_normal((max(need, 16), lo.size))
        ok = z[np.all((z >= lo) & (z <= hi), axis=1)][:need]
        out[filled : filled + len(ok)] = ok
        filled += len(ok)
        attempts += max(need, 16)
        if attempts > REJECTION_GUARD * max(1, count) and filled < count:
            raise RuntimeError("truncated Gaussian rejection sampling exceeded its attempt guard")
    return out.reshape(shape + (lo.size,))


def draw_multisample(model: UncertaintyModel, n: int, horizon: int, seed: int, tag="constraints", *index) -> Multisample:
    if n < 1 or horizon < 0:
        raise ValueError("need n >= 1 and horizon >= 0")
    rng = stream(seed, tag, *index)
    return Multisample(int(seed), int(horizon), draw_q(model, (n, horizon), rng))


# --------------------------------------------------------------------------- outer bound


@dataclass(frozen=True)
class VertexBound:
    vertices: tuple  # of (A_j, B_j)
    q_vertices: np.ndarray  # the q producing each vertex


MAX_NQ_VERTICES = 12


def vertex_bound(model: UncertaintyModel) -> VertexBound:
    if model.is_mixture:
        k = model.weights.size
        qs = np.arange(k).reshape(k, 1)
    else:
        if model.n_q > MAX_NQ_VERTICES:
            raise ValueError(f"box-corner enumeration limited to n_q <= {MAX_NQ_VERTICES}")
        qs = np.array(list(itertools.product(*zip(model.lower, model.upper))), dtype=float)
        qs = qs.reshape(-1, model.n_q)
        qs = np.unique(qs, axis=0)
    A, B = realize(model, qs)
    return VertexBound(tuple((A[i], B[i]) for i in range(len(qs))), qs)


def closed_loop_vertices(model: UncertaintyModel, K) -> list:
    """[(A_j + B_j K, B_j)] over the outer-bound vertices."""
    K = np.asarray(K, dtype=float).reshape(model.m, model.n)
    return [(A + B @ K, B) for A, B in vertex_bound(model).vertices]
