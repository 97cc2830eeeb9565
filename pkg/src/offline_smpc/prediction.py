"""Per-sample prediction matrices, the expected quadratic cost matrix and the
terminal ingredients (K, P, X_T) of the prestabilized policy u = Kx + v.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import geometry
from .geometry import Polytope
from .optkernel import min_eigenvalue
from .uncertainty import UncertaintyModel, closed_loop_vertices, draw_q, realize, stream

ENUMERATION_LIMIT = 1_000_000
CHUNK = 4096


class DesignError(RuntimeError):
    """The offline design cannot proceed (assumption violated, empty set...)."""


@dataclass(frozen=True)
class DesignSpec:
    """Problem data of the offline design.

    ``H_x`` rows carry individual risk levels ``eps_x``; ``H_u`` rows are hard
    on the applied input and sampled with risk ``eps_h`` on predicted inputs.
    ``input_directions`` lists risk levels of input chance constraints
    a u <= 1 whose row a is uniformly distributed on the unit sphere.
    """

    Q: np.ndarray
    R: np.ndarray
    K: np.ndarray
    T: int
    H_x: np.ndarray
    eps_x: np.ndarray
    H_u: np.ndarray
    eps_h: float
    delta: float
    input_directions: tuple = ()
    budget_policy: str = "subset_eq13"
    P: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        n, m = Q.shape[0], R.shape[0]
        K = np.asarray(self.K, dtype=float).reshape(m, n)
        H_x = np.asarray(self.H_x, dtype=float).reshape(-1, n)
        H_u = np.asarray(self.H_u, dtype=float).reshape(-1, m)
        eps_x = np.asarray(self.eps_x, dtype=float).ravel()
        if eps_x.size != H_x.shape[0]:
            raise ValueError("one risk level per state constraint row")
        if self.T < 1:
            raise ValueError("horizon must be >= 1")
        if min_eigenvalue(Q) <= 0 or min_eigenvalue(R) <= 0:
            raise ValueError("Q and R must be positive definite")
        for eps in [*eps_x, self.eps_h, self.delta, *self.input_directions]:
            if not 0.0 < eps < 1.0:
                raise ValueError("risk and confidence levels must lie in (0, 1)")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "H_x", H_x)
        object.__setattr__(self, "H_u", H_u)
        object.__setattr__(self, "eps_x", eps_x)
        object.__setattr__(self, "input_directions", tuple(float(e) for e in self.input_directions))
        if self.P is not None:
            object.__setattr__(self, "P", np.atleast_2d(np.asarray(self.P, dtype=float)))

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def m(self) -> int:
        return self.R.shape[0]

    @property
    def n_dec(self) -> int:
        return self.T * self.m

    def with_P(self, P) -> DesignSpec:
        import dataclasses

        return dataclasses.replace(self, P=P)


def lqr_gain(A, B, Q, R):
    """Gain K of u = Kx minimizing the nominal infinite-horizon LQ cost."""
    P = scipy.linalg.solve_discrete_are(A, B, Q, R)
    return -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)


def nominal_lqr_gain(model: UncertaintyModel, Q, R):
    """LQR gain of the mean-parameter system (convenience, not required)."""
    if model.is_mixture:
        A = np.tensordot(model.weights, model.A_coeffs, axes=1)
        B = np.tensordot(model.weights, model.B_coeffs, axes=1)
    else:
        mid = model.mean if model.mean is not None else 0.5 * (model.lower + model.upper)
        A, B = realize(model, mid)
    return lqr_gain(A, B, np.atleast_2d(Q), np.atleast_2d(R))


@dataclass(frozen=True)
class PredictionEnsemble:
    """x_l = Phi0[l] x + Phiu[l] v for l = 0..steps (leading axis: sample).

    ``T`` is the decision horizon fixing the width T*m of ``Phiu``; the
    predicted length ``steps`` may be shorter.
    """

    Phi0: np.ndarray  # (N, steps+1, n, n)
    Phiu: np.ndarray  # (N, steps+1, n, Tm)
    K: np.ndarray
    T: int

    @property
    def steps(self) -> int:
        return self.Phi0.shape[1] - 1

    def gamma(self, l):
        """Selector of block l in the stacked decision vector."""
        m = self.K.shape[0]
        G = np.zeros((m, self.T * m))
        G[:, l * m : (l + 1) * m] = np.eye(m)
        return G

    def state_rows(self, l):
        """(N, n, n+Tm) matrices mapping (x, v) to x_l."""
        return np.concatenate([self.Phi0[:, l], self.Phiu[:, l]], axis=-1)

    def input_rows(self, l):
        """(N, m, n+Tm) matrices mapping (x, v) to u_l = K x_l + v_l."""
        S = np.einsum("ij,njk->nik", self.K, self.state_rows(l))
        G = first_input_map(self.K, self.T, l)
        G[:, : self.K.shape[1]] = 0.0
        return S + G[None]


def first_input_map(K, T, l=0):
    """[K, Gamma_l]: maps (x, v) to K x + v_l."""
    m, n = K.shape
    G = np.zeros((m, n + T * m))
    G[:, :n] = K
    G[:, n + l * m : n + (l + 1) * m] = np.eye(m)
    return G


def build_prediction(model: UncertaintyModel, q_seq, K, T=None) -> PredictionEnsemble:
    """Solution matrices for one sequence (L, n_q) or a batch (N, L, n_q).

    The decision horizon ``T`` defaults to L and must satisfy T >= L.
    """
    q_seq = np.asarray(q_seq)
    if q_seq.ndim == 2:
        q_seq = q_seq[None]
    N, L = q_seq.shape[:2]
    T = L if T is None else int(T)
    if L > T:
        raise ValueError(f"sequence length {L} exceeds the horizon {T}")
    n, m = model.n, model.m
    K = np.asarray(K, dtype=float).reshape(m, n)
    A, B = realize(model, q_seq)  # (N, L, n, n), (N, L, n, m)
    if A.shape[-2:] != (n, n):
        raise ValueError("model and sequence dimensions disagree")
    Acl = A + B @ K
    Phi0 = np.empty((N, L + 1, n, n))
    Phiu = np.zeros((N, L + 1, n, T * m))
    Phi0[:, 0] = np.eye(n)
    for l in range(L):
        Phi0[:, l + 1] = Acl[:, l] @ Phi0[:, l]
        Phiu[:, l + 1] = Acl[:, l] @ Phiu[:, l]
        Phiu[:, l + 1, :, l * m : (l + 1) * m] += B[:, l]
    return PredictionEnsemble(Phi0, Phiu, K, T)


@dataclass(frozen=True)
class CostMatrix:
    Qtilde: np.ndarray
    mc_samples: int
    seed: int
    exact: bool


def _cost_terms(ens: PredictionEnsemble, Q, R, P, weights):
    """Weighted sum over samples of the bracketed quadratic form."""
    T = ens.T
    if ens.steps != T:
        raise ValueError("cost needs predictions over the full horizon")
    d = ens.Phi0.shape[2] + ens.Phiu.shape[3]
    out = np.zeros((d, d))
    for l in range(T + 1):
        S = ens.state_rows(l)
        W = P if l == T else Q
        out += np.einsum("n,nid,ij,nje->de", weights, S, W, S)
        if l < T:
            U = ens.input_rows(l)
            out += np.einsum("n,nid,ij,nje->de", weights, U, R, U)
    return out


def _mixture_sequences(model: UncertaintyModel, T):
    k = model.weights.size
    if k**T > ENUMERATION_LIMIT:
        return None
    seqs = np.array(list(itertools.product(range(k), repeat=T)), dtype=int).reshape(-1, T)
    probs = np.prod(model.weights[seqs], axis=1) if T else np.ones(1)
    return seqs[..., None], probs


def build_cost_matrix(model: UncertaintyModel, spec: DesignSpec, mc_samples: int, seed: int, P=None) -> CostMatrix:
    """Q~ with J_T(x, v) = [x; v]' Q~ [x; v].

    Discrete mixtures with at most 10^6 atom sequences are integrated exactly;
    otherwise a sample average over ``mc_samples`` horizon draws is used.
    """
    if mc_samples < 1:
        raise ValueError("mc_samples must be >= 1")
    P = spec.P if P is None else np.atleast_2d(P)
    if P is None:
        raise ValueError("terminal weight P is required")
    T = spec.T
    d = spec.n + spec.n_dec
    total = np.zeros((d, d))
    exact = False
    if model.is_mixture:
        enum = _mixture_sequences(model, T)
        if enum is not None:
            seqs, probs = enum
            for start in range(0, len(seqs), CHUNK):
                ens = build_prediction(model, seqs[start : start + CHUNK], spec.K, T)
                total += _cost_terms(ens, spec.Q, spec.R, P, probs[start : start + CHUNK])
            exact = True
    if not exact:
        rng = stream(seed, "cost")
        qs = draw_q(model, (mc_samples, T), rng)
        w = np.full(mc_samples, 1.0 / mc_samples)
        for start in range(0, mc_samples, CHUNK):
            ens = build_prediction(model, qs[start : start + CHUNK], spec.K, T)
            total += _cost_terms(ens, spec.Q, spec.R, P, w[start : start + CHUNK])
    return CostMatrix(0.5 * (total + total.T), int(mc_samples), int(seed), exact)


def stage_cost_sum(model, spec: DesignSpec, P, x, v, q_seq):
    """Direct evaluation of the finite-horizon cost along one trajectory."""
    n, m, T = spec.n, spec.m, spec.T
    v = np.asarray(v, dtype=float).reshape(T, m)
    xl = np.asarray(x, dtype=float)
    total = 0.0
    for l in range(T):
        A, B = realize(model, q_seq[l])
        u = spec.K @ xl + v[l]
        total += xl @ spec.Q @ xl + u @ spec.R @ u
        xl = A @ xl + B @ u
    return total + xl @ P @ xl


# --------------------------------------------------------------------------- terminal ingredients


@dataclass(frozen=True)
class TerminalWeight:
    P: np.ndarray
    residual_min_eig: float
    iterations: int
    n_draws: int
    seed: int


def closed_loop_second_moment(model: UncertaintyModel, K, n_draws: int, seed: int):
    """Matrix M with vec(E^[Acl' X Acl]) = M vec(X) for the fixed sample-average
    (or exact mixture) operator E^."""
    n = model.n
    K = np.asarray(K, dtype=float).reshape(model.m, n)
    if model.is_mixture:
        A, B = model.A_coeffs, model.B_coeffs
        w = model.weights
    else:
        q = draw_q(model, (n_draws,), stream(seed, "terminal"))
        A, B = realize(model, q)
        w = np.full(n_draws, 1.0 / n_draws)
    Acl = A + B @ K
    # (Acl' X Acl)_{bd} = sum_ac Acl_ab X_ac Acl_cd  ->  row index (b,d), column (a,c)
    M = np.einsum("k,kab,kcd->bdac", w, Acl, Acl).reshape(n * n, n * n)
    return M


def expected_quadratic(M, X):
    n = X.shape[0]
    return (M @ X.reshape(-1)).reshape(n, n)


def compute_terminal_P(model: UncertaintyModel, spec: DesignSpec, n_draws=20_000, seed=0, margin=1e-6,
                       max_iter=10_000) -> TerminalWeight:
    """Fixed point of P = Q + K'RK + E^[Acl' P Acl], inflated by (1 + margin)."""
    S = spec.Q + spec.K.T @ spec.R @ spec.K
    M = closed_loop_second_moment(model, spec.K, n_draws, seed)
    if np.abs(np.linalg.eigvals(M)).max() >= 1.0:
        raise DesignError("K is not mean-square stabilizing: the closed-loop second moment does not contract")
    P = S.copy()
    for it in range(1, max_iter + 1):
        P_next = S + expected_quadratic(M, P)
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            P = P_next
            break
        if np.abs(P_next - P).max() <= 1e-13 * max(1.0, np.abs(P_next).max()):
            P = P_next
            break
        P = P_next
    else:
        raise DesignError("terminal weight iteration did not converge: K is not mean-square stabilizing")
    if not np.all(np.isfinite(P)):
        raise DesignError("terminal weight iteration diverged: K is not mean-square stabilizing")
    P = (1.0 + margin) * P
    residual = P - S - expected_quadratic(M, P)
    return TerminalWeight(P, min_eigenvalue(0.5 * (residual + residual.T)), it, int(n_draws), int(seed))


def admissible_state_set(model: UncertaintyModel, spec: DesignSpec) -> Polytope:
    """{x | H_x x <= 1, H_u K x <= 1}."""
    H = np.vstack([spec.H_x, spec.H_u @ spec.K])
    return Polytope(H, np.ones(H.shape[0]))


def compute_terminal_set(model: UncertaintyModel, spec: DesignSpec) -> Polytope:
    """Maximal robust positively invariant set of the admissible region under
    u = Kx, rescaled to the H_T x <= 1 form."""
    X = admissible_state_set(model, spec)
    if X.n_rows == 0:
        return X
    Acl = [A for A, _ in closed_loop_vertices(model, spec.K)]
    res = geometry.max_robust_positively_invariant(X, Acl)
    if not res.converged:
        raise DesignError(f"terminal set recursion failed: {res.reason}")
    if res.reason == "empty" or geometry.is_empty(res.polytope):
        raise DesignError("terminal set is empty")
    term = res.polytope
    if np.any(term.rhs <= 0):
        raise DesignError("terminal set does not contain the origin in its interior")
    return term.scaled_to_unit_rhs()
