"""Independent reference computations used as test oracles.

Each oracle is deliberately naive: brute force over row subsets, active
sets, grids or samples, with no code shared with the package under test.
"""

import itertools

import mpmath
import numpy as np
from scipy.optimize import linprog


def lp_vertex_max(c, A, b, tol=1e-9):
    """max c.x over {A x <= b} by enumerating every basic feasible point."""
    n = A.shape[1]
    best = -np.inf
    for rows in itertools.combinations(range(A.shape[0]), n):
        M = A[list(rows)]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        x = np.linalg.solve(M, b[list(rows)])
        if np.all(A @ x <= b + tol * (1 + np.abs(b))):
            best = max(best, float(c @ x))
    return best


def qp_active_set_min(H, c, A, b, tol=1e-9):
    """min 1/2 z'Hz + c'z s.t. A z <= b by enumerating active sets and
    solving each equality-constrained KKT system (strictly convex H)."""
    n = H.shape[0]
    best, arg = np.inf, None
    for k in range(0, min(n, A.shape[0]) + 1):
        for rows in itertools.combinations(range(A.shape[0]), k):
            Aw = A[list(rows)]
            kkt = np.block([[H, Aw.T], [Aw, np.zeros((k, k))]])
            rhs = np.concatenate([-c, b[list(rows)]])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                continue
            z = sol[:n]
            if np.all(A @ z <= b + tol * (1 + np.abs(b))):
                val = 0.5 * z @ H @ z + c @ z
                if val < best:
                    best, arg = val, z
    return best, arg


def min_eig_bisection(M, tol=1e-12):
    """Smallest eigenvalue of a symmetric matrix by bisection on the
    Sylvester inertia count of M - s I (number of negative LDL' pivots)."""
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    radius = np.abs(M).sum(axis=1).max()
    lo, hi = -radius - 1.0, radius + 1.0

    def negatives(s):
        # Gaussian elimination without pivoting; pivots of a symmetric
        # matrix carry its inertia
        A = M - s * np.eye(n)
        count = 0
        for i in range(n):
            p = A[i, i]
            if p == 0.0:
                p = 1e-300
            if p < 0:
                count += 1
            A[i + 1 :, i + 1 :] -= np.outer(A[i + 1 :, i], A[i, i + 1 :]) / p
        return count

    while hi - lo > tol * max(1.0, radius):
        mid = 0.5 * (lo + hi)
        if negatives(mid) >= 1:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def scenario_count_ref(d, eps, delta):
    mpmath.mp.dps = 50
    e = mpmath.e
    v = (1 / mpmath.mpf(eps)) * (e / (e - 1)) * (mpmath.log(1 / mpmath.mpf(delta)) + d - 1)
    return int(mpmath.ceil(v))


def subset_count_ref(d, eps, delta):
    mpmath.mp.dps = 50
    eps, delta = mpmath.mpf(eps), mpmath.mpf(delta)
    v = (5 / eps) * (mpmath.log(4 / delta) + d * mpmath.log(40 / eps))
    return int(mpmath.ceil(v))


def sharp_subset_count_ref(d, eps, delta):
    mpmath.mp.dps = 50
    eps, delta = mpmath.mpf(eps), mpmath.mpf(delta)
    v = (mpmath.mpf("4.1") / eps) * (
        mpmath.log(mpmath.mpf("21.64") / delta) + mpmath.mpf("4.39") * d * mpmath.log(8 * mpmath.e / eps, 2)
    )
    return int(mpmath.ceil(v))


def simulate_states(As, Bs, K, x, v):
    """Step-by-step x_{l+1} = A_l x_l + B_l (K x_l + v_l)."""
    xs = [np.asarray(x, dtype=float)]
    us = []
    for A, B, vl in zip(As, Bs, v):
        u = K @ xs[-1] + vl
        us.append(u)
        xs.append(A @ xs[-1] + B @ u)
    return xs, us


def lp_support(H, h, direction_full):
    """max direction . z over {H z <= h} with scipy's default LP method."""
    res = linprog(-np.asarray(direction_full), A_ub=H, b_ub=h, bounds=[(None, None)] * H.shape[1])
    if res.status == 3:
        return np.inf
    assert res.status == 0, res.message
    return -res.fun


def sampled_subset(a_H, a_h, b_H, b_h, lo, hi, n, rng):
    """False when any uniform point of the box inside a lies outside b."""
    pts = rng.uniform(lo, hi, size=(n, len(lo)))
    in_a = np.all(pts @ a_H.T <= a_h, axis=1)
    in_b = np.all(pts @ b_H.T <= b_h + 1e-12, axis=1)
    return not np.any(in_a & ~in_b)
