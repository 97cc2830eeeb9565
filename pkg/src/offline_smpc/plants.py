"""Ready-made problem instances used by the tests, scripts and example configs."""

from __future__ import annotations

import numpy as np

from .prediction import DesignSpec, lqr_gain, nominal_lqr_gain
from .uncertainty import UncertaintyModel


def rotation_example(gamma=0.5, eps=0.1, delta=0.05, T=1):
    """x+ = [[1, g], [-g, 1]] x + u with the random-direction input chance
    constraint [cos a, sin a] u <= 1, a uniform on the circle.

    The chance-constraint set is the disc of radius 1/cos(eps*pi).
    """
    A = np.array([[1.0, gamma], [-gamma, 1.0]])
    B = np.eye(2)
    model = UncertaintyModel.deterministic(A, B)
    Q = np.eye(2)
    R = np.eye(2)
    K = lqr_gain(A, B, Q, R)
    spec = DesignSpec(Q=Q, R=R, K=K, T=T, H_x=np.zeros((0, 2)), eps_x=np.zeros(0), H_u=np.zeros((0, 2)),
                      eps_h=0.1, delta=delta, input_directions=(eps,))
    return model, spec


def disc_radius(eps):
    return 1.0 / np.cos(eps * np.pi)


def direction_violation_probability(u):
    """P{[cos a, sin a] u > 1} for a uniform on the circle."""
    r = np.linalg.norm(np.atleast_2d(u), axis=-1)
    return np.where(r > 1.0, np.arccos(np.minimum(1.0, 1.0 / np.maximum(r, 1e-300))) / np.pi, 0.0)


def test_plant(T=3, eps=0.2, eps_h=0.2, delta=0.05):
    """Two states, one input, two uniformly distributed parameters scaling the
    coupling term and the input gain."""
    A0 = np.array([[1.0, 0.15], [-0.1, 0.9]])
    A1 = np.array([[0.0, 0.05], [0.05, 0.0]])
    B0 = np.array([[0.0], [0.3]])
    B2 = np.array([[0.0], [0.06]])
    model = UncertaintyModel.affine(A0, B0, [A1, np.zeros((2, 2))], [np.zeros((2, 1)), B2],
                                    lower=[-1.0, -1.0], upper=[1.0, 1.0])
    Q = np.eye(2)
    R = np.array([[1.0]])
    K = nominal_lqr_gain(model, Q, R)
    H_x = np.array([[1.0 / 3.0, 0.0], [0.0, 1.0 / 2.0], [-1.0 / 4.0, 0.0], [0.0, -1.0 / 3.0]])
    H_u = np.array([[1.0], [-1.0]])
    spec = DesignSpec(Q=Q, R=R, K=K, T=T, H_x=H_x, eps_x=np.full(4, eps), H_u=H_u, eps_h=eps_h, delta=delta)
    return model, spec


def deadbeat_scalar(T=2):
    """x+ = u with K = 0 and |x| <= 1, |u| <= 1."""
    model = UncertaintyModel.deterministic(np.zeros((1, 1)), np.ones((1, 1)))
    spec = DesignSpec(Q=np.eye(1), R=np.eye(1), K=np.zeros((1, 1)), T=T, H_x=np.array([[1.0], [-1.0]]),
                      eps_x=np.array([0.1, 0.1]), H_u=np.array([[1.0], [-1.0]]), eps_h=0.1, delta=0.05)
    return model, spec
