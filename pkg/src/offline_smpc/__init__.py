"""Stochastic MPC for linear systems with parametric uncertainty, designed by
offline constraint sampling."""

__version__ = "0.1.0"
