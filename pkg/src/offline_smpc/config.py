"""Global numeric settings shared by every module.

One tolerance regime is used throughout so that a set computed in one stage
is interpreted identically (membership, redundancy, containment) in the next.
"""

from __future__ import annotations

import contextlib
import dataclasses
from dataclasses import dataclass


@dataclass
class Settings:
    # primal feasibility, relative to 1 + ||rhs||_inf
    feas_tol: float = 1e-9
    # stationarity / complementarity of returned optima
    kkt_tol: float = 1e-7
    # a row is redundant when its maximum over the other rows is <= rhs + redundancy_tol
    redundancy_tol: float = 1e-9
    # relative tolerance of the set-equality test ending invariant-set recursions
    set_equal_tol: float = 1e-6
    # Chebyshev radius below which a polytope is treated as having empty interior
    interior_tol: float = 1e-9
    symmetry_tol: float = 1e-10
    invariance_max_iter: int = 200
    fm_row_cap: int = 20_000
    lp_max_iter: int = 100_000
    qp_max_iter: int = 2_000
    threads: int = 1


settings = Settings()


@contextlib.contextmanager
def override(**changes):
    """Temporarily change fields of the global :data:`settings`."""
    saved = dataclasses.asdict(settings)
    for key, value in changes.items():
        if not hasattr(settings, key):
            raise AttributeError(f"unknown setting {key!r}")
        setattr(settings, key, value)
    try:
        yield settings
    finally:
        for key, value in saved.items():
            setattr(settings, key, value)


def parallel_map(fn, items):
    """Order-preserving map over ``items`` using ``settings.threads`` workers."""
    items = list(items)
    if settings.threads <= 1 or len(items) < 2:
        return [fn(item) for item in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=settings.threads) as pool:
        return list(pool.map(fn, items))
