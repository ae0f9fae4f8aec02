"""Barycentric grids over the price simplex and flow-field rows for plots."""

from __future__ import annotations

from itertools import combinations

import numpy as np

from .demand import DEFAULT_TIE_TOL
from .excess import min_norm_certificate
from .model import Market
from .potential import potential_f


def barycentric_grid(m: int, pitch: float, total: float = 1.0) -> np.ndarray:
    """All points (k_1, ..., k_m)/N * total with integer k summing to N.

    N = round(1/pitch). Points are exact integer ratios, so grid nodes such
    as the simplex midpoint come out bit-exact. Row count for m = 3 is
    (N+1)(N+2)/2.
    """
    n_div = int(round(1.0 / pitch))
    if n_div < 1:
        raise ValueError("pitch must be at most 1")
    pts = []
    # Stars and bars: place m-1 separators among N+m-1 slots.
    for seps in combinations(range(n_div + m - 1), m - 1):
        prev = -1
        parts = []
        for s in seps:
            parts.append(s - prev - 1)
            prev = s
        parts.append(n_div + m - 2 - prev)
        pts.append(parts)
    arr = np.array(pts, dtype=float) / n_div * total
    return arr


def grid_rows(market: Market, pitch: float,
              tie_tol: float = DEFAULT_TIE_TOL) -> list[tuple]:
    """Per grid point: prices, f, and the minimum-norm relative excess demand.

    At linear ties the flow shown is the minimum-Euclidean-norm element of the
    correspondence (the tie polytope), matching how the vector field is drawn.
    """
    rows = []
    for p in barycentric_grid(market.m, pitch, market.budget_sum):
        f = potential_f(market, p).f
        cert = min_norm_certificate(market, p, tie_tol)
        rows.append((tuple(float(v) for v in p), f,
                     tuple(float(v) for v in cert.zt)))
    return rows
