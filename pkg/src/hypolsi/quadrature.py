"""Composite Simpson quadrature on dyadically refined grids."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass
class QuadResult:
    value: float
    error: float
    simpson: float
    nodes: np.ndarray
    values: np.ndarray
    converged: bool

    @property
    def n(self) -> int:
        return self.nodes.size


def simpson_uniform(y: np.ndarray, h: float) -> np.ndarray:
    """Composite Simpson along axis 0 for an odd number of equally spaced samples."""
    y = np.asarray(y, dtype=float)
    if y.shape[0] % 2 != 1 or y.shape[0] < 3:
        raise ValueError("composite Simpson needs an odd number (>= 3) of samples")
    return h / 3.0 * (y[0] + y[-1] + 4.0 * y[1:-1:2].sum(axis=0) + 2.0 * y[2:-1:2].sum(axis=0))


def dyadic_simpson(func: Callable[[float], np.ndarray], a: float, b: float, n0: int = 129,
                   rtol: float = 1e-8, atol: float = 1e-14, max_nodes: int = 16385) -> QuadResult:
    """Integrate ``func`` over ``[a, b]``, halving the step until Simpson converges.

    ``func`` may return an array; convergence is judged on the first component.
    The error estimate is ``|S_n - S_{n/2}| / 15`` and the returned value is the
    Richardson-extrapolated ``S_n + (S_n - S_{n/2}) / 15``.
    """
    if (n0 - 1) & (n0 - 2) != 0 or n0 < 3:
        raise ValueError("n0 must be 2^k + 1")
    nodes = np.linspace(a, b, n0)
    vals = np.array([np.atleast_1d(func(t)) for t in nodes])
    prev = simpson_uniform(vals, (b - a) / (n0 - 1))
    while True:
        mid = 0.5 * (nodes[:-1] + nodes[1:])
        mvals = np.array([np.atleast_1d(func(t)) for t in mid])
        n = 2 * nodes.size - 1
        new_nodes = np.empty(n)
        new_vals = np.empty((n,) + vals.shape[1:])
        new_nodes[0::2], new_nodes[1::2] = nodes, mid
        new_vals[0::2], new_vals[1::2] = vals, mvals
        nodes, vals = new_nodes, new_vals
        cur = simpson_uniform(vals, (b - a) / (n - 1))
        err = np.abs(cur - prev) / 15.0
        ok = err[0] <= max(rtol * abs(cur[0]), atol)
        if ok or n >= max_nodes:
            best = cur + (cur - prev) / 15.0
            return QuadResult(
                value=best if best.size > 1 else float(best[0]),
                error=float(err[0]),
                simpson=cur if cur.size > 1 else float(cur[0]),
                nodes=nodes,
                values=vals if vals.shape[1] > 1 else vals[:, 0],
                converged=bool(ok),
            )
        prev = cur
