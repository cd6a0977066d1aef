"""Quantile-based optimal transport on the line for grid densities.

Densities ``q`` are relative to a one-dimensional Gaussian reference
``mu_x = N(m, s^2)``; currents ``j`` are relative to ``mu_x`` as well, so that
``j / q`` is the conditional mean velocity.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import trapezoid
from scipy.stats import norm

_CDF_FLOOR = 1e-300


@dataclass(frozen=True)
class Gaussian1D:
    mean: float = 0.0
    var: float = 1.0

    @property
    def std(self) -> float:
        return math.sqrt(self.var)

    @property
    def rho(self) -> float:
        """LSI constant of this Gaussian."""
        return 1.0 / self.var

    def pdf(self, x):
        return norm.pdf(x, loc=self.mean, scale=self.std)

    def cdf(self, x):
        return norm.cdf(x, loc=self.mean, scale=self.std)

    def ppf(self, u):
        return norm.ppf(u, loc=self.mean, scale=self.std)


@dataclass
class GridDensity1D:
    nodes: np.ndarray
    q_values: np.ndarray
    j_values: np.ndarray
    mass: float
    mu_x: Gaussian1D = field(default_factory=Gaussian1D)
    rescale: float = 1.0

    def weights(self) -> np.ndarray:
        """Lebesgue density of ``mu_x`` at the nodes."""
        return self.mu_x.pdf(self.nodes)

    def integrate(self, values) -> float:
        """Trapezoidal ``int values d mu_x`` on the grid."""
        return float(trapezoid(np.asarray(values) * self.weights(), self.nodes))

    def ent_x(self) -> float:
        q = self.q_values
        qlogq = np.where(q > 0, q * np.log(np.where(q > 0, q, 1.0)), 0.0)
        return self.integrate(qlogq)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["node", "q", "j"])
        for x, q, j in zip(self.nodes, self.q_values, self.j_values):
            w.writerow([repr(float(x)), repr(float(q)), repr(float(j))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, mu_x: Gaussian1D | None = None) -> GridDensity1D:
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows or set(rows[0]) != {"node", "q", "j"}:
            raise ValueError("grid density CSV must have columns node,q,j")
        nodes = np.array([float(r["node"]) for r in rows])
        q = np.array([float(r["q"]) for r in rows])
        j = np.array([float(r["j"]) for r in rows])
        g = cls(nodes, q, j, 0.0, mu_x or Gaussian1D())
        _validate(g)
        g.mass = g.integrate(q)
        return g


def _validate(g: GridDensity1D) -> None:
    if g.nodes.ndim != 1 or g.nodes.size < 3 or np.any(np.diff(g.nodes) <= 0):
        raise ValueError("nodes must be a strictly increasing vector with >= 3 entries")
    if g.q_values.shape != g.nodes.shape or g.j_values.shape != g.nodes.shape:
        raise ValueError("q and j must have one value per node")
    if np.any(g.q_values < 0):
        raise ValueError("negative density values")


def gaussian_density(mean: float, var: float) -> Callable:
    return lambda x: norm.pdf(x, loc=mean, scale=math.sqrt(var))


def mixture_density(weights, means, stds) -> Callable:
    w = np.asarray(weights, float)
    w = w / w.sum()

    def pdf(x):
        x = np.asarray(x, float)
        return sum(wi * norm.pdf(x, loc=m, scale=s) for wi, m, s in zip(w, means, stds))

    return pdf


def default_grid(mu_x: Gaussian1D, n: int = 4096, half_width: float = 8.0) -> np.ndarray:
    return np.linspace(mu_x.mean - half_width * mu_x.std, mu_x.mean + half_width * mu_x.std, n)


def build_grid_density(density: Callable, grid, mu_x: Gaussian1D | None = None,
                       mean_velocity: Callable | None = None) -> GridDensity1D:
    """Tabulate ``q = p / mu_x`` for a Lebesgue density ``p`` and normalize to unit mass.

    ``mean_velocity(x)`` is the conditional mean velocity; the current is then
    ``j = q * mean_velocity``.  Without it the current is zero.
    """
    mu_x = mu_x or Gaussian1D()
    nodes = np.asarray(grid, dtype=float)
    if nodes[0] > mu_x.mean - 4 * mu_x.std or nodes[-1] < mu_x.mean + 4 * mu_x.std:
        raise ValueError("insufficient grid coverage: need at least 8 standard deviations of mu_x")
    p = np.asarray(density(nodes), dtype=float)
    if np.any(p < 0):
        raise ValueError("negative density values")
    w = mu_x.pdf(nodes)
    q = np.where(w > 0, p / np.where(w > 0, w, 1.0), 0.0)
    raw_mass = float(trapezoid(q * w, nodes))
    if not raw_mass > 0:
        raise ValueError("density has zero mass on the grid")
    q = q / raw_mass
    j = np.zeros_like(q) if mean_velocity is None else q * np.asarray(mean_velocity(nodes), float)
    g = GridDensity1D(nodes, q, j, 1.0, mu_x, rescale=1.0 / raw_mass)
    _validate(g)
    g.mass = g.integrate(q)
    return g


@dataclass
class BrenierMap1D:
    T: np.ndarray
    xi: np.ndarray
    w2: float
    cdf: np.ndarray


def _cell_cdf(x: np.ndarray, qv: np.ndarray, mu_x: Gaussian1D) -> tuple[np.ndarray, np.ndarray]:
    """Lower and upper CDF of ``q mu_x`` with ``q`` piecewise linear on the grid.

    Each cell is integrated against the Gaussian in closed form; ``q`` is held
    constant beyond the end nodes.  Returns ``(F, 1 - F)`` normalized to mass one,
    with the upper tail accumulated from the right to keep relative precision.
    """
    m, s = mu_x.mean, mu_x.std
    Phi, phi = mu_x.cdf(x), mu_x.pdf(x)
    sf = norm.sf(x, loc=m, scale=s)
    a = x[:-1]
    mass0 = np.where(a < m, Phi[1:] - Phi[:-1], sf[:-1] - sf[1:])
    # int (x - a) mu_x dx over the cell
    mom1 = (m - a) * mass0 - s * s * (phi[1:] - phi[:-1])
    slope = np.diff(qv) / np.diff(x)
    cell = np.maximum(qv[:-1] * mass0 + slope * mom1, 0.0)
    left = qv[0] * Phi[0]
    right = qv[-1] * sf[-1]
    lower = left + np.concatenate([[0.0], np.cumsum(cell)])
    upper = right + np.concatenate([np.cumsum(cell[::-1])[::-1], [0.0]])
    total = lower[-1] + right
    return np.maximum.accumulate(lower / total), np.minimum.accumulate(upper / total)


def brenier_quantile_map(q: GridDensity1D, mu_x: Gaussian1D | None = None) -> BrenierMap1D:
    """Monotone map ``F_mu^{-1} o F_q`` pushing ``q mu_x`` onto ``mu_x``."""
    mu_x = mu_x or q.mu_x
    if np.any(q.q_values < 0):
        raise ValueError("non-monotone CDF: negative density values")
    F, S = _cell_cdf(q.nodes, q.q_values, mu_x)
    T = np.where(F <= 0.5, mu_x.ppf(np.clip(F, _CDF_FLOOR, 1.0)),
                 norm.isf(np.clip(S, _CDF_FLOOR, 1.0), loc=mu_x.mean, scale=mu_x.std))
    T = np.maximum.accumulate(T)
    xi = q.nodes - T
    w2_sq = float(trapezoid(xi * xi * q.q_values * q.weights(), q.nodes))
    return BrenierMap1D(T=T, xi=xi, w2=math.sqrt(max(w2_sq, 0.0)), cdf=F)


def sample_from_grid(q: GridDensity1D, n: int, rng: np.random.Generator, cdf=None) -> np.ndarray:
    """Inverse-CDF samples from ``q mu_x``."""
    if cdf is None:
        cdf = brenier_quantile_map(q).cdf
    u = rng.random(n)
    # left-continuous inverse on the flat parts of the CDF
    keep = np.concatenate([[True], np.diff(cdf) > 0])
    return np.interp(u, cdf[keep], q.nodes[keep])


@dataclass
class CorrectorReport:
    c_ot: float
    J: float
    ent_x: float
    w2: float
    ent_v: float
    kinetic_bound_ok: bool
    corrector_bound_ok: bool
    corrector_bound: float

    @property
    def bounds_ok(self) -> bool:
        return self.kinetic_bound_ok and self.corrector_bound_ok


def corrector_1d(q: GridDensity1D, ent_v: float, tol: float = 1e-10) -> CorrectorReport:
    """OT corrector ``int j xi d mu_x`` and current energy ``int j^2 / q d mu_x``."""
    qv, jv = q.q_values, q.j_values
    zero = qv == 0
    if np.any(zero & (jv != 0)):
        raise ValueError("current is nonzero where the density vanishes")
    bm = brenier_quantile_map(q)
    c_ot = q.integrate(jv * bm.xi)
    J = q.integrate(np.where(zero, 0.0, jv * jv / np.where(zero, 1.0, qv)))
    ent_x = q.ent_x()
    bound = math.sqrt(max(2.0 / q.mu_x.rho * ent_x * J, 0.0))
    return CorrectorReport(
        c_ot=c_ot, J=J, ent_x=ent_x, w2=bm.w2, ent_v=ent_v,
        kinetic_bound_ok=J <= 2.0 * ent_v + tol,
        corrector_bound_ok=abs(c_ot) <= bound + tol,
        corrector_bound=bound,
    )
