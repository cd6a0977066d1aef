"""Monte Carlo estimators with standard errors: nested semigroup values, L^p norms, 1D entropies."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .gaussian import ModelParams
from .sde import Ensemble, Potential, simulate_ensemble
from .transport1d import Gaussian1D

N_BOOTSTRAP = 64


@dataclass(frozen=True)
class EstimateWithCI:
    value: float
    stderr: float
    n_outer: int
    n_inner: int
    method: str
    bias_proxy: float = 0.0
    flags: tuple[str, ...] = ()

    def interval(self, k: float = 3.0) -> tuple[float, float]:
        return self.value - k * self.stderr, self.value + k * self.stderr

    def to_dict(self) -> dict:
        return {
            "value": self.value, "stderr": self.stderr, "method": self.method,
            "n_outer": self.n_outer, "n_inner": self.n_inner,
            "bias_proxy": self.bias_proxy, "flags": list(self.flags),
        }


@dataclass
class NestedEstimate:
    """Per-outer-point inner means of ``f(Z_t)`` started at each outer point."""

    points: np.ndarray
    value: np.ndarray
    stderr: np.ndarray
    half_value: np.ndarray
    nonfinite: np.ndarray
    n_inner: int
    t: float
    scheme: str
    h: float

    def __len__(self) -> int:
        return self.value.size

    def estimates(self) -> list[EstimateWithCI]:
        return [
            EstimateWithCI(float(v), float(s), 1, self.n_inner, f"nested_{self.scheme}",
                           flags=("nonfinite",) if bad else ())
            for v, s, bad in zip(self.value, self.stderr, self.nonfinite)
        ]


def _step_size(t: float, h: float | None, scheme: str, rho: float) -> tuple[float, int]:
    if scheme == "exact_gaussian" and h is None:
        return t, 1
    h = 0.01 / math.sqrt(rho) if h is None else h
    n = max(1, math.ceil(t / h - 1e-9))
    return t / n, n


def nested_pt_estimate(f: Callable[[np.ndarray], np.ndarray], outer: Ensemble, pot: Potential,
                       params: ModelParams, t: float, n_inner: int, scheme: str = "baoab",
                       h: float | None = None, seed: int | None = None,
                       workers: int = 1) -> NestedEstimate:
    """Estimate ``P_t f`` at every outer point with ``n_inner`` independent trajectories.

    ``f`` maps an ``N x 2d`` array of states to ``N`` values.  The step is
    ``t / ceil(t / h)``; for ``exact_gaussian`` a single exact step is used by default.
    """
    if n_inner < 2:
        raise ValueError("n_inner must be at least 2")
    if t < 0:
        raise ValueError("t must be nonnegative")
    pts = outer.states
    n_out = pts.shape[0]
    if t == 0:
        vals = np.asarray(f(pts), dtype=float)
        bad = ~np.isfinite(vals)
        return NestedEstimate(pts, np.where(bad, np.nan, vals), np.zeros(n_out),
                              np.where(bad, np.nan, vals), bad, n_inner, 0.0, scheme, 0.0)

    h_eff, n_steps = _step_size(t, h, scheme, params.rho)
    x0 = np.repeat(outer.positions, n_inner, axis=0)
    v0 = np.repeat(outer.velocities, n_inner, axis=0)
    base_seed = outer.seed if seed is None else seed
    inner = Ensemble(x0, v0, 0.0, base_seed + 0x9E3779B97F4A7C15)
    final = simulate_ensemble(inner, pot, params, h_eff, [n_steps * h_eff], scheme, workers=workers)[0]

    fv = np.asarray(f(final.states), dtype=float).reshape(n_out, n_inner)
    bad = ~np.all(np.isfinite(fv), axis=1)
    fv = np.where(np.isfinite(fv), fv, np.nan)
    mean = fv.mean(axis=1)
    se = fv.std(axis=1, ddof=1) / math.sqrt(n_inner)
    half = fv[:, : n_inner // 2].mean(axis=1)
    return NestedEstimate(pts, mean, se, half, bad, n_inner, t, scheme, h_eff)


def _plugin_norm(y: np.ndarray, p: float) -> tuple[float, float]:
    n = y.size
    if p == 1:
        mean_p = y.mean()
        return float(mean_p), float(y.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    yp = y**p
    m = float(yp.mean())
    val = m ** (1.0 / p)
    if n < 2 or m == 0:
        return val, 0.0
    # delta method for m^(1/p)
    se = (1.0 / p) * m ** (1.0 / p - 1.0) * float(yp.std(ddof=1)) / math.sqrt(n)
    return val, se


def norm_with_ci(values, p: float, half_values: Sequence[float] | None = None,
                 n_inner: int | None = None) -> EstimateWithCI:
    """Plug-in ``(mean |Y|^p)^{1/p}`` with a delta-method standard error.

    ``values`` may be a ``NestedEstimate``, a sequence of ``EstimateWithCI`` or raw
    samples.  When inner half-sample means are available the change in the norm
    from using half the inner samples is reported as ``bias_proxy``.
    """
    if not p >= 1:
        raise ValueError("p must be >= 1")
    method = "plugin_samples"
    if isinstance(values, NestedEstimate):
        y = values.value
        half_values = values.half_value if half_values is None else half_values
        n_inner = values.n_inner
        method = "plugin_nested"
    elif len(values) and isinstance(values[0], EstimateWithCI):
        y = np.array([e.value for e in values], dtype=float)
        n_inner = values[0].n_inner if n_inner is None else n_inner
        method = "plugin_nested"
    else:
        y = np.asarray(values, dtype=float)
    flags: list[str] = []
    finite = np.isfinite(y)
    if not np.all(finite):
        flags.append("nonfinite_dropped")
        y = y[finite]
    if y.size == 0:
        raise ValueError("no finite values")
    if np.any(y < 0) and not float(p).is_integer():
        raise ValueError("negative values require an integer exponent")
    y = np.abs(y)
    val, se = _plugin_norm(y, p)
    bias = 0.0
    if half_values is not None:
        hv = np.abs(np.asarray(half_values, dtype=float)[finite])
        bias = abs(val - _plugin_norm(hv, p)[0])
    return EstimateWithCI(val, se, y.size, int(n_inner or 0), method, bias, tuple(flags))


def _histogram_kl(sample: np.ndarray, inner_edges: np.ndarray, ref_mass: np.ndarray) -> tuple[float, int]:
    counts = np.bincount(np.searchsorted(inner_edges, sample, side="right"), minlength=ref_mass.size)
    n = sample.size
    nz = counts > 0
    p = counts[nz] / n
    kl = float(np.sum(p * np.log(p / ref_mass[nz])))
    # Miller-Madow: plug-in entropy is low by (m - 1) / (2N), so the KL is high by the same
    return float(kl - (nz.sum() - 1) / (2.0 * n)), int((~nz).sum())


def marginal_entropy_histogram(ens: Ensemble, axis: str, reference: Gaussian1D, bins: int = 64,
                               n_boot: int = N_BOOTSTRAP, seed: int | None = None) -> EstimateWithCI:
    """Histogram estimate of ``KL(law of the axis marginal | reference)`` for ``d = 1``.

    Bins are uniform over the sample range; the outermost bins absorb the
    reference tails so the reference masses sum to one.
    """
    if ens.d != 1:
        raise ValueError("marginal entropy estimator requires d = 1")
    if bins < 16:
        raise ValueError("bins must be at least 16")
    if axis not in ("x", "v"):
        raise ValueError("axis must be 'x' or 'v'")
    y = (ens.positions if axis == "x" else ens.velocities)[:, 0]
    lo, hi = float(y.min()), float(y.max())
    if hi <= lo:
        hi = lo + 1e-12
    inner = np.linspace(lo, hi, bins + 1)[1:-1]
    cdf = np.concatenate([[0.0], reference.cdf(inner), [1.0]])
    ref_mass = np.maximum(np.diff(cdf), 1e-300)

    kl, empty = _histogram_kl(y, inner, ref_mass)
    rng = np.random.default_rng([ens.seed, 0xB007] if seed is None else seed)
    boots = np.empty(n_boot)
    for b in range(n_boot):
        boots[b] = _histogram_kl(y[rng.integers(0, y.size, y.size)], inner, ref_mass)[0]
    flags = ("empty_bins",) if empty > bins / 2 else ()
    return EstimateWithCI(kl, float(boots.std(ddof=1)), y.size, 0, f"histogram_{axis}", flags=flags)


def gaussian_reference(params: ModelParams, axis: str) -> Gaussian1D:
    """One-dimensional marginal of the stationary law along ``axis``."""
    if params.d != 1:
        raise ValueError("requires d = 1")
    return Gaussian1D(0.0, 1.0 / float(params.H[0, 0]) if axis == "x" else 1.0)

