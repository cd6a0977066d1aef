"""Closed-form engine for the quadratic potential ``U(x) = x^T H x / 2``.

Phase-space vectors are ``z = (x, v)`` in ``R^{2d}``.  The reference Gibbs
measure is ``mu = N(0, blockdiag(H^{-1}, I))``.  Laws are Gaussian, test
functions are exponential-quadratic, and both classes are closed under the
Langevin semigroup, so every functional is a finite-dimensional linear-algebra
expression.

Semigroup convention: ``apply_semigroup(f, ..., adjoint=False)`` is the Markov
(observable) semigroup ``z -> E[f(Z_t) | Z_0 = z]``.  The adjoint in
``L^2(mu)`` is the velocity-flipped conjugate, and it is the operator that
evolves densities relative to ``mu``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import expm

SPD_TOL = 1e-10


class IntegrabilityError(ValueError):
    """A Gaussian integral of an exp-quadratic diverges."""

    def __init__(self, message: str, eigenvalue: float):
        self.eigenvalue = float(eigenvalue)
        super().__init__(f"{message} (offending eigenvalue {self.eigenvalue:.3e})")


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def _check_spd(a: np.ndarray, what: str) -> None:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{what} must be a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(a))))
    if np.max(np.abs(a - a.T)) > 1e-12 * scale:
        raise ValueError(f"{what} is not symmetric")
    w = np.linalg.eigvalsh(_sym(a))
    if w[0] <= SPD_TOL * max(1.0, w[-1]):
        raise ValueError(f"{what} is not positive definite (smallest eigenvalue {w[0]:.3e})")


def sym_sqrt(a: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(_sym(a))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def sym_inv_sqrt(a: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(_sym(a))
    return (V / np.sqrt(w)) @ V.T


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Quadratic-potential model: dimension, LSI constant, friction ratio, Hessian.

    ``H`` defaults to ``rho * I``.  When given, its smallest eigenvalue must be
    ``rho`` so that ``rho`` is the LSI constant of the spatial marginal.
    """

    rho: float
    Gamma: float
    d: int = 1
    H: np.ndarray | None = None

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if not self.Gamma > 0:
            raise ValueError("Gamma must be positive")
        if self.H is None:
            H = self.rho * np.eye(self.d)
        else:
            H = np.atleast_2d(np.asarray(self.H, dtype=float))
            object.__setattr__(self, "d", H.shape[0])
            _check_spd(H, "H")
            lo = np.linalg.eigvalsh(_sym(H))[0]
            if abs(lo - self.rho) > 1e-10 * self.rho:
                raise ValueError(
                    f"smallest eigenvalue of H ({lo:.12g}) must equal rho ({self.rho:.12g})"
                )
            H = _sym(H)
        H.setflags(write=False)
        object.__setattr__(self, "H", H)

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return (self.rho, self.Gamma, self.d) == (other.rho, other.Gamma, other.d) and \
            np.array_equal(self.H, other.H)

    __hash__ = None

    @property
    def gamma(self) -> float:
        return self.Gamma * math.sqrt(self.rho)

    @property
    def dim(self) -> int:
        return 2 * self.d

    def to_dict(self) -> dict:
        return {"d": self.d, "rho": self.rho, "Gamma": self.Gamma, "gamma": self.gamma,
                "H": self.H.tolist()}


@dataclass(frozen=True, eq=False)
class GaussianLaw:
    mean: np.ndarray
    cov: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, GaussianLaw):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.cov, other.cov)

    __hash__ = None

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).copy()
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float)).copy()
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"cov shape {cov.shape} does not match mean size {mean.size}")
        _check_spd(cov, "covariance")
        cov = _sym(cov)
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def logpdf(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(z)
        L = np.linalg.cholesky(self.cov)
        y = np.linalg.solve(L, (z - self.mean).T)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        return -0.5 * np.sum(y * y, axis=0) - 0.5 * logdet - 0.5 * self.dim * math.log(2 * math.pi)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        L = np.linalg.cholesky(self.cov)
        return self.mean + rng.standard_normal((n, self.dim)) @ L.T

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "cov": self.cov.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> GaussianLaw:
        return cls(np.asarray(d["mean"], float), np.asarray(d["cov"], float))


@dataclass(frozen=True, eq=False)
class ExpQuadratic:
    """The positive function ``z -> exp(c + b.z + z^T Q z / 2)``."""

    c: float
    b: np.ndarray
    Q: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, ExpQuadratic):
            return NotImplemented
        return self.c == other.c and np.array_equal(self.b, other.b) and np.array_equal(self.Q, other.Q)

    __hash__ = None

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.b, dtype=float)).copy()
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float)).copy()
        if Q.shape != (b.size, b.size):
            raise ValueError(f"Q shape {Q.shape} does not match b size {b.size}")
        Q = _sym(Q)
        b.setflags(write=False)
        Q.setflags(write=False)
        object.__setattr__(self, "c", float(self.c))
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "Q", Q)

    @classmethod
    def one(cls, dim: int) -> ExpQuadratic:
        return cls(0.0, np.zeros(dim), np.zeros((dim, dim)))

    @property
    def dim(self) -> int:
        return self.b.size

    def log(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(z)
        return self.c + z @ self.b + 0.5 * np.einsum("ni,ij,nj->n", z, self.Q, z)

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return np.exp(self.log(z))

    def grad_log(self, z: np.ndarray) -> np.ndarray:
        return np.atleast_2d(z) @ self.Q + self.b

    def power(self, p: float) -> ExpQuadratic:
        return ExpQuadratic(p * self.c, p * self.b, p * self.Q)

    def __mul__(self, other: ExpQuadratic) -> ExpQuadratic:
        return ExpQuadratic(self.c + other.c, self.b + other.b, self.Q + other.Q)

    def scaled(self, log_factor: float) -> ExpQuadratic:
        return ExpQuadratic(self.c + log_factor, self.b, self.Q)

    def flipped(self, d: int) -> ExpQuadratic:
        """``(Rf)(x, v) = f(x, -v)``."""
        r = np.concatenate([np.ones(d), -np.ones(d)])
        return ExpQuadratic(self.c, r * self.b, self.Q * np.outer(r, r))

    def to_dict(self) -> dict:
        return {"c": self.c, "b": self.b.tolist(), "Q": self.Q.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> ExpQuadratic:
        return cls(float(d["c"]), np.asarray(d["b"], float), np.asarray(d["Q"], float))


# --- generator and law propagation -------------------------------------------------


def build_generator(params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Drift ``A`` and diffusion ``D`` of ``dZ = A Z dt + sqrt(D) dB``."""
    d = params.d
    I = np.eye(d)
    A = np.block([[np.zeros((d, d)), I], [-params.H, -params.gamma * I]])
    D = np.block([[np.zeros((d, d)), np.zeros((d, d))], [np.zeros((d, d)), 2 * params.gamma * I]])
    return A, D


def stationary_cov(params: ModelParams) -> np.ndarray:
    d = params.d
    return np.block([[np.linalg.inv(params.H), np.zeros((d, d))],
                     [np.zeros((d, d)), np.eye(d)]])


def stationary_law(params: ModelParams) -> GaussianLaw:
    return GaussianLaw(np.zeros(params.dim), stationary_cov(params))


def kinetic_law(params: ModelParams, mean, cov=None) -> GaussianLaw:
    """Gaussian law given in kinetic units: positions are measured in ``rho^{-1/2}``.

    Rescaling ``rho`` with the same dimensionless ``(mean, cov)`` leaves every
    functional unchanged once time is measured on the clock ``sqrt(rho) t``.
    """
    d = params.d
    s = np.concatenate([np.full(d, 1.0 / math.sqrt(params.rho)), np.ones(d)])
    mean = np.asarray(mean, float)
    if cov is None:
        cov_phys = stationary_cov(params)
    else:
        cov_phys = np.asarray(cov, float) * np.outer(s, s)
    return GaussianLaw(s * mean, cov_phys)


def transition(params: ModelParams, t: float) -> tuple[np.ndarray, np.ndarray]:
    """``(F, W)`` with ``Z_t | Z_0 = z ~ N(F z, W)``.

    ``W = int_0^t e^{As} D e^{A^T s} ds`` by the augmented block exponential,
    evaluated at ``t / 2^k`` and doubled back up with
    ``W(2s) = F(s) W(s) F(s)^T + W(s)``.  The block exponential alone contains
    ``e^{-At}``, which grows and then cancels, so it is only used where
    ``||A|| t <= 1``.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    A, D = build_generator(params)
    n = A.shape[0]
    if t == 0:
        return np.eye(n), np.zeros((n, n))
    norm = np.linalg.norm(A, 1)
    k = max(0, int(math.ceil(math.log2(t * norm)))) if t * norm > 1 else 0
    h = t / 2**k
    blk = np.block([[-A, D], [np.zeros((n, n)), A.T]])
    E = expm(blk * h)
    F = E[n:, n:].T
    W = _sym(F @ E[:n, n:])
    for _ in range(k):
        W = _sym(F @ W @ F.T + W)
        F = F @ F
    return F, W


def propagate(law: GaussianLaw, params: ModelParams, t: float) -> GaussianLaw:
    if law.dim != params.dim:
        raise ValueError("law dimension does not match params")
    F, W = transition(params, t)
    return GaussianLaw(F @ law.mean, F @ law.cov @ F.T + W)


# --- divergences ---------------------------------------------------------------------


def gaussian_kl(m1, S1, m2, S2) -> float:
    """KL(N(m1, S1) | N(m2, S2))."""
    L = np.linalg.cholesky(S2)
    Li = np.linalg.inv(L)
    lam = np.linalg.eigvalsh(_sym(Li @ S1 @ Li.T))
    dm = Li @ (np.asarray(m1) - np.asarray(m2))
    x = lam - 1.0
    return 0.5 * float(np.sum(x - np.log1p(x)) + dm @ dm)


class DivergenceResult(NamedTuple):
    kl: float
    renyi: float
    renyi_finite: bool


def renyi_gaussian(nu: GaussianLaw, mu: GaussianLaw, q: float) -> float:
    """Renyi divergence of order ``q`` of ``nu`` from ``mu``; ``inf`` when undefined."""
    if not q > 1:
        raise ValueError("q must exceed 1")
    Sq = _sym(q * mu.cov + (1.0 - q) * nu.cov)
    w = np.linalg.eigvalsh(Sq)
    if w[0] <= 0:
        return math.inf
    dm = nu.mean - mu.mean
    _, ld_q = np.linalg.slogdet(Sq)
    _, ld_nu = np.linalg.slogdet(nu.cov)
    _, ld_mu = np.linalg.slogdet(mu.cov)
    quad = float(dm @ np.linalg.solve(Sq, dm))
    return 0.5 * q * quad - (ld_q - (1.0 - q) * ld_nu - q * ld_mu) / (2.0 * (q - 1.0))


def divergences(nu: GaussianLaw, mu: GaussianLaw, q: float) -> DivergenceResult:
    if nu.dim != mu.dim:
        raise ValueError(f"dimension mismatch: {nu.dim} vs {mu.dim}")
    if not q > 1:
        raise ValueError("q must exceed 1")
    kl = gaussian_kl(nu.mean, nu.cov, mu.mean, mu.cov)
    r = renyi_gaussian(nu, mu, q)
    return DivergenceResult(kl, r, math.isfinite(r))


def density_ratio(nu: GaussianLaw, mu: GaussianLaw) -> ExpQuadratic:
    """``d nu / d mu`` as an exp-quadratic."""
    P1 = np.linalg.inv(nu.cov)
    P2 = np.linalg.inv(mu.cov)
    _, ld1 = np.linalg.slogdet(nu.cov)
    _, ld2 = np.linalg.slogdet(mu.cov)
    Q = P2 - P1
    b = P1 @ nu.mean - P2 @ mu.mean
    c = (-0.5 * nu.mean @ P1 @ nu.mean + 0.5 * mu.mean @ P2 @ mu.mean
         - 0.5 * ld1 + 0.5 * ld2)
    return ExpQuadratic(c, b, Q)


# --- Gaussian integrals of exp-quadratics ---------------------------------------------


def log_expectation(f: ExpQuadratic, law: GaussianLaw) -> float:
    """``log E_law[f]``; ``inf`` when the integral diverges."""
    L = np.linalg.cholesky(law.cov)
    K = _sym(np.eye(law.dim) - L.T @ f.Q @ L)
    w = np.linalg.eigvalsh(K)
    if w[0] <= 0:
        return math.inf
    m = law.mean
    beta = L.T @ (f.b + f.Q @ m)
    _, logdet = np.linalg.slogdet(K)
    return float(f.c + f.b @ m + 0.5 * m @ f.Q @ m - 0.5 * logdet
                 + 0.5 * beta @ np.linalg.solve(K, beta))


def pairing(f: ExpQuadratic, g: ExpQuadratic, mu: GaussianLaw) -> float:
    """``int f g d mu``."""
    return math.exp(log_expectation(f * g, mu))


def tilt(f: ExpQuadratic, law: GaussianLaw) -> tuple[GaussianLaw, float]:
    """Normalized law proportional to ``f * law`` and ``log`` of its normalizer."""
    logZ = log_expectation(f, law)
    if not math.isfinite(logZ):
        L = np.linalg.cholesky(law.cov)
        lo = np.linalg.eigvalsh(_sym(np.eye(law.dim) - L.T @ f.Q @ L))[0]
        raise IntegrabilityError("tilted Gaussian is not normalizable", lo)
    P = np.linalg.inv(law.cov)
    prec = _sym(P - f.Q)
    cov = _sym(np.linalg.inv(prec))
    mean = cov @ (P @ law.mean + f.b)
    return GaussianLaw(mean, cov), logZ


def lp_norm(f: ExpQuadratic, mu: GaussianLaw, p: float) -> float:
    """``(int f^p d mu)^{1/p}``; ``inf`` when divergent."""
    if not p >= 1:
        raise ValueError("p must be >= 1")
    le = log_expectation(f.power(p), mu)
    if not math.isfinite(le):
        return math.inf
    return math.exp(le / p)


def normalized(f: ExpQuadratic, mu: GaussianLaw, p: float) -> ExpQuadratic:
    """Rescale ``f`` to unit ``L^p(mu)`` norm."""
    le = log_expectation(f.power(p), mu)
    if not math.isfinite(le):
        raise IntegrabilityError(f"f is not in L^{p:g}", 0.0)
    return f.scaled(-le / p)


def quad_expectation(a: np.ndarray, B: np.ndarray, law: GaussianLaw) -> float:
    """``E |a + B Z|^2`` for ``Z ~ law``."""
    r = a + B @ law.mean
    return float(r @ r + np.trace(B @ law.cov @ B.T))


# --- semigroup on exp-quadratics -------------------------------------------------------


def apply_semigroup(f: ExpQuadratic, params: ModelParams, t: float, adjoint: bool = False) -> ExpQuadratic:
    """Exact ``P_t f`` (or its ``L^2(mu)``-adjoint) for an exp-quadratic ``f``."""
    if f.dim != params.dim:
        raise ValueError("function dimension does not match params")
    if adjoint:
        return apply_semigroup(f.flipped(params.d), params, t, adjoint=False).flipped(params.d)
    F, W = transition(params, t)
    n = params.dim
    Wh = sym_sqrt(W)
    K = _sym(np.eye(n) - Wh @ f.Q @ Wh)
    w = np.linalg.eigvalsh(K)
    if w[0] <= 0:
        raise IntegrabilityError(f"transition integral diverges at t={t:g}", w[0])
    _, logdet = np.linalg.slogdet(K)
    M = np.eye(n) - f.Q @ W
    Mb = np.linalg.solve(M, f.b)
    MQ = np.linalg.solve(M, f.Q)
    c = f.c - 0.5 * logdet + 0.5 * f.b @ W @ Mb
    return ExpQuadratic(c, F.T @ Mb, _sym(F.T @ MQ @ F))


# --- kinetic functionals ----------------------------------------------------------------


@dataclass(frozen=True)
class KineticFunctionals:
    ent: float
    ent_x: float
    ent_v: float
    fisher_v: float
    J: float
    c_ot: float
    h_theta: float
    w2_sq: float = 0.0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def brenier_linear(S_src: np.ndarray, S_tgt: np.ndarray) -> np.ndarray:
    """Symmetric linear part of the optimal map between centred Gaussians."""
    Sh = sym_sqrt(S_src)
    Shi = sym_inv_sqrt(S_src)
    return _sym(Shi @ sym_sqrt(Sh @ S_tgt @ Sh) @ Shi)


def default_theta(Gamma: float) -> float:
    return min(Gamma, 1.0 / Gamma) / 8.0


def kinetic_functionals(nu: GaussianLaw, params: ModelParams, theta: float | None = None) -> KineticFunctionals:
    """Entropy split, velocity Fisher information, current energy and OT corrector of ``nu``."""
    if nu.dim != params.dim:
        raise ValueError("law dimension does not match params")
    if theta is None:
        theta = default_theta(params.Gamma)
    d = params.d
    mu = stationary_law(params)
    m, S = nu.mean, nu.cov
    mx, mv = m[:d], m[d:]
    Sxx, Sxv, Svx, Svv = S[:d, :d], S[:d, d:], S[d:, :d], S[d:, d:]
    Sx_mu = mu.cov[:d, :d]

    ent = gaussian_kl(m, S, mu.mean, mu.cov)
    ent_x = gaussian_kl(mx, Sxx, np.zeros(d), Sx_mu)

    # conditional velocity law given x: N(mv + B (x - mx), C)
    B = np.linalg.solve(Sxx, Sxv).T
    C = _sym(Svv - B @ Sxv)
    lam = np.linalg.eigvalsh(C)
    if lam[0] <= 0:
        raise ValueError("degenerate conditional velocity covariance")
    J = float(mv @ mv + np.trace(B @ Sxv))
    x = lam - 1.0
    ent_v = 0.5 * (J + float(np.sum(x - np.log1p(x))))
    fisher_v = J + float(np.sum(x * x / lam))

    A_T = brenier_linear(Sxx, Sx_mu)
    I_minus = np.eye(d) - A_T
    c_ot = float(mv @ mx + np.trace(Svx @ I_minus))
    w2_sq = float(mx @ mx + np.trace(I_minus @ Sxx @ I_minus))
    h = ent + theta * math.sqrt(params.rho) * c_ot
    return KineticFunctionals(ent, ent_x, ent_v, fisher_v, J, c_ot, h, w2_sq)


# --- forward/backward interpolation -------------------------------------------------------


@dataclass(frozen=True)
class InterpolationState:
    G: GaussianLaw
    Z: float
    fisher_phi: float
    fisher_psi: float
    phi_s: ExpQuadratic
    psi_s: ExpQuadratic

    @property
    def log_Z(self) -> float:
        return math.log(self.Z)


def velocity_log_grad_energy(f: ExpQuadratic, law: GaussianLaw, d: int) -> float:
    """``E_law |grad_v log f|^2``."""
    return quad_expectation(f.b[d:], f.Q[d:, :], law)


def interpolation_state(phi: ExpQuadratic, psi: ExpQuadratic, params: ModelParams,
                        T: float, s: float) -> InterpolationState:
    """Normalized product of ``P_s phi`` and ``P*_{T-s} psi`` as a Gaussian law."""
    if not 0.0 <= s <= T:
        raise ValueError(f"s={s} outside [0, T={T}]")
    phi_s = apply_semigroup(phi, params, s, adjoint=False)
    psi_s = apply_semigroup(psi, params, T - s, adjoint=True)
    G, logZ = tilt(phi_s * psi_s, stationary_law(params))
    d = params.d
    return InterpolationState(
        G=G,
        Z=math.exp(logZ),
        fisher_phi=velocity_log_grad_energy(phi_s, G, d),
        fisher_psi=velocity_log_grad_energy(psi_s, G, d),
        phi_s=phi_s,
        psi_s=psi_s,
    )


def log_moment(f: ExpQuadratic, law: GaussianLaw) -> float:
    """``E_law[log f]``."""
    m, S = law.mean, law.cov
    return float(f.c + f.b @ m + 0.5 * m @ f.Q @ m + 0.5 * np.trace(f.Q @ S))


def random_law(rng: np.random.Generator, params: ModelParams, spread: float = 0.5) -> GaussianLaw:
    """A random Gaussian law near ``mu`` (used by property checks and experiment drivers)."""
    n = params.dim
    base = stationary_cov(params)
    Bh = sym_sqrt(base)
    X = rng.normal(size=(n, n)) * spread / math.sqrt(n)
    E = expm(_sym(X))
    mean = Bh @ rng.normal(size=n) * spread * 2
    return GaussianLaw(mean, _sym(Bh @ E @ E @ Bh))


def random_expquad(rng: np.random.Generator, dim: int, b_scale: float = 0.5,
                   q_scale: float = 0.15) -> ExpQuadratic:
    """A random exp-quadratic with a mildly indefinite quadratic part."""
    X = rng.normal(size=(dim, dim))
    Q = _sym(X) * q_scale / math.sqrt(dim)
    return ExpQuadratic(rng.normal() * 0.3, rng.normal(size=dim) * b_scale, Q)
