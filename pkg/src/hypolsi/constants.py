"""Explicit constants of the kinetic space-time LSI and the hypercontractive schedule.

All quantities are expressed in the dimensionless kinetic form: the friction is
``gamma = Gamma * sqrt(rho)`` and the slab length is ``T = tau / sqrt(rho)``, so
every constant below depends on ``(Gamma, tau)`` only.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field


class AdmissibilityError(ValueError):
    """Raised when a requested horizon is below the admissible space-time horizon."""

    def __init__(self, tau: float, tau_min: float, Gamma: float):
        self.tau = tau
        self.tau_min = tau_min
        self.Gamma = Gamma
        super().__init__(
            f"tau={tau:g} is below admissible space-time horizon for Gamma={Gamma:g}: "
            f"need tau >= tau_ST = {tau_min:g}"
        )


def friction_ratio_M(Gamma: float) -> float:
    return max(Gamma, 1.0 / Gamma)


def tau_st(Gamma: float) -> float:
    """Minimal dimensionless horizon ``32 M + 4``."""
    return 32.0 * friction_ratio_M(Gamma) + 4.0


def c_st(Gamma: float) -> float:
    """Space-time LSI constant ``80 M^2 + 16 M + 2``."""
    M = friction_ratio_M(Gamma)
    return 80.0 * M * M + 16.0 * M + 2.0


@dataclass(frozen=True)
class ConstantsReport:
    Gamma: float
    tau: float
    rho: float
    M: float
    theta: float
    tau_ST: float
    C_ST: float
    gammaT: float
    K_T: float
    eta_T: float
    p_c: float
    q_c: float
    alpha_T: float
    lam: float

    @property
    def gamma(self) -> float:
        return self.Gamma * math.sqrt(self.rho)

    @property
    def T(self) -> float:
        return self.tau / math.sqrt(self.rho)

    @property
    def q_c_conjugate(self) -> float:
        return self.q_c / (self.q_c - 1.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


REPORT_COLUMNS = (
    "Gamma", "tau", "rho", "M", "theta", "tau_ST", "C_ST", "gammaT",
    "K_T", "eta_T", "p_c", "q_c", "alpha_T", "lambda",
)


def compute_constants(Gamma: float, tau: float | None = None, rho: float = 1.0) -> ConstantsReport:
    """Evaluate every explicit constant at friction ratio ``Gamma`` and horizon ``tau``.

    ``tau`` defaults to the minimal admissible horizon ``tau_ST(Gamma)``.
    """
    if not Gamma > 0:
        raise ValueError(f"Gamma must be positive, got {Gamma!r}")
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho!r}")
    M = friction_ratio_M(Gamma)
    t_min = 32.0 * M + 4.0
    if tau is None:
        tau = t_min
    if tau < t_min:
        raise AdmissibilityError(tau, t_min, Gamma)
    theta = min(Gamma, 1.0 / Gamma) / 8.0
    C = 80.0 * M * M + 16.0 * M + 2.0
    gammaT = Gamma * tau
    K = 4.0 * C * (1.0 + Gamma * Gamma) + 2.0 * gammaT
    eta = gammaT / K
    # log((1+eta)/(1-eta)) = 2 atanh(eta); avoids cancellation for small eta
    log_alpha = 2.0 * math.atanh(eta)
    return ConstantsReport(
        Gamma=float(Gamma),
        tau=float(tau),
        rho=float(rho),
        M=M,
        theta=theta,
        tau_ST=t_min,
        C_ST=C,
        gammaT=gammaT,
        K_T=K,
        eta_T=eta,
        p_c=2.0 / (1.0 + eta),
        q_c=2.0 / (1.0 - eta),
        alpha_T=(1.0 + eta) / (1.0 - eta),
        lam=log_alpha / tau,
    )


@dataclass
class ExponentSchedule:
    p: float
    alpha_T: float
    tau: float
    rho: float
    entries: list[tuple[int, float]] = field(default_factory=list)

    def slab_index(self, t: float) -> int:
        return int(math.floor(math.sqrt(self.rho) * t / self.tau))

    def q_star(self, t: float) -> float:
        """Admissible output exponent at time ``t``."""
        if t < 0:
            raise ValueError("t must be nonnegative")
        n = self.slab_index(t)
        if n < len(self.entries):
            return self.entries[n][1]
        return 1.0 + self.alpha_T**n * (self.p - 1.0)


def exponent_schedule(p: float, report: ConstantsReport, t_max: float) -> ExponentSchedule:
    """Iterated exponents ``p_n = 1 + alpha^n (p - 1)`` for every slab up to ``t_max``."""
    if not p > 1:
        raise ValueError(f"p must exceed 1, got {p!r}")
    if t_max < 0:
        raise ValueError("t_max must be nonnegative")
    sched = ExponentSchedule(p=p, alpha_T=report.alpha_T, tau=report.tau, rho=report.rho)
    n_max = sched.slab_index(t_max)
    pn = float(p)
    sched.entries.append((0, pn))
    for n in range(1, n_max + 1):
        pn = 1.0 + report.alpha_T * (pn - 1.0)
        sched.entries.append((n, pn))
    return sched


RATE_COLUMNS = ("Gamma", "tau_ST", "C_ST", "lambda", "lambda_M3")


def rate_table(Gammas, rho: float = 1.0) -> list[dict]:
    """One row per friction ratio with the decay rate at the minimal horizon."""
    rows = []
    for G in Gammas:
        rep = compute_constants(G, None, rho)
        rows.append({
            "Gamma": rep.Gamma,
            "tau_ST": rep.tau_ST,
            "C_ST": rep.C_ST,
            "lambda": rep.lam,
            "lambda_M3": rep.lam * rep.M**3,
        })
    return rows


def rows_to_csv(rows: list[dict], columns) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(float(r[k])) for k in columns})
    return buf.getvalue()


def report_to_csv(report: ConstantsReport) -> str:
    return rows_to_csv([report.to_dict()], REPORT_COLUMNS)
