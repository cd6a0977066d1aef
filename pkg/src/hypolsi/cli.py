"""Command line entry point: ``hypolsi <experiment> [--config PATH] [--out DIR] [--seed N] [--threads N]``.

Exit status is 0 when every check passes, 1 when some check fails and 2 on a
configuration or runtime error.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import gaussian as ga
from . import harness
from .config import EXPERIMENTS, ConfigError, RunConfig, emit, parse_config, resolve
from .constants import RATE_COLUMNS, compute_constants, exponent_schedule, rate_table
from .gaussian import ExpQuadratic, GaussianLaw, ModelParams
from .sde import Potential


def _params(cfg: RunConfig) -> ModelParams:
    return ModelParams(cfg["rho"], cfg["Gamma"], cfg["d"])


def _nu0(cfg: RunConfig, params: ModelParams) -> GaussianLaw:
    n = params.dim
    mean = cfg["nu0.mean"]
    if mean is None:
        mean = [1.0] * params.d + [0.0] * params.d
    if len(mean) != n:
        raise ConfigError(f"key 'nu0.mean' must have length {n}", "nu0.mean")
    cov = cfg["nu0.cov"]
    if cov is not None and np.shape(cov) != (n, n):
        raise ConfigError(f"key 'nu0.cov' must be {n}x{n}", "nu0.cov")
    if cfg["nu0.kinetic"]:
        return ga.kinetic_law(params, mean, cov)
    return GaussianLaw(mean, ga.stationary_cov(params) if cov is None else cov)


def _expquad(cfg: RunConfig, prefix: str, dim: int) -> ExpQuadratic:
    b = cfg[f"{prefix}.b"]
    Q = cfg[f"{prefix}.Q"]
    b = np.zeros(dim) if b is None else np.asarray(b, float)
    Q = np.zeros((dim, dim)) if Q is None else np.asarray(Q, float)
    if b.shape != (dim,) or Q.shape != (dim, dim):
        raise ConfigError(f"keys '{prefix}.b' / '{prefix}.Q' must have dimension {dim}", f"{prefix}.b")
    return ExpQuadratic(cfg[f"{prefix}.c"], b, Q)


def _kinetic_grid(cfg: RunConfig, params: ModelParams) -> np.ndarray:
    return np.linspace(0.0, cfg["grid.t_max"], cfg["grid.n"]) / math.sqrt(params.rho)


def _run_constants(cfg: RunConfig) -> harness.ExperimentReport:
    rep = compute_constants(cfg["Gamma"], cfg["tau"], cfg["rho"])
    rows = rate_table(cfg["Gammas"], cfg["rho"])
    out = harness.ExperimentReport("constants", {"Gamma": cfg["Gamma"], "tau": cfg["tau"], "rho": cfg["rho"]},
                                   curves={c: [r[c] for r in rows] for c in RATE_COLUMNS})
    out.results.update(constants=rep.to_dict(), rate_table=rows)
    for r in rows:
        M = max(r["Gamma"], 1 / r["Gamma"])
        out.check(f"C_ST <= 98 M^2 at Gamma={r['Gamma']:g}", r["C_ST"], 98 * M * M, 0.0)
    return out


def _run_schedule(cfg: RunConfig) -> harness.ExperimentReport:
    rep = compute_constants(cfg["Gamma"], cfg["tau"], cfg["rho"])
    t_max = cfg["grid.t_max"]
    t_max = 5 * rep.T if t_max is None else t_max / math.sqrt(cfg["rho"])
    sched = exponent_schedule(cfg["p"], rep, t_max)
    n = np.array([e[0] for e in sched.entries], float)
    pn = np.array([e[1] for e in sched.entries])
    t = n * rep.T
    growth = np.exp(rep.lam * math.sqrt(cfg["rho"]) * t)
    lo = (cfg["p"] - 1) / rep.alpha_T * growth
    hi = (cfg["p"] - 1) * growth
    out = harness.ExperimentReport("schedule", {"Gamma": cfg["Gamma"], "tau": cfg["tau"], "rho": cfg["rho"],
                                                "p": cfg["p"]},
                                   curves={"n": n.tolist(), "t": t.tolist(), "p_n": pn.tolist()})
    out.results.update(constants=rep.to_dict())
    tol = 1e-12 * float(np.max(hi))
    out.check("p_n - 1 >= (p - 1) alpha^-1 exp(lambda sqrt(rho) t) (worst slab)",
              float(np.max(lo - (pn - 1))), 0.0, tol)
    out.check("p_n - 1 <= (p - 1) exp(lambda sqrt(rho) t) (worst slab)",
              float(np.max((pn - 1) - hi)), 0.0, tol)
    return out


def _run(cfg: RunConfig) -> harness.ExperimentReport:
    exp = cfg.experiment
    if exp == "constants":
        return _run_constants(cfg)
    if exp == "schedule":
        return _run_schedule(cfg)
    params = _params(cfg)
    tau = cfg["tau"]
    if exp == "entropy_decay":
        return harness.run_entropy_decay(params, _nu0(cfg, params), _kinetic_grid(cfg, params), tau)
    if exp == "corrector_check":
        delta = cfg["grid.delta"] / math.sqrt(params.rho)
        n = int(round(cfg["grid.t_max"] / cfg["grid.delta"]))
        return harness.run_corrector_check(params, _nu0(cfg, params), np.arange(n + 1) * delta)
    if exp == "stlsi":
        return harness.run_stlsi(params, tau, _nu0(cfg, params), cfg["n_time"])
    if exp == "interpolation_suite":
        rep = compute_constants(params.Gamma, tau, params.rho)
        mu = ga.stationary_law(params)
        phi = _expquad(cfg, "phi", params.dim)
        psi = _expquad(cfg, "psi", params.dim)
        if cfg["normalize"]:
            phi = ga.normalized(phi, mu, rep.p_c)
            psi = ga.normalized(psi, mu, rep.q_c_conjugate)
        rng = np.random.default_rng(cfg.seed)
        tests = [ga.random_expquad(rng, params.dim) for _ in range(cfg["n_test_functions"])]
        return harness.run_interpolation_suite(params, phi, psi, tau, tests, tuple(cfg["p_values"]),
                                               n_s=cfg["n_s"], rtol=cfg["rtol"])
    if exp == "renyi_decay":
        return harness.run_renyi_decay(params, _nu0(cfg, params), cfg["q"], cfg["p"], tau,
                                       _kinetic_grid(cfg, params))
    if exp == "mc_hypercontractivity":
        pot = Potential.quartic(params.rho, cfg["epsilon"])
        f = _expquad(cfg, "f", params.dim)
        return harness.run_mc_hypercontractivity(
            params, pot, f, cfg["p"], tau, cfg["n_outer"], cfg["n_inner"], seed=cfg.seed,
            h=cfg["h"], t_burn=cfg["t_burn"], workers=cfg["threads"])
    raise ConfigError(f"unknown experiment {exp!r}", "experiment")


def dispatch(cfg: RunConfig, out_dir=None) -> tuple[int, list[Path]]:
    """Run the configured experiment and write its artifacts; returns ``(status, files)``."""
    report = _run(cfg)
    report.seed = cfg.seed
    report.results["config"] = cfg.to_dict()
    out = Path(out_dir if out_dir is not None else cfg["output_dir"])
    files = report.write(out)
    (out / "config.toml").write_text(emit(cfg))
    files.append(out / "config.toml")
    return (0 if report.passed else 1), files


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hypolsi", description="Run one kinetic Langevin experiment.")
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", type=Path, help="flat TOML config file")
    ap.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--threads", type=int)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        values: dict = {}
        if args.config is not None:
            values = parse_config(args.config.read_text()).to_dict()
            if values["experiment"] != args.experiment:
                raise ConfigError(f"config experiment {values['experiment']!r} does not match "
                                  f"subcommand {args.experiment!r}", "experiment")
            values = {k: v for k, v in values.items() if v is not None}
        values["experiment"] = args.experiment
        if args.seed is not None:
            values["seed"] = args.seed
        if args.threads is not None:
            values["threads"] = args.threads
        if args.out is not None:
            values["output_dir"] = str(args.out)
        cfg = resolve(values)
        status, files = dispatch(cfg)
    except ConfigError as exc:
        print(f"hypolsi: config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - any runtime failure maps to status 2
        print(f"hypolsi: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(f"hypolsi: {cfg.experiment} {'PASS' if status == 0 else 'FAIL'}; wrote {', '.join(str(f) for f in files)}")
    return status


if __name__ == "__main__":
    sys.exit(main())
