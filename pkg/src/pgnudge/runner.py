"""Run orchestration behind the command-line subcommands.

Each ``run_*`` function takes a validated :class:`~pgnudge.config.RunConfig`
and an output directory and returns a JSON-ready report. Everything written
is a deterministic function of the configuration (wall-clock timings go to
a separate ``timings.json``), so reruns reproduce outputs byte for byte.
"""

from __future__ import annotations

import csv
import json
import math
import platform
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .assimilate import (InsufficientDataError, TwinConfig, fit_decay_rate, forcing_norms,
                         heuristic_mu, measure_velocity_ratio, run_reference, run_twin,
                         theorem_constants)
from .config import ConfigError, build_forcing
from .field import h1_norm_2d
from .gronwall import gronwall_check
from .observe import build_modal_basis, measure_c0, write_basis_csv

__all__ = ["Setup", "prepare", "constants_report", "run_constants", "run_spectrum",
           "run_simulate", "run_assimilate", "twin_config", "write_json", "write_csv", "jsonable",
           "versions"]


def versions():
    return {"pgnudge": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, obj):
    Path(path).write_text(json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path, header, columns):
    """Write equal-length columns; ``None`` entries become empty cells."""
    n = len(columns[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(n):
            w.writerow([_fmt(col[i]) for col in columns])


@dataclass
class Setup:
    """Model objects derived from a configuration, with ``mu`` and ``c0`` resolved."""

    config: object
    domain: object
    params: object
    forcing: object
    spec: object
    c0_measured: float
    mu_source: str
    mu_heuristic: float
    lambda1: float
    norms: dict


def prepare(config):
    domain = config.domain()
    base = config.params(0.0)
    forcing = build_forcing(config, domain, base)
    norms = forcing_norms(forcing, domain)
    mu_h = heuristic_mu(base, forcing, domain, norms)
    mu_cfg = config.section("params")["mu"]
    mu = mu_h if mu_cfg == "heuristic" else float(mu_cfg)
    dt = config.section("stepper")["dt"]
    if mu * dt > 0.5:
        raise ConfigError([f"params.mu: mu = {mu:.6g} gives mu*dt = {mu * dt:.4g} > 0.5; "
                           "reduce stepper.dt"])
    params = base.with_mu(mu)
    spec0 = config.interpolant()
    theory = config.section("theory")
    c0_measured = measure_c0(spec0, domain, params, n_samples=int(theory["c0_samples"]),
                             seed=config.seed)
    c0_cfg = config.section("interpolant")["c0"]
    spec = config.interpolant(c0_measured if c0_cfg == "measured" else c0_cfg)
    lambda1 = build_modal_basis(domain, params, spec.h).lambda1
    return Setup(config=config, domain=domain, params=params, forcing=forcing, spec=spec,
                 c0_measured=c0_measured,
                 mu_source="heuristic" if mu_cfg == "heuristic" else "config",
                 mu_heuristic=mu_h, lambda1=lambda1, norms=norms)


def constants_report(setup):
    theory = setup.config.section("theory")
    consts = theorem_constants(setup.params, setup.forcing, setup.spec, setup.domain,
                               C=theory["C"], r=theory["r"], lambda1=setup.lambda1,
                               norms=setup.norms)
    return {"constants": consts.to_dict(), "c0_measured": setup.c0_measured,
            "mu_heuristic": setup.mu_heuristic, "mu_source": setup.mu_source}


def run_constants(config, out=None):
    report = constants_report(prepare(config))
    if out is not None:
        write_json(Path(out) / "constants.json", report)
    return report


def run_spectrum(config, out):
    out = Path(out)
    setup = prepare(config)
    spec = setup.spec
    report = {"kind": spec.kind, "h": spec.h, "c0_measured": setup.c0_measured,
              "n_samples": int(config.section("theory")["c0_samples"]), "seed": config.seed,
              "grid": [setup.domain.nx, setup.domain.ny, setup.domain.nz],
              "lambda1": setup.lambda1}
    if spec.kind == "modal":
        basis = build_modal_basis(setup.domain, setup.params, spec.h)
        write_basis_csv(basis, out / "basis.csv")
        report["m_h"] = basis.m_h
    else:
        report["boxes"] = list(spec.box_counts(setup.domain))
    write_json(out / "c0.json", report)
    return report


def twin_config(setup, **overrides):
    tw = dict(setup.config.section("twin"))
    tw["t0_max_index"] = tuple(tw["t0_max_index"])
    kw = dict(domain=setup.domain, params=setup.params, forcing=setup.forcing,
              stepper=setup.config.stepper(), interpolant=setup.spec,
              solver=setup.config.solver(), seed=setup.config.seed,
              snapshot_every=setup.config.section("output")["snapshot_every"], **tw)
    kw.update(overrides)
    return TwinConfig(**kw)


def run_simulate(config, out):
    """Reference-only run over the spin-up plus assimilation horizon."""
    out = Path(out)
    t0 = time.perf_counter()
    setup = prepare(config)
    cfg = twin_config(setup)
    snap = out / "snapshots"
    snap.mkdir(exist_ok=True)
    series, state = run_reference(cfg, snapshot_dir=snap)
    n = len(series.times)
    write_csv(out / "series.csv",
              ["time", "l2_T", "energy_T", "l2_chi", "h1_U", "cfl", "diag_iters"],
              [series.times, series.l2_T, series.energy_T, [None] * n, [None] * n,
               series.cfl, series.diag_iters])
    report = {"command": "simulate", "config": config.to_dict(), "versions": versions(),
              "mu": setup.params.mu,
              "steps": int(state.steps), "final_time": state.time,
              "final": {"l2_T": series.l2_T[-1], "energy_T": series.energy_T[-1]},
              "l2_T_monotone_nonincreasing": bool(np.all(np.diff(series.l2_T) <= 0)),
              "max_cfl": float(series.cfl.max()),
              "max_constraint_residual": float(series.constraint.max()),
              "max_w_top_relative": float(series.w_top.max())}
    write_json(out / "report.json", report)
    write_json(out / "timings.json", {"total": time.perf_counter() - t0})
    return report


def _uniform_prefix(t):
    """Indices of the leading run of samples on a uniform grid."""
    if len(t) < 3:
        return np.arange(len(t))
    dt = t[1] - t[0]
    ok = np.abs(np.diff(t) - dt) <= 1e-9 * max(dt, 1e-300)
    bad = np.flatnonzero(~ok)
    end = bad[0] + 1 if len(bad) else len(t)
    return np.arange(end)


def run_assimilate(config, out, progress=None):
    out = Path(out)
    t_start = time.perf_counter()
    setup = prepare(config)
    creport = constants_report(setup)
    consts = creport["constants"]
    cfg = twin_config(setup)
    snap = out / "snapshots"
    snap.mkdir(exist_ok=True)
    t_prep = time.perf_counter()
    result = run_twin(cfg, snapshot_dir=snap, progress=progress)
    s = result.series
    write_csv(out / "error_series.csv", ["time", "l2_chi", "h1_U", "l2_ref"],
              [s.times, s.l2_chi, s.h1_U, s.l2_ref])

    def fit(**kw):
        try:
            return fit_decay_rate(s, **kw).to_dict()
        except InsufficientDataError as exc:
            return {"error": str(exc)}

    rel = s.relative()
    theory = config.section("theory")
    t_rho = time.perf_counter()
    rho = measure_velocity_ratio(setup.domain, setup.params, n_samples=int(theory["rho_samples"]),
                                 seed=config.seed, solver_settings=cfg.solver)
    pos = s.l2_chi > 0
    ratio_max = float(np.max(s.h1_U[pos] / s.l2_chi[pos])) if pos.any() else 0.0

    idx = _uniform_prefix(s.times)
    ts_h1 = h1_norm_2d(setup.forcing.Tstar, setup.domain)
    alpha = setup.params.mu - theory["gronwall_C"] * (1 + s.energy_ref[idx] + ts_h1 ** (4.0 / 3.0))
    try:
        gw = gronwall_check(s.times[idx], s.l2_chi[idx] ** 2, alpha, 0.0,
                            tau=theory["gronwall_tau"], gamma=theory["gronwall_gamma"]).to_dict()
    except ValueError as exc:
        gw = {"error": str(exc)}
    t_end = time.perf_counter()

    report = {
        "command": "assimilate",
        "config": config.to_dict(),
        "versions": versions(),
        **creport,
        "mu": setup.params.mu,
        "no_assimilation": setup.params.mu == 0.0,
        "feasibility": {"advisory": True,
                        "mu_ge_mu_min": bool(consts["mu"] >= consts["mu_min"]),
                        "mu_c0sq_hsq_le_1": bool(consts["mu_c0sq_hsq"] <= 1.0),
                        "feasible": consts["feasible"]},
        "decay_fit": fit(),
        "decay_fit_full_window": fit(ceiling=1.0, floor=1e-8),
        "initial": {"l2_chi": s.l2_chi[0], "h1_U": s.h1_U[0], "l2_ref": s.l2_ref[0]},
        "final": {"time": s.times[-1], "l2_chi": s.l2_chi[-1], "relative_l2_chi": rel[-1],
                  "h1_U": s.h1_U[-1], "l2_ref": s.l2_ref[-1],
                  "orders_of_decay": (-math.log10(rel[-1]) if rel[-1] > 0 else "inf")},
        "velocity_ratio": {"rho_measured": rho, "max_observed": ratio_max,
                           "within_1p1_rho": bool(ratio_max <= 1.1 * rho)},
        "gronwall": gw,
        "max_cfl": result.max_cfl,
        "max_constraint_residual": result.max_constraint,
    }
    write_json(out / "report.json", report)
    write_json(out / "timings.json", {
        "prepare": t_prep - t_start, **result.timings,
        "velocity_ratio": t_end - t_rho, "total": t_end - t_start})
    return report
