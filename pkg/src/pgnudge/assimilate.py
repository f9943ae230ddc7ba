"""Nudging data assimilation with temperature observations alone.

The assimilated copy ``eta`` obeys the same temperature equation as the
reference ``Ttilde`` with the extra relaxation term ``-mu (I_h eta - I_h Ttilde)``;
its velocity ``v`` is diagnosed from ``eta`` exactly as ``u`` is from ``Ttilde``.
This module runs such twin experiments, measures the decay of
``chi = eta - Ttilde`` and evaluates the constants of the convergence theory.
"""

from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from .diagnostic import DiagnosticSolver, SolverSettings, constraint_residual
from .field import (DomainSpec, PhysParams, energy_norm, h1_norm, h1_norm_2d,
                    h2_norm_2d, l2_norm, l2_norm_2d, vertical_cumulative_divergence,
                    write_snapshot)
from .observe import Interpolant, InterpolantSpec, build_modal_basis, random_smooth_field
from .stepper import ForcingSpec, PGModel, StepperSettings, initial_temperature

__all__ = [
    "InsufficientDataError",
    "TheoremConstants",
    "theorem_constants",
    "heuristic_mu",
    "nudging_tendency",
    "TwinConfig",
    "ErrorSeries",
    "TwinResult",
    "run_twin",
    "ReferenceSeries",
    "run_reference",
    "DecayFit",
    "fit_decay_rate",
    "measure_velocity_ratio",
]

ETA0_MODES = ("zero", "random", "perturbed")


class InsufficientDataError(ValueError):
    """Too few samples inside the fit window."""


# -- theory constants -----------------------------------------------------------

@dataclass(frozen=True)
class TheoremConstants:
    K_tilde: float
    R_a_tilde: float
    R_a: float
    K_r: float
    R_v: float
    mu_min: float
    mu: float
    smallness: float
    feasible: bool
    inputs: dict

    def to_dict(self):
        return {"K_tilde": self.K_tilde, "R_a_tilde": self.R_a_tilde, "R_a": self.R_a,
                "K_r": self.K_r, "R_v": self.R_v, "mu_min": self.mu_min, "mu": self.mu,
                "mu_c0sq_hsq": self.smallness, "feasible": self.feasible,
                "inputs": dict(self.inputs)}


def forcing_norms(forcing, domain):
    """Norms of the forcing that enter the theory constants."""
    Ts = forcing.Tstar
    tau_h1 = math.sqrt(sum(h1_norm_2d(t, domain) ** 2 for t in forcing.tau))
    h2_M = h2_norm_2d(Ts, domain)
    return {
        "Tstar_L2_M": l2_norm_2d(Ts, domain),
        "Tstar_H1_M": h1_norm_2d(Ts, domain),
        "Tstar_H2_M": h2_M,
        # Tstar does not depend on z, so its H^2 norm over the box is sqrt(H) times the surface norm
        "Tstar_H2_Omega": math.sqrt(domain.H) * h2_M,
        "Q_L2": l2_norm(forcing.Q, domain),
        "tau_H1_M": tau_h1,
    }


def theorem_constants(params, forcing, spec, domain, C=1.0, r=1.0, lambda1=1.0,
                      c0=None, norms=None):
    """Evaluate the absorbing-ball radii and the nudging conditions.

    ``C`` is the unspecified constant of the theory (user supplied), ``r``
    the radius argument of ``K_r``/``R_v``, ``lambda1`` the first eigenvalue
    of the temperature Laplacian and ``c0`` the interpolant constant
    (defaults to ``spec.c0``). ``norms`` may carry precomputed forcing norms.
    """
    if C <= 0:
        raise ValueError("C must be positive")
    if r <= 0:
        raise ValueError("r must be positive")
    if lambda1 <= 0:
        raise ValueError("lambda1 must be positive")
    n = dict(norms) if norms is not None else forcing_norms(forcing, domain)
    c0 = spec.c0 if c0 is None else float(c0)
    H, a, Kv = domain.H, params.alpha, params.K_v
    ts2 = n["Tstar_L2_M"] ** 2
    q = n["Q_L2"]
    k_t = max(2 * H / a, 2 * H ** 2 / Kv)
    rt = 4 * a * k_t * ts2 + 8 * k_t ** 2 * q ** 2
    ra = 2 * rt + 2 * ts2
    kr = 2 * ra + rt * r
    inner = (1 + n["Tstar_H2_Omega"] ** 2 + q + n["tau_H1_M"] ** 2 + ra ** 2)
    pre = C * (ra / math.sqrt(r) + n["Tstar_H1_M"] + q + C / math.sqrt(lambda1) * inner)
    expo = C * (ra ** 4 + (n["Tstar_H2_M"] ** 4 + n["tau_H1_M"] ** 4 + ra ** 4) * r)
    rv = pre * math.exp(expo) if expo < 700 else math.inf
    mu_min = 2 * C * (1 + 5 * rt + 4 * ts2 + n["Tstar_H1_M"] ** (4.0 / 3.0))
    mu = params.mu
    small = mu * c0 ** 2 * spec.h ** 2
    n.update({"C": float(C), "r": float(r), "lambda1": float(lambda1), "c0": c0,
              "h": spec.h, "mu": mu, "H": H, "alpha": a, "K_v": Kv})
    return TheoremConstants(K_tilde=k_t, R_a_tilde=rt, R_a=ra, K_r=kr, R_v=rv,
                            mu_min=mu_min, mu=mu, smallness=small,
                            feasible=bool(mu >= mu_min and small <= 1.0), inputs=n)


def heuristic_mu(params, forcing, domain, norms=None):
    """Default nudging strength: the sufficient condition with ``C = 10``."""
    n = norms if norms is not None else forcing_norms(forcing, domain)
    k_t = max(2 * domain.H / params.alpha, 2 * domain.H ** 2 / params.K_v)
    rt = 4 * params.alpha * k_t * n["Tstar_L2_M"] ** 2 + 8 * k_t ** 2 * n["Q_L2"] ** 2
    return 20.0 * (1 + 5 * rt + 4 * n["Tstar_L2_M"] ** 2 + n["Tstar_H1_M"] ** (4.0 / 3.0))


# -- nudging --------------------------------------------------------------------

def nudging_tendency(eta, observed, interpolant, mu):
    """``-mu (I_h eta - observed)``.

    ``observed`` is ``I_h`` of the reference temperature, computed once per
    observation time by the caller; ``interpolant`` is an
    :class:`~pgnudge.observe.Interpolant`.
    """
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    if mu == 0:
        return np.zeros_like(eta)
    if np.shape(observed) != np.shape(eta):
        raise ValueError(f"observation shape {np.shape(observed)} does not match {np.shape(eta)}")
    return -mu * (interpolant(eta) - observed)


# -- twin experiment ------------------------------------------------------------

@dataclass
class TwinConfig:
    """Everything a twin experiment needs.

    ``t0_amplitude``/``t0_max_index``/``seed`` define the reference initial
    temperature (see :func:`~pgnudge.stepper.initial_temperature`). ``eta0_mode``
    is ``zero``, ``random`` (seeded by ``eta0_seed``) or ``perturbed``
    (``Ttilde + eta0_eps * random``, an exact copy when ``eta0_eps = 0``).
    """

    domain: DomainSpec
    params: PhysParams
    forcing: ForcingSpec
    stepper: StepperSettings = StepperSettings()
    interpolant: InterpolantSpec = InterpolantSpec()
    solver: SolverSettings = SolverSettings()
    spin_up_time: float = 5.0
    assimilation_time: float = 10.0
    eta0_mode: str = "zero"
    eta0_seed: int = 1
    eta0_eps: float = 0.0
    seed: int = 0
    t0_amplitude: float = 0.5
    t0_max_index: tuple = (2, 2, 2)
    record_every: int = 1
    obs_stride: int = 1
    snapshot_every: int = 0

    def __post_init__(self):
        errors = self.validate()
        if errors:
            raise ValueError("; ".join(errors))

    def validate(self):
        errs = []
        if not (self.spin_up_time >= 0 and math.isfinite(self.spin_up_time)):
            errs.append("spin_up_time must be nonnegative")
        if not (self.assimilation_time > 0 and math.isfinite(self.assimilation_time)):
            errs.append("assimilation_time must be positive")
        if self.params.mu < 0:
            errs.append("mu must be nonnegative")
        if self.stepper.dt * self.params.mu > 0.5 + 1e-12:
            errs.append(f"dt*mu = {self.stepper.dt * self.params.mu:.4g} exceeds 0.5")
        if self.eta0_mode not in ETA0_MODES:
            errs.append(f"eta0_mode must be one of {ETA0_MODES}")
        if self.eta0_eps < 0:
            errs.append("eta0_eps must be nonnegative")
        for name in ("record_every", "obs_stride"):
            if int(getattr(self, name)) < 1:
                errs.append(f"{name} must be >= 1")
        if self.snapshot_every < 0:
            errs.append("snapshot_every must be >= 0")
        return errs

    def n_steps(self, t):
        return int(round(t / self.stepper.dt))


@dataclass
class ErrorSeries:
    """Sampled errors of a twin run.

    ``h1_U`` is the H^1 norm of ``v - u`` obtained from the diagnostic system
    driven by ``chi``; ``h1_U_direct`` subtracts the two velocity fields
    (identical up to round-off). ``energy_ref`` is ``||Ttilde||^2`` in the
    energy norm.
    """

    times: np.ndarray
    l2_chi: np.ndarray
    h1_U: np.ndarray
    l2_ref: np.ndarray
    energy_ref: np.ndarray = None
    h1_U_direct: np.ndarray = None

    def __post_init__(self):
        arrays = [np.asarray(a, float) for a in (self.times, self.l2_chi, self.h1_U, self.l2_ref)]
        if len({a.shape for a in arrays}) != 1:
            raise ValueError("ErrorSeries arrays must have equal length")
        self.times, self.l2_chi, self.h1_U, self.l2_ref = arrays
        for name in ("energy_ref", "h1_U_direct"):
            value = getattr(self, name)
            setattr(self, name, np.full_like(self.times, np.nan) if value is None
                    else np.asarray(value, float))

    def __len__(self):
        return len(self.times)

    def relative(self):
        return self.l2_chi / self.l2_chi[0] if self.l2_chi[0] > 0 else np.zeros_like(self.l2_chi)


@dataclass
class TwinResult:
    series: ErrorSeries
    reference0: np.ndarray
    eta0: np.ndarray
    final_chi: np.ndarray
    final_U: np.ndarray
    max_cfl: float
    max_constraint: float
    timings: dict = field(default_factory=dict)


def _eta0(cfg, Tref):
    d = cfg.domain
    if cfg.eta0_mode == "zero":
        return d.zeros()
    rng = np.random.default_rng(cfg.eta0_seed)
    pert = initial_temperature(d, cfg.params, rng, amplitude=1.0, max_index=cfg.t0_max_index)
    if cfg.eta0_mode == "random":
        return cfg.t0_amplitude * pert
    return Tref.copy() if cfg.eta0_eps == 0 else Tref + cfg.eta0_eps * pert


def make_interpolant(spec, domain, params):
    basis = build_modal_basis(domain, params, spec.h) if spec.kind == "modal" else None
    return Interpolant(spec, domain, basis)


def run_twin(cfg, snapshot_dir=None, progress=None):
    """Spin up the reference, then advance reference and nudged copy in lockstep.

    Returns a :class:`TwinResult` whose ``series`` holds the error samples.
    Snapshots of ``chi`` and the velocity error are written to
    ``snapshot_dir`` at the end (and of ``chi`` every ``snapshot_every``
    steps when that is positive).
    """
    d, p = cfg.domain, cfg.params
    cfg.interpolant.check_domain(d)
    timings = {}
    t_start = _time.perf_counter()
    model = PGModel(d, p, cfg.forcing, cfg.stepper, cfg.solver)
    interp = make_interpolant(cfg.interpolant, d, p)
    ref_solver, da_solver = model.new_solver(), model.new_solver()
    T0 = initial_temperature(d, p, np.random.default_rng(cfg.seed), cfg.t0_amplitude, cfg.t0_max_index)
    ref = model.initial_state(T0, ref_solver)
    timings["setup"] = _time.perf_counter() - t_start

    t_phase = _time.perf_counter()
    max_cfl = 0.0
    for _ in range(cfg.n_steps(cfg.spin_up_time)):
        ref = model.step(ref, ref_solver)
    timings["spin_up"] = _time.perf_counter() - t_phase

    eta0 = _eta0(cfg, ref.Ttilde)
    da = model.initial_state(eta0, da_solver, time=ref.time)
    reference0 = ref.Ttilde.copy()

    n = cfg.n_steps(cfg.assimilation_time)
    rec = {k: [] for k in ("times", "l2_chi", "h1_U", "l2_ref", "energy_ref", "h1_U_direct")}
    max_con = 0.0
    diff_solver = model.new_solver()

    zero2, zero_tau = d.zeros2d(), np.zeros((2,) + d.shape2d)

    def velocity_error(chi):
        # v - u solves the unforced diagnostic system driven by chi; solving it
        # directly avoids the round-off floor of subtracting two velocities
        if not np.any(chi):
            return np.zeros((2,) + d.shape)
        return diff_solver.solve(chi, zero2, zero_tau).u

    def record(k):
        chi = da.Ttilde - ref.Ttilde
        rec["times"].append(k * cfg.stepper.dt)
        rec["l2_chi"].append(l2_norm(chi, d))
        rec["h1_U"].append(h1_norm(velocity_error(chi), d))
        rec["h1_U_direct"].append(h1_norm(da.diag.u - ref.diag.u, d))
        rec["l2_ref"].append(l2_norm(ref.Ttilde, d))
        rec["energy_ref"].append(energy_norm(ref.Ttilde, d, p) ** 2)

    def snap(k):
        if snapshot_dir is not None:
            write_snapshot(Path(snapshot_dir) / f"chi_{k:06d}", da.Ttilde - ref.Ttilde, d,
                           "chi", ref.time)

    t_phase = _time.perf_counter()
    record(0)
    observed = None
    for k in range(n):
        if k % cfg.obs_stride == 0:
            observed = interp(ref.Ttilde)
        nudge = nudging_tendency(da.Ttilde, observed, interp, p.mu)
        max_cfl = max(max_cfl, model.cfl(ref), model.cfl(da))
        da = model.step(da, da_solver, nudge)
        ref = model.step(ref, ref_solver)
        max_con = max(max_con, ref.diag.constraint_residual, da.diag.constraint_residual)
        if (k + 1) % cfg.record_every == 0 or k + 1 == n:
            record(k + 1)
        if cfg.snapshot_every and (k + 1) % cfg.snapshot_every == 0:
            snap(k + 1)
        if progress is not None:
            progress(k + 1, n, rec["l2_chi"][-1])
    timings["assimilation"] = _time.perf_counter() - t_phase

    chi = da.Ttilde - ref.Ttilde
    U = velocity_error(chi)
    if snapshot_dir is not None:
        write_snapshot(Path(snapshot_dir) / "chi_final", chi, d, "chi", ref.time)
        write_snapshot(Path(snapshot_dir) / "U1_final", U[0], d, "U1", ref.time)
        write_snapshot(Path(snapshot_dir) / "U2_final", U[1], d, "U2", ref.time)
        write_snapshot(Path(snapshot_dir) / "Ih_T_final", interp(ref.Ttilde), d, "Ih_T", ref.time)
    series = ErrorSeries(**{k: np.array(v) for k, v in rec.items()})
    return TwinResult(series=series, reference0=reference0, eta0=eta0, final_chi=chi,
                      final_U=U, max_cfl=max_cfl, max_constraint=max_con, timings=timings)


@dataclass
class ReferenceSeries:
    times: np.ndarray
    l2_T: np.ndarray
    energy_T: np.ndarray
    cfl: np.ndarray
    diag_iters: np.ndarray
    constraint: np.ndarray
    w_top: np.ndarray


def run_reference(cfg, n_steps=None, snapshot_dir=None):
    """Forward run of the reference alone from the configured initial data.

    Runs ``spin_up_time + assimilation_time`` unless ``n_steps`` is given and
    returns a :class:`ReferenceSeries` plus the final state.
    """
    d, p = cfg.domain, cfg.params
    model = PGModel(d, p, cfg.forcing, cfg.stepper, cfg.solver)
    solver = model.new_solver()
    T0 = initial_temperature(d, p, np.random.default_rng(cfg.seed), cfg.t0_amplitude, cfg.t0_max_index)
    state = model.initial_state(T0, solver)
    if n_steps is None:
        n_steps = cfg.n_steps(cfg.spin_up_time + cfg.assimilation_time)
    rec = {k: [] for k in ("times", "l2_T", "energy_T", "cfl", "diag_iters", "constraint", "w_top")}

    def record(st):
        u = st.diag.u
        scale = float(np.max(np.abs(u)))
        w = vertical_cumulative_divergence(u, d)
        rec["times"].append(st.time)
        rec["l2_T"].append(l2_norm(st.Ttilde, d))
        rec["energy_T"].append(energy_norm(st.Ttilde, d, p))
        rec["cfl"].append(model.cfl(st))
        rec["diag_iters"].append(st.diag.iterations)
        rec["constraint"].append(constraint_residual(u, d))
        rec["w_top"].append(float(np.max(np.abs(w[:, :, -1]))) / scale if scale > 0 else 0.0)

    def snap(st):
        if snapshot_dir is not None:
            write_snapshot(Path(snapshot_dir) / f"T_{st.steps:06d}", st.Ttilde, d, "T", st.time)

    record(state)
    for k in range(n_steps):
        state = model.step(state, solver)
        if (k + 1) % cfg.record_every == 0 or k + 1 == n_steps:
            record(state)
        if cfg.snapshot_every and (k + 1) % cfg.snapshot_every == 0:
            snap(state)
    if snapshot_dir is not None:
        write_snapshot(Path(snapshot_dir) / "T_final", state.Ttilde, d, "T", state.time)
    return ReferenceSeries(**{k: np.array(v) for k, v in rec.items()}), state


# -- analysis -------------------------------------------------------------------

@dataclass(frozen=True)
class DecayFit:
    rate: float
    intercept: float
    t0: float
    t1: float
    goodness: float
    n_samples: int

    def to_dict(self):
        return {"rate": self.rate, "intercept": self.intercept, "window": [self.t0, self.t1],
                "goodness": self.goodness, "n_samples": self.n_samples}


def fit_decay_rate(series, floor=1e-8, ceiling=1e-2):
    """Least-squares exponential rate of ``l2_chi`` inside a relative window.

    Only samples with ``l2_chi / l2_chi[0]`` in ``[floor, ceiling]`` are
    used; the rate is minus the slope of ``log l2_chi`` against time.
    """
    if len(series) == 0:
        raise InsufficientDataError("empty series")
    if not (0 < floor < ceiling):
        raise ValueError("need 0 < floor < ceiling")
    rel = series.relative()
    sel = (rel >= floor) & (rel <= ceiling)
    if sel.sum() < 4:
        raise InsufficientDataError(f"only {int(sel.sum())} samples in [{floor}, {ceiling}]")
    t = series.times[sel]
    y = np.log(series.l2_chi[sel])
    if np.ptp(y) == 0.0:
        return DecayFit(rate=0.0, intercept=float(y[0]), t0=float(t[0]), t1=float(t[-1]),
                        goodness=1.0, n_samples=int(sel.sum()))
    res = stats.linregress(t, y)
    return DecayFit(rate=float(-res.slope), intercept=float(res.intercept), t0=float(t[0]),
                    t1=float(t[-1]), goodness=float(min(1.0, res.rvalue ** 2)),
                    n_samples=int(sel.sum()))


def measure_velocity_ratio(domain, params, n_samples=50, seed=0, solver_settings=SolverSettings(),
                           max_index=(4, 4, 3), max_modes=3):
    """Largest ``||U||_{H^1} / |chi|`` over seeded random temperature differences.

    Each sample combines between one and ``max_modes`` eigenmodes, drawn
    uniformly from those with 1D indices up to ``max_index``, with ``N(0, 1)``
    amplitudes. Sparse draws probe the largest single-mode responses; dense
    mixtures average the ratio down and underestimate the supremum.
    """
    from .diagnostic import velocity_error_ratio

    solver = DiagnosticSolver(domain, params, solver_settings)
    basis = build_modal_basis(domain, params, min(domain.lx, domain.ly, domain.H))
    rng = np.random.default_rng(seed)
    block = tuple(m + 1 for m in max_index)
    n_block = int(np.prod(block))
    best = 0.0
    for _ in range(n_samples):
        k = int(rng.integers(1, max_modes + 1))
        picks = rng.choice(n_block, size=k, replace=False)
        coef = np.zeros(domain.shape)
        for flat, amp in zip(picks, rng.standard_normal(k)):
            coef[np.unravel_index(flat, block)] = amp
        chi = basis.synthesize(coef)
        if l2_norm(chi, domain) > 0:
            best = max(best, velocity_error_ratio(chi, domain, params, solver=solver))
    return best
