import math

import numpy as np
import pytest

from oracles import exp_fit
from pgnudge.assimilate import (ErrorSeries, InsufficientDataError, TwinConfig, fit_decay_rate,
                                heuristic_mu, make_interpolant, measure_velocity_ratio,
                                nudging_tendency, run_twin, theorem_constants)
from pgnudge.config import apply_override, load_config
from pgnudge.field import DomainSpec, PhysParams
from pgnudge.observe import InterpolantSpec, build_modal_basis
from pgnudge.runner import prepare, twin_config
from pgnudge.stepper import ForcingSpec, StepperSettings

D = DomainSpec(8, 8, 6)
P = PhysParams()


def series(t, y):
    t = np.asarray(t, float)
    return ErrorSeries(times=t, l2_chi=np.asarray(y, float), h1_U=np.zeros_like(t),
                       l2_ref=np.ones_like(t))


def test_nudging_tendency():
    interp = make_interpolant(InterpolantSpec("volume", 0.5), D, P)
    rng = np.random.default_rng(0)
    eta, ref = rng.standard_normal(D.shape), rng.standard_normal(D.shape)
    obs = interp(ref)
    np.testing.assert_allclose(nudging_tendency(eta, obs, interp, 3.0), -3.0 * (interp(eta) - obs))
    assert not np.any(nudging_tendency(eta, obs, interp, 0.0))
    assert not np.any(nudging_tendency(ref, obs, interp, 5.0))
    with pytest.raises(ValueError):
        nudging_tendency(eta, obs[:-1], interp, 1.0)


def test_fit_recovers_synthetic_rate():
    t = np.linspace(0, 10, 501)
    fit = fit_decay_rate(series(t, 2.0 * np.exp(-3.0 * t)))
    assert abs(fit.rate - 3.0) < 1e-10 and fit.goodness > 1 - 1e-12
    rel = np.exp(-3.0 * np.array([fit.t0, fit.t1]))
    assert rel[0] <= 1e-2 and rel[1] >= 1e-8
    sel = (t >= fit.t0) & (t <= fit.t1)
    assert abs(exp_fit(t[sel], 2.0 * np.exp(-3.0 * t[sel]))[0] - fit.rate) < 1e-10


def test_fit_edge_cases():
    t = np.linspace(0, 1, 20)
    flat = fit_decay_rate(series(t, np.ones_like(t)), floor=1e-8, ceiling=1.0)
    assert flat.rate == 0.0 and flat.goodness == 1.0
    with pytest.raises(InsufficientDataError):
        fit_decay_rate(series(t, np.ones_like(t)))
    with pytest.raises(ValueError):
        fit_decay_rate(series(t, np.ones_like(t)), floor=1.0, ceiling=0.5)
    with pytest.raises(ValueError):
        ErrorSeries(times=t, l2_chi=t[:-1], h1_U=t, l2_ref=t)


def _forcing(Ts_amp=0.0, q=0.0, d=D):
    X, Y = np.meshgrid(d.x, d.y, indexing="ij")
    return ForcingSpec.build(d, P, Q=np.full(d.shape, q),
                             Tstar=Ts_amp * np.cos(np.pi * X) * np.cos(np.pi * Y))


def test_constants_without_forcing():
    c = theorem_constants(P.with_mu(5.0), _forcing(), InterpolantSpec("modal", 0.25, 1.0), D,
                          C=1.5)
    assert c.K_tilde == max(2 * D.H / P.alpha, 2 * D.H ** 2 / P.K_v)
    assert c.R_a_tilde == c.R_a == c.K_r == 0.0
    assert c.mu_min == 3.0 and c.feasible and c.smallness == 5.0 * 0.25 ** 2


def test_absorbing_radius_closed_form():
    # H = 1, alpha = 2, K_v = 1 gives K = 2 and R_a_tilde = 16 |Tstar|^2 + 32 |Q|^2
    p = PhysParams(alpha=2.0, K_v=1.0)
    norms = {"Tstar_L2_M": 0.3, "Tstar_H1_M": 1.0, "Tstar_H2_M": 2.0, "Tstar_H2_Omega": 2.0,
             "Q_L2": 0.1, "tau_H1_M": 0.0}
    c = theorem_constants(p, None, InterpolantSpec(), D, norms=norms)
    assert c.K_tilde == 2.0
    assert math.isclose(c.R_a_tilde, 16 * 0.09 + 32 * 0.01, rel_tol=1e-14)
    assert math.isclose(c.R_a, 2 * c.R_a_tilde + 2 * 0.09, rel_tol=1e-14)


def test_velocity_radius_overflows_to_infinity():
    norms = {"Tstar_L2_M": 10.0, "Tstar_H1_M": 1.0, "Tstar_H2_M": 1.0, "Tstar_H2_Omega": 1.0,
             "Q_L2": 1.0, "tau_H1_M": 1.0}
    assert theorem_constants(P, None, InterpolantSpec(), D, norms=norms).R_v == math.inf


def test_constants_validation():
    for kw in ({"C": 0.0}, {"r": -1.0}, {"lambda1": 0.0}):
        with pytest.raises(ValueError):
            theorem_constants(P, _forcing(), InterpolantSpec(), D, **kw)


def test_heuristic_mu_exceeds_minimum():
    f = _forcing(0.1, 0.005)
    mu = heuristic_mu(P, f, D)
    assert math.isclose(mu, 10 * theorem_constants(P, f, InterpolantSpec(), D).mu_min)


def test_twin_config_validation():
    with pytest.raises(ValueError, match="dt\\*mu"):
        TwinConfig(D, P.with_mu(100.0), _forcing(), StepperSettings(0.01))
    with pytest.raises(ValueError, match="eta0_mode"):
        TwinConfig(D, P, _forcing(), eta0_mode="copy")


def _small_twin(mu, **kw):
    cfg = TwinConfig(D, P.with_mu(mu), _forcing(0.1, 0.005), StepperSettings(0.02),
                     InterpolantSpec("modal", 0.5), spin_up_time=0.5, assimilation_time=3.0,
                     **kw)
    return run_twin(cfg)


def test_small_twin_nudging_beats_free_run():
    nudged, free = _small_twin(15.0), _small_twin(0.0)
    np.testing.assert_array_equal(nudged.reference0, free.reference0)
    rel_n, rel_f = nudged.series.relative()[-1], free.series.relative()[-1]
    assert rel_n < 1e-2 and rel_f > 0.1
    # the difference-system velocity error agrees with the subtraction of velocities
    s = nudged.series
    big = s.l2_chi > 1e-6 * s.l2_chi[0]
    np.testing.assert_allclose(s.h1_U[big], s.h1_U_direct[big], rtol=1e-6)


def test_sparse_observations_still_converge():
    res = _small_twin(15.0, obs_stride=5, record_every=5)
    assert len(res.series) == 31 and res.series.relative()[-1] < 1e-2


def test_velocity_ratio_is_deterministic():
    a = measure_velocity_ratio(D, P, n_samples=5, seed=3)
    assert a > 0 and a == measure_velocity_ratio(D, P, n_samples=5, seed=3)


def test_reference_stays_in_absorbing_ball(flagship):
    rep, s = flagship.report, flagship.series
    assert np.all(s["l2_ref"] ** 2 <= rep["constants"]["R_a"])
    assert rep["no_assimilation"] is False


def test_control_is_flagged(control):
    assert control.report["no_assimilation"] is True


def _unobserved_rate(domain, params, h, dt):
    """Backward-Euler decay rate of the slowest mode the modal interpolant discards."""
    b = build_modal_basis(domain, params, h)
    g = (params.K_h * (b.lam_x[:, None, None] + b.lam_y[None, :, None])
         + params.K_v * b.lam_z[None, None, :])
    r = g[~b.retained_mask].min()
    return math.log1p(dt * r) / dt


def test_rate_saturates_at_unobserved_diffusion():
    # coarse grid and dt = 0.0025 so that 4 mu* dt stays below 0.5; once nudging
    # removes the observed modes, chi decays like the slowest discarded mode
    cfg = load_config(None)
    for key, value in (("domain.nx", 12), ("domain.ny", 12), ("domain.nz", 6),
                       ("stepper.dt", 0.0025), ("twin.spin_up_time", 1.0),
                       ("twin.assimilation_time", 1.5), ("twin.record_every", 4),
                       ("theory.c0_samples", 10)):
        cfg = apply_override(cfg, key, value)
    setup = prepare(cfg)
    mu_star = setup.params.mu
    plateau = _unobserved_rate(setup.domain, setup.params, setup.spec.h, 0.0025)
    rates = []
    for mu in (0.0, mu_star / 4, mu_star, 4 * mu_star):
        setup.params = setup.params.with_mu(mu)
        s = run_twin(twin_config(setup)).series
        rates.append(fit_decay_rate(s, floor=1e-12, ceiling=1.0).rate)
    assert rates[0] < 0.25 * plateau
    for r in rates[1:]:
        assert abs(r - plateau) <= 0.02 * plateau


def test_flagship_rate_matches_unobserved_diffusion(flagship):
    rep = flagship.report
    d = DomainSpec(**rep["config"]["domain"])
    p = PhysParams(**{**rep["config"]["params"], "mu": rep["mu"]})
    plateau = _unobserved_rate(d, p, rep["config"]["interpolant"]["h"],
                               rep["config"]["stepper"]["dt"])
    assert abs(rep["decay_fit"]["rate"] - plateau) <= 0.01 * plateau
