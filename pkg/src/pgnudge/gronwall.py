"""Numerical check of a generalized Gronwall lemma on sampled data.

For ``Y' + alpha Y <= beta`` the lemma concludes exponential decay of ``Y``
provided that, for large ``t``, the moving integrals of ``alpha`` over
windows of length ``tau`` stay above some ``gamma > 0``, those of ``alpha^-``
stay bounded and those of ``beta^+`` tend to zero. :func:`gronwall_check`
evaluates each hypothesis on the tail of a sampled horizon and fits the
decay of ``Y`` there.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.integrate import cumulative_trapezoid

__all__ = ["GronwallResult", "window_integrals", "gronwall_check"]


@dataclass
class GronwallResult:
    passed: bool
    hypotheses: dict
    tail_rate: float
    tail_goodness: float
    inequality_excess: float
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {"passed": self.passed, "hypotheses": dict(self.hypotheses),
                "tail_rate": self.tail_rate, "tail_goodness": self.tail_goodness,
                "inequality_excess": self.inequality_excess, "details": dict(self.details)}


def _uniform_step(t):
    t = np.asarray(t, float)
    if t.ndim != 1 or len(t) < 2:
        raise ValueError("need at least two sample times")
    dt = np.diff(t)
    if np.any(dt <= 0) or np.ptp(dt) > 1e-9 * dt.mean():
        raise ValueError("samples must lie on a uniform time grid")
    return float(dt.mean())


def window_integrals(t, f, tau):
    """Trapezoid integrals of ``f`` over ``[t_i, t_i + tau]`` for every admissible start."""
    dt = _uniform_step(t)
    m = tau / dt
    if abs(m - round(m)) > 1e-6 or round(m) < 1:
        raise ValueError(f"tau={tau} is not a positive multiple of the sample step {dt}")
    m = int(round(m))
    F = cumulative_trapezoid(np.asarray(f, float), t, initial=0.0)
    if len(F) <= m:
        raise ValueError("tau is longer than the sampled horizon")
    return F[m:] - F[:-m]


def gronwall_check(t, Y, alpha, beta, tau, gamma, tail_fraction=0.5, beta_tol=1e-10,
                   floor=1e-16, min_goodness=0.9):
    """Check the lemma's hypotheses and its conclusion on sampled data.

    Parameters
    ----------
    t : uniform sample times.
    Y, alpha, beta : samples of the three functions (arrays or scalars).
    tau, gamma : window length (a multiple of the sample step) and the required
        lower bound of the windowed integrals of ``alpha``.
    tail_fraction : the hypotheses are evaluated on windows starting in this
        final fraction of the admissible range.
    beta_tol : tail windowed integrals of ``beta^+`` must not exceed this.
    floor : samples of ``Y`` below ``floor * Y.max()`` are treated as
        round-off and excluded from the decay fit.

    Returns
    -------
    GronwallResult
        ``hypotheses`` holds pass/fail for ``alpha_lower``, ``alpha_minus_bounded``,
        ``beta_vanishes`` and ``Y_decays``. ``inequality_excess`` is the largest
        positive part of ``Y' + alpha Y - beta`` (finite differences) relative
        to ``max |alpha Y|``; it is a diagnostic and does not enter ``passed``.
    """
    t = np.asarray(t, float)
    n = len(t)
    Y, alpha, beta = (np.broadcast_to(np.asarray(a, float), (n,)) for a in (Y, alpha, beta))
    if np.any(Y < 0):
        raise ValueError("Y must be nonnegative")
    if not 0 < tail_fraction <= 1:
        raise ValueError("tail_fraction must lie in (0, 1]")
    I_a = window_integrals(t, alpha, tau)
    I_am = window_integrals(t, np.maximum(-alpha, 0.0), tau)
    I_bp = window_integrals(t, np.maximum(beta, 0.0), tau)
    start = int(np.floor(len(I_a) * (1 - tail_fraction)))
    tail_a, tail_am, tail_bp = I_a[start:], I_am[start:], I_bp[start:]
    hyp = {
        "alpha_lower": bool(tail_a.min() >= gamma),
        "alpha_minus_bounded": bool(np.all(np.isfinite(I_am))),
        "beta_vanishes": bool(tail_bp.max() <= beta_tol),
    }

    rate, goodness = np.nan, 0.0
    ymax = Y.max()
    valid = np.flatnonzero(Y > floor * ymax) if ymax > 0 else np.array([], int)
    if len(valid):
        last = valid[-1]
        lo = int(np.floor(last * (1 - tail_fraction)))
        idx = np.arange(lo, last + 1)
        idx = idx[Y[idx] > 0]
        if len(idx) >= 4:
            logy = np.log(Y[idx])
            if np.ptp(logy) == 0:
                rate, goodness = 0.0, 1.0
            else:
                fit = stats.linregress(t[idx], logy)
                rate, goodness = float(-fit.slope), float(fit.rvalue ** 2)
    hyp["Y_decays"] = bool(np.isfinite(rate) and rate > 0 and goodness >= min_goodness)

    dY = np.gradient(Y, t)
    scale = np.max(np.abs(alpha * Y))
    excess = float(np.max(np.maximum(dY + alpha * Y - beta, 0.0)) / scale) if scale > 0 else 0.0
    details = {"min_tail_alpha_integral": float(tail_a.min()),
               "max_alpha_minus_integral": float(I_am.max()),
               "max_tail_beta_plus_integral": float(tail_bp.max()),
               "gamma": float(gamma), "tau": float(tau)}
    return GronwallResult(passed=all(hyp.values()), hypotheses=hyp, tail_rate=float(rate),
                          tail_goodness=float(goodness), inequality_excess=excess, details=details)
