"""Time stepping of the temperature equation.

One step of the IMEX scheme treats transport, the heat source and an optional
nudging term explicitly and the full diffusion ``L2`` implicitly:

    T' = T + dt * (-transport(T, u) + Qstar + nudge)
    (I + dt L2) T_new = T'                      (imex-euler)
    (I + dt/2 L2) T_new = (I - dt/2 L2) T + dt * (...)   (imex-cn)

followed by a diagnostic re-solve for the velocity. Transport uses the
skew-symmetric split ``(a.grad T + div(a T)) / 2`` with SBP differences, so
its contribution to ``d|T|^2/dt`` vanishes up to round-off whenever the
normal velocity is zero on the boundary.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .diagnostic import DiagnosticSolution, DiagnosticSolver, SolverSettings
from .field import (check_field, ddx, ddy, ddz, energy_norm, l2_norm,
                    laplacian_2d, neumann_stiffness, robin_stiffness,
                    vertical_cumulative_divergence)

__all__ = [
    "CFLViolationError",
    "CompatibilityWarning",
    "ForcingSpec",
    "StepperSettings",
    "ModelState",
    "PGModel",
    "compute_qstar",
    "surface_normal_derivative",
    "advection_tendency",
    "transport",
    "cfl_number",
    "DiffusionOperator",
    "diffusion_step",
    "energy_residual",
    "initial_temperature",
]

CFL_LIMIT = 0.5
SCHEMES = ("imex-euler", "imex-cn")


class CFLViolationError(RuntimeError):
    """The advective Courant number exceeds the safety limit; the step is rejected."""


class CompatibilityWarning(UserWarning):
    pass


@dataclass(frozen=True)
class StepperSettings:
    dt: float = 0.01
    scheme: str = "imex-euler"
    advection: str = "centered-skew"

    def __post_init__(self):
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ValueError(f"dt must be positive, got {self.dt!r}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.advection != "centered-skew":
            raise ValueError(f"unknown advection stencil {self.advection!r}")


def surface_normal_derivative(Tstar, domain):
    """Largest one-sided (second-order) normal derivative of ``Tstar`` on the walls."""
    f = np.asarray(Tstar, float)
    dx, dy = domain.dx, domain.dy
    parts = [(-3 * f[0] + 4 * f[1] - f[2]) / (2 * dx),
             (3 * f[-1] - 4 * f[-2] + f[-3]) / (2 * dx),
             (-3 * f[:, 0] + 4 * f[:, 1] - f[:, 2]) / (2 * dy),
             (3 * f[:, -1] - 4 * f[:, -2] + f[:, -3]) / (2 * dy)]
    return float(max(np.max(np.abs(p)) for p in parts))


def compute_qstar(Q, Tstar, domain, params, compat_tol=0.1):
    """``Q + K_h Laplacian(Tstar)`` with the surface Laplacian extended in z.

    Warns (:class:`CompatibilityWarning`) when the wall-normal derivative of
    ``Tstar``, relative to its largest horizontal gradient, exceeds ``compat_tol``.
    """
    Q = check_field(Q, domain, "Q")
    Tstar = np.asarray(Tstar, float)
    gx, gy = np.gradient(Tstar, domain.dx, domain.dy, edge_order=2)
    scale = float(np.max(np.hypot(gx, gy)))
    if scale > 0:
        dn = surface_normal_derivative(Tstar, domain)
        if dn / scale > compat_tol:
            warnings.warn(f"Tstar violates the no-flux compatibility condition: "
                          f"max |dTstar/dn| = {dn:.3e}", CompatibilityWarning, stacklevel=2)
    return Q + params.K_h * domain.extend(laplacian_2d(Tstar, domain))


@dataclass
class ForcingSpec:
    """Heat source, surface temperature and wind stress; ``Qstar`` is derived."""

    Q: np.ndarray
    Tstar: np.ndarray
    tau: np.ndarray
    Qstar: np.ndarray

    @classmethod
    def build(cls, domain, params, Q=None, Tstar=None, tau=None):
        Q = domain.zeros() if Q is None else np.asarray(Q, float)
        Tstar = domain.zeros2d() if Tstar is None else np.asarray(Tstar, float)
        tau = np.zeros((2,) + domain.shape2d) if tau is None else np.asarray(tau, float)
        return cls(Q=Q, Tstar=Tstar, tau=tau, Qstar=compute_qstar(Q, Tstar, domain, params))


@dataclass
class ModelState:
    Ttilde: np.ndarray
    time: float
    diag: DiagnosticSolution
    steps: int = 0


def transport(T, u, w, domain):
    """Skew-symmetric ``u.grad T + w dT/dz``."""
    u1, u2 = u
    return 0.5 * (u1 * ddx(T, domain) + ddx(u1 * T, domain)
                  + u2 * ddy(T, domain) + ddy(u2 * T, domain)
                  + w * ddz(T, domain) + ddz(w * T, domain))


def cfl_number(u, w, dt, domain):
    return float(dt * max(np.max(np.abs(u[0])) / domain.dx,
                          np.max(np.abs(u[1])) / domain.dy,
                          np.max(np.abs(w)) / domain.dz))


def advection_tendency(Ttilde, diag, Tstar, domain, dt=None):
    """``-(u.grad Ttilde + w dTtilde/dz + u.grad Tstar)``.

    With ``dt`` given, the Courant number is checked first and a
    :class:`CFLViolationError` raised when it exceeds 0.5.
    """
    u = diag.u
    w = vertical_cumulative_divergence(u, domain)
    if dt is not None:
        c = cfl_number(u, w, dt, domain)
        if c > CFL_LIMIT:
            raise CFLViolationError(f"CFL number {c:.3f} exceeds {CFL_LIMIT}")
    Tstar = np.asarray(Tstar, float)
    gx = ddx(Tstar[:, :, None], domain)
    gy = ddy(Tstar[:, :, None], domain)
    return -(transport(Ttilde, u, w, domain) + u[0] * gx + u[1] * gy)


class DiffusionOperator:
    """Sparse ``L2 = -K_h Laplacian - K_v d_zz`` with the temperature boundary rows."""

    def __init__(self, domain, params):
        self.domain = domain
        nx1, ny1, nz1 = domain.shape
        ix, iy, iz = sp.identity(nx1), sp.identity(ny1), sp.identity(nz1)
        kx = neumann_stiffness(domain.nx, domain.dx)
        ky = neumann_stiffness(domain.ny, domain.dy)
        kz = robin_stiffness(domain.nz, domain.dz, params.alpha / params.K_v)
        self.matrix = (params.K_h * (sp.kron(sp.kron(kx, iy), iz) + sp.kron(sp.kron(ix, ky), iz))
                       + params.K_v * sp.kron(sp.kron(ix, iy), kz)).tocsr()
        self._lu = {}

    def apply(self, T):
        return (self.matrix @ T.ravel()).reshape(self.domain.shape)

    def _factor(self, theta_dt):
        key = float(theta_dt)
        if key not in self._lu:
            a = sp.identity(self.matrix.shape[0], format="csc") + theta_dt * self.matrix.tocsc()
            try:
                self._lu[key] = spla.splu(a, permc_spec="MMD_AT_PLUS_A")
            except RuntimeError as exc:
                raise RuntimeError(f"implicit diffusion factorization failed: {exc}") from exc
        return self._lu[key]

    def solve(self, rhs, theta_dt):
        """``(I + theta_dt L2)^{-1} rhs``."""
        out = self._factor(theta_dt).solve(np.ascontiguousarray(rhs).ravel())
        if not np.all(np.isfinite(out)):
            raise RuntimeError("implicit diffusion produced non-finite values")
        return out.reshape(self.domain.shape)


def diffusion_step(Ttilde, dt, domain, params, scheme="imex-euler", operator=None):
    """Implicit diffusion over ``dt``: backward Euler or Crank-Nicolson."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    Ttilde = check_field(Ttilde, domain, "Ttilde")
    op = operator or DiffusionOperator(domain, params)
    if scheme == "imex-euler":
        return op.solve(Ttilde, dt)
    return op.solve(Ttilde - 0.5 * dt * op.apply(Ttilde), 0.5 * dt)


def energy_residual(T_old, T_new, dt, domain, params):
    """Discrete ``d|T|^2/dt + 2||T||^2`` (backward difference, norm at the new level)."""
    return ((l2_norm(T_new, domain) ** 2 - l2_norm(T_old, domain) ** 2) / dt
            + 2.0 * energy_norm(T_new, domain, params) ** 2)


def initial_temperature(domain, params, rng, amplitude=0.5, max_index=(2, 2, 2)):
    """Seeded superposition of low eigenmodes of the temperature Laplacian.

    Each mode with 1D indices up to ``max_index`` gets an ``N(0, 1)``
    amplitude; the sum is rescaled so that its L2 norm equals ``amplitude``
    times the square root of the volume.
    """
    from .observe import build_modal_basis

    basis = build_modal_basis(domain, params, min(domain.lx, domain.ly, domain.H))
    a, b, c = (m + 1 for m in max_index)
    coef = np.zeros(domain.shape)
    coef[:a, :b, :c] = rng.standard_normal((a, b, c))
    f = basis.synthesize(coef)
    return amplitude * np.sqrt(domain.volume) * f / l2_norm(f, domain)


class PGModel:
    """The planetary geostrophic model on a fixed grid with fixed forcing."""

    def __init__(self, domain, params, forcing, stepper=StepperSettings(),
                 solver_settings=SolverSettings()):
        self.domain = domain
        self.params = params
        self.forcing = forcing
        self.settings = stepper
        self.solver_settings = solver_settings
        self.diffusion = DiffusionOperator(domain, params)

    def new_solver(self):
        """A fresh diagnostic solver sharing this model's configuration."""
        return DiagnosticSolver(self.domain, self.params, self.solver_settings)

    def diagnose(self, Ttilde, solver):
        f = self.forcing
        return solver.solve(Ttilde, f.Tstar, f.tau)

    def initial_state(self, Ttilde0, solver, time=0.0):
        Ttilde0 = check_field(Ttilde0, self.domain, "Ttilde0").copy()
        return ModelState(Ttilde=Ttilde0, time=float(time), diag=self.diagnose(Ttilde0, solver))

    def tendency(self, state):
        return (advection_tendency(state.Ttilde, state.diag, self.forcing.Tstar,
                                   self.domain, dt=self.settings.dt)
                + self.forcing.Qstar)

    def step(self, state, solver, nudge=None):
        """Advance one step; ``nudge`` is an extra explicit tendency."""
        dt = self.settings.dt
        tend = self.tendency(state)
        if nudge is not None:
            tend = tend + nudge
        T = state.Ttilde
        if self.settings.scheme == "imex-euler":
            T_new = self.diffusion.solve(T + dt * tend, dt)
        else:
            T_new = self.diffusion.solve(T - 0.5 * dt * self.diffusion.apply(T) + dt * tend, 0.5 * dt)
        diag = self.diagnose(T_new, solver)
        return replace(state, Ttilde=T_new, time=state.time + dt, diag=diag, steps=state.steps + 1)

    def cfl(self, state):
        w = vertical_cumulative_divergence(state.diag.u, self.domain)
        return cfl_number(state.diag.u, w, self.settings.dt, self.domain)
