"""Diagnostic solve for the horizontal velocity and bottom pressure.

Given the temperature deviation ``Ttilde``, the surface temperature ``Tstar``
and the wind stress ``tau``, the balance

    grad(p_s - int_{-H}^z Ttilde - (z + H) Tstar) + f k x u + L1 u = 0,
    div(int_{-H}^0 u dz) = 0,

is assembled as one sparse saddle-point system in the unknowns ``(u1, u2,
p_s)``. Side walls carry ``u . n = 0`` (identity rows) and a free-slip
condition on the tangential component (ghost elimination); the top and
bottom carry ``du/dz = tau`` and ``du/dz = 0``.

On collocated nodes the centered pressure gradient has a four-dimensional
kernel (the constant and three checkerboards). Those modes never reach the
velocity; the system is bordered with four multipliers that pin them, which
also fixes the gauge ``mean(p_s) = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .field import (DomainSpec, PhysParams, InvalidFieldError, check_field,
                    cumulative_z, ddx, ddy, dirichlet_stiffness, divergence,
                    h1_norm, l2_norm, neumann_stiffness, sbp_d1,
                    vertical_cumulative_divergence, vertical_integral)

__all__ = [
    "NoConvergenceError",
    "SingularSystemError",
    "SolverSettings",
    "DiagnosticSolution",
    "DiagnosticSolver",
    "solve_velocity",
    "reconstruct_w",
    "reconstruct_pressure",
    "velocity_error_ratio",
    "pressure_null_modes",
    "constraint_residual",
]

METHODS = ("iterative-krylov", "modal-direct", "dense-direct")


class NoConvergenceError(RuntimeError):
    def __init__(self, message, residual=np.nan, iterations=0):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


class SingularSystemError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverSettings:
    tol: float = 1e-10
    max_iter: int = 500
    method: str = "iterative-krylov"

    def __post_init__(self):
        if not 0 < self.tol < 1:
            raise ValueError(f"tol must lie in (0, 1), got {self.tol!r}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValueError(f"max_iter must be a positive integer, got {self.max_iter!r}")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")


@dataclass
class DiagnosticSolution:
    u: np.ndarray                 # (2, nx+1, ny+1, nz+1)
    p_s: np.ndarray               # (nx+1, ny+1)
    momentum_residual: float
    constraint_residual: float
    iterations: int

    @property
    def scale(self):
        return float(np.max(np.abs(self.u)))


def pressure_null_modes(domain):
    """Kernel of the centered gradient on the surface grid, orthonormal in L2(M)."""
    i = np.arange(domain.nx + 1)[:, None]
    j = np.arange(domain.ny + 1)[None, :]
    raw = [np.ones(domain.shape2d), (-1.0) ** i * np.ones_like(j),
           (-1.0) ** j * np.ones_like(i), (-1.0) ** (i + j)]
    w = domain.weights2d.ravel()
    modes = []
    for m in raw:
        v = m.ravel().astype(float)
        for q in modes:
            v = v - np.dot(q * w, v) * q
        modes.append(v / np.sqrt(np.dot(v * w, v)))
    return np.array(modes)


def _kron3(a, b, c):
    return sp.kron(sp.kron(a, b), c, format="csr")


class DiagnosticSolver:
    """Assembled saddle-point operator with cached factorizations.

    One instance serves any number of right-hand sides on a fixed domain and
    parameter set; ``mu`` does not enter the operator. Solves are stateless,
    so the result depends only on the right-hand side.
    """

    def __init__(self, domain: DomainSpec, params: PhysParams, settings: SolverSettings = SolverSettings()):
        if domain.nz < 3:
            raise SingularSystemError("the diagnostic system needs at least 3 vertical cells")
        self.domain = domain
        self.params = params
        self.settings = settings
        self._modal = None
        self._dense = None
        self._assemble()

    # -- assembly -----------------------------------------------------------------
    def _assemble(self):
        d, p = self.domain, self.params
        nx1, ny1, nz1 = d.shape
        n3, n2 = nx1 * ny1 * nz1, nx1 * ny1
        ix, iy, iz = sp.identity(nx1), sp.identity(ny1), sp.identity(nz1)

        kz = neumann_stiffness(d.nz, d.dz)
        l1_u1 = (p.A_h * (_kron3(dirichlet_stiffness(d.nx, d.dx), iy, iz)
                          + _kron3(ix, neumann_stiffness(d.ny, d.dy), iz))
                 + p.A_v * _kron3(ix, iy, kz))
        l1_u2 = (p.A_h * (_kron3(neumann_stiffness(d.nx, d.dx), iy, iz)
                          + _kron3(ix, dirichlet_stiffness(d.ny, d.dy), iz))
                 + p.A_v * _kron3(ix, iy, kz))
        f3 = np.broadcast_to(p.coriolis(d.y)[None, :, None], d.shape).ravel()
        cor = sp.diags(f3)

        column = sp.csr_matrix(np.ones((nz1, 1)))
        gx = sp.kron(sp.kron(sbp_d1(d.nx, d.dx), iy), column, format="csr")
        gy = sp.kron(sp.kron(ix, sbp_d1(d.ny, d.dy)), column, format="csr")

        integ = sp.kron(sp.kron(ix, iy), sp.csr_matrix(d.wz[None, :]), format="csr")
        cx = sp.kron(sbp_d1(d.nx, d.dx), iy) @ integ
        cy = sp.kron(ix, sbp_d1(d.ny, d.dy)) @ integ

        # Normal velocity vanishes on the walls: identity rows there.
        wall1 = np.zeros(d.shape, bool)
        wall1[[0, -1], :, :] = True
        wall2 = np.zeros(d.shape, bool)
        wall2[:, [0, -1], :] = True
        self._wall = (wall1.ravel(), wall2.ravel())
        keep1 = sp.diags((~wall1.ravel()).astype(float))
        keep2 = sp.diags((~wall2.ravel()).astype(float))
        pin1 = sp.diags(wall1.ravel().astype(float))
        pin2 = sp.diags(wall2.ravel().astype(float))

        row1 = sp.hstack([keep1 @ l1_u1 + pin1, -(keep1 @ cor), keep1 @ gx])
        row2 = sp.hstack([keep2 @ cor, keep2 @ l1_u2 + pin2, keep2 @ gy])
        row3 = sp.hstack([cx, cy, sp.csr_matrix((n2, n2))])
        core = sp.vstack([row1, row2, row3], format="csr")

        null = pressure_null_modes(d)
        border_col = sp.vstack([sp.csr_matrix((2 * n3, 4)), sp.csr_matrix(null.T)])
        border_row = sp.hstack([sp.csr_matrix((4, 2 * n3)),
                                sp.csr_matrix(null * d.weights2d.ravel() / d.area)])
        self.matrix = sp.bmat([[core, border_col], [border_row, None]], format="csc")
        self.n3, self.n2 = n3, n2
        self.n_momentum = 2 * n3

    # -- right-hand side ---------------------------------------------------------
    def rhs(self, Ttilde, Tstar, tau):
        """Right-hand side for the given temperature and surface forcing."""
        d, p = self.domain, self.params
        Ttilde = check_field(Ttilde, d, "Ttilde")
        Tstar = np.asarray(Tstar, float)
        tau = np.asarray(tau, float)
        if Tstar.shape != d.shape2d or tau.shape != (2,) + d.shape2d:
            raise InvalidFieldError("Tstar / tau do not match the surface grid")
        # -grad of the temperature part of Phi
        heave = cumulative_z(Ttilde, d) + (d.z + d.H)[None, None, :] * Tstar[:, :, None]
        b1 = ddx(heave, d)
        b2 = ddy(heave, d)
        b1[:, :, -1] += 2.0 * p.A_v * tau[0] / d.dz
        b2[:, :, -1] += 2.0 * p.A_v * tau[1] / d.dz
        b1 = b1.ravel()
        b2 = b2.ravel()
        b1[self._wall[0]] = 0.0
        b2[self._wall[1]] = 0.0
        return np.concatenate([b1, b2, np.zeros(self.n2 + 4)])

    # -- solve ------------------------------------------------------------------
    def _solve_vector(self, b):
        """Return ``(x, iterations, residuals)``; residuals may be None if not yet computed."""
        s = self.settings
        if s.method == "dense-direct":
            if self._dense is None:
                self._dense = self.matrix.toarray()
            return np.linalg.solve(self._dense, b), 1, None
        if self._modal is None:
            self._modal = _VerticalModeSolver(self)
        if s.method == "modal-direct":
            return self._modal.solve(b), 1, None
        # iterative-krylov: the vertical-mode block solver is an exact
        # preconditioner M, so the first preconditioned iterate M b usually
        # meets the tolerance; otherwise GMRES continues from it
        x = self._modal.solve(b)
        res = self._residuals(x, b)
        if max(res) <= 0.5 * s.tol:
            return x, 1, res
        prec = spla.LinearOperator(self.matrix.shape, self._modal.solve, dtype=float)
        count = [1]

        def cb(_):
            count[0] += 1

        rtol = 0.1 * s.tol
        # restart until the true (unpreconditioned) residual meets the tolerance
        for _ in range(3):
            x, info = spla.gmres(self.matrix, b, x0=x, rtol=rtol, atol=0.0,
                                 restart=30, maxiter=s.max_iter, M=prec,
                                 callback=cb, callback_type="pr_norm")
            res = self._residuals(x, b)
            if info == 0 and max(res) <= 0.5 * s.tol:
                break
            rtol *= 0.01
        if info != 0:
            raise NoConvergenceError("GMRES did not converge", max(res), count[0])
        return x, count[0], res

    def _residuals(self, x, b):
        """Relative momentum residual and relative depth-integrated divergence."""
        bnorm = np.linalg.norm(b)
        r = self.matrix @ x - b
        mom = float(np.linalg.norm(r[: self.n_momentum]) / bnorm) if bnorm > 0 else 0.0
        u = x[: 2 * self.n3].reshape((2,) + self.domain.shape)
        return mom, constraint_residual(u, self.domain)

    def solve(self, Ttilde, Tstar, tau):
        b = self.rhs(Ttilde, Tstar, tau)
        d = self.domain
        if not np.any(b):
            x, iters, res = np.zeros_like(b), 0, (0.0, 0.0)
        else:
            x, iters, res = self._solve_vector(b)
        mom, con = res if res is not None else self._residuals(x, b)
        u = x[: 2 * self.n3].reshape((2,) + d.shape)
        p_s = x[2 * self.n3: 2 * self.n3 + self.n2].reshape(d.shape2d)
        if mom > self.settings.tol or con > self.settings.tol:
            raise NoConvergenceError("diagnostic residual above tolerance", max(mom, con), iters)
        return DiagnosticSolution(u=u, p_s=p_s, momentum_residual=mom,
                                  constraint_residual=con, iterations=iters)


def constraint_residual(u, domain):
    """``max |div int u dz|`` relative to ``max |u|`` (0 for ``u = 0``)."""
    div_int = vertical_integral(divergence(u, domain), domain)
    scale = float(np.max(np.abs(u)))
    return float(np.max(np.abs(div_int)) / scale) if scale > 0 else 0.0


class _VerticalModeSolver:
    """Exact inverse of the assembled operator by vertical-mode decomposition.

    Every block of the operator except the vertical viscosity acts level by
    level with identical coefficients, so expanding the velocity in the
    eigenvectors of the (Neumann) vertical stiffness decouples the levels.
    The constant mode carries the depth-integrated flow, the pressure and the
    constraint; the remaining modes are plain 2D elliptic problems.
    """

    def __init__(self, owner):
        d, p = owner.domain, owner.params
        self.domain = d
        self.n3, self.n2 = owner.n3, owner.n2
        nx1, ny1, nz1 = d.shape
        wz = d.wz
        kz = neumann_stiffness(d.nz, d.dz).toarray()
        sym = (np.sqrt(wz)[:, None] * kz) / np.sqrt(wz)[None, :]
        lam, vec = np.linalg.eigh(0.5 * (sym + sym.T))
        vz = vec / np.sqrt(wz)[:, None]
        vz[:, 0] = 1.0 / np.sqrt(d.H)
        lam[0] = 0.0
        self.vz = vz
        self.vz_t_w = vz.T * wz[None, :]

        ix, iy = sp.identity(nx1), sp.identity(ny1)
        h1 = p.A_h * (sp.kron(dirichlet_stiffness(d.nx, d.dx), iy)
                      + sp.kron(ix, neumann_stiffness(d.ny, d.dy)))
        h2 = p.A_h * (sp.kron(neumann_stiffness(d.nx, d.dx), iy)
                      + sp.kron(ix, dirichlet_stiffness(d.ny, d.dy)))
        wall1, wall2 = (w.reshape(d.shape)[:, :, 0].ravel() for w in owner._wall)
        keep1, keep2 = sp.diags((~wall1).astype(float)), sp.diags((~wall2).astype(float))
        pin1, pin2 = sp.diags(wall1.astype(float)), sp.diags(wall2.astype(float))
        cor = sp.diags(np.broadcast_to(p.coriolis(d.y)[None, :], d.shape2d).ravel())
        eye = sp.identity(self.n2)

        self.lu = []
        for m, lm in enumerate(lam):
            a11 = keep1 @ (h1 + p.A_v * lm * eye) + pin1
            a22 = keep2 @ (h2 + p.A_v * lm * eye) + pin2
            blocks = [[a11, -(keep1 @ cor)], [keep2 @ cor, a22]]
            if m == 0:
                gx = np.sqrt(d.H) * (keep1 @ sp.kron(sbp_d1(d.nx, d.dx), iy))
                gy = np.sqrt(d.H) * (keep2 @ sp.kron(ix, sbp_d1(d.ny, d.dy)))
                cx = sp.kron(sbp_d1(d.nx, d.dx), iy)
                cy = sp.kron(ix, sbp_d1(d.ny, d.dy))
                null = pressure_null_modes(d)
                brow = sp.csr_matrix(null * d.weights2d.ravel() / d.area)
                blocks = [[a11, -(keep1 @ cor), gx, None],
                          [keep2 @ cor, a22, gy, None],
                          [cx, cy, None, sp.csr_matrix(null.T)],
                          [None, None, brow, None]]
            self.lu.append(spla.splu(sp.bmat(blocks, format="csc")))

    def solve(self, b):
        d = self.domain
        n3, n2 = self.n3, self.n2
        b = np.asarray(b, float).ravel()
        shape = (d.shape2d[0] * d.shape2d[1], d.shape[2])
        b1 = b[:n3].reshape(shape) @ self.vz_t_w.T
        b2 = b[n3:2 * n3].reshape(shape) @ self.vz_t_w.T
        rest = b[2 * n3:]
        u1 = np.empty_like(b1)
        u2 = np.empty_like(b2)
        x0 = self.lu[0].solve(np.concatenate([b1[:, 0], b2[:, 0],
                                              rest[:n2] / np.sqrt(d.H), rest[n2:]]))
        u1[:, 0], u2[:, 0] = x0[:n2], x0[n2:2 * n2]
        tail = x0[2 * n2:]
        for m in range(1, shape[1]):
            xm = self.lu[m].solve(np.concatenate([b1[:, m], b2[:, m]]))
            u1[:, m], u2[:, m] = xm[:n2], xm[n2:]
        u1 = u1 @ self.vz.T
        u2 = u2 @ self.vz.T
        return np.concatenate([u1.ravel(), u2.ravel(), tail])


def solve_velocity(Ttilde, Tstar, tau, domain, params, settings=SolverSettings()):
    """One-shot diagnostic solve; see :class:`DiagnosticSolver` for repeated use."""
    return DiagnosticSolver(domain, params, settings).solve(Ttilde, Tstar, tau)


def reconstruct_w(u, domain):
    """Vertical velocity from continuity, zero on the bottom."""
    return vertical_cumulative_divergence(u, domain)


def reconstruct_pressure(p_s, T, domain):
    """Hydrostatic pressure ``p = p_s - int_{-H}^z T``."""
    T = check_field(T, domain, "T")
    return np.asarray(p_s, float)[:, :, None] - cumulative_z(T, domain)


def velocity_error_ratio(chi, domain, params, settings=SolverSettings(), solver=None):
    """``||U||_{H^1} / |chi|`` for the velocity driven by a temperature difference.

    The difference system has no surface forcing, so ``U`` is the diagnostic
    response to ``chi`` with ``Tstar = 0`` and ``tau = 0``. Returns 0 for
    ``chi = 0``.
    """
    chi = check_field(chi, domain, "chi")
    norm = l2_norm(chi, domain)
    if norm == 0.0:
        return 0.0
    solver = solver or DiagnosticSolver(domain, params, settings)
    zero2 = domain.zeros2d()
    sol = solver.solve(chi, zero2, np.zeros((2,) + domain.shape2d))
    return h1_norm(sol.u, domain) / norm
