"""Discrete domain, node-based fields, finite-difference operators and norms.

Fields live on the collocated nodes of a uniform grid over the box
``(0, lx) x (0, ly) x (-H, 0)``. Scalar fields are plain ``ndarray`` objects of
shape ``(nx+1, ny+1, nz+1)`` stored in C order, so the vertical index runs
fastest. Horizontal vector fields are stacked as ``(2, nx+1, ny+1, nz+1)``.

All quadratures use trapezoidal weights. First derivatives use the
second-order summation-by-parts (SBP) operator: centered differences inside,
one-sided differences on the end nodes. Second-derivative operators are the
ghost-point eliminated three-point stencils, written in the weighted form
``W^{-1} G^T G / d`` so that they are self-adjoint in the trapezoidal inner
product and pair exactly with the edge-based energy norms below.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields as dc_fields
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.integrate import cumulative_trapezoid

__all__ = [
    "InvalidFieldError",
    "DomainSpec",
    "PhysParams",
    "check_field",
    "l2_norm",
    "l2_norm_2d",
    "energy_norm",
    "h1_norm",
    "h1_norm_scalar",
    "h1_norm_2d",
    "h2_norm_2d",
    "poincare_constant",
    "ddx",
    "ddy",
    "ddz",
    "divergence",
    "cumulative_z",
    "vertical_integral",
    "vertical_cumulative_divergence",
    "laplacian_2d",
    "write_snapshot",
    "read_snapshot",
]


class InvalidFieldError(ValueError):
    """A field contains non-finite values or does not match its domain."""


# ---------------------------------------------------------------------------
# 1D building blocks
# ---------------------------------------------------------------------------

def trapezoid_weights(n, d):
    """Trapezoid weights for ``n + 1`` nodes with spacing ``d``."""
    w = np.full(n + 1, d)
    w[0] = w[-1] = 0.5 * d
    return w


def sbp_d1(n, d):
    """SBP first-derivative matrix on ``n + 1`` nodes."""
    main = np.zeros(n + 1)
    upper = np.full(n, 0.5 / d)
    lower = np.full(n, -0.5 / d)
    main[0], upper[0] = -1.0 / d, 1.0 / d
    main[-1], lower[-1] = 1.0 / d, -1.0 / d
    return sp.diags([lower, main, upper], [-1, 0, 1], format="csr")


def neumann_stiffness(n, d):
    """``-d^2/dx^2`` with homogeneous Neumann ends (ghost-point elimination).

    Interior rows are ``(-f[i-1] + 2 f[i] - f[i+1]) / d^2``; the end rows read
    ``2 (f[0] - f[1]) / d^2``.
    """
    main = np.full(n + 1, 2.0 / d**2)
    off = np.full(n, -1.0 / d**2)
    upper = off.copy()
    lower = off.copy()
    upper[0] = -2.0 / d**2
    lower[-1] = -2.0 / d**2
    return sp.diags([lower, main, upper], [-1, 0, 1], format="csr")


def dirichlet_stiffness(n, d):
    """``-d^2/dx^2`` on interior nodes; end rows are left as identity rows."""
    main = np.full(n + 1, 2.0 / d**2)
    upper = np.full(n, -1.0 / d**2)
    lower = np.full(n, -1.0 / d**2)
    main[0] = main[-1] = 1.0
    upper[0] = 0.0
    lower[-1] = 0.0
    return sp.diags([lower, main, upper], [-1, 0, 1], format="csr")


def robin_stiffness(n, d, kappa):
    """Neumann stiffness plus the top Robin row ``f' + kappa f = 0`` at node n.

    Ghost elimination at the top adds ``2 kappa / d`` to the last diagonal
    entry. The bottom (node 0) keeps the homogeneous Neumann closure.
    """
    k = neumann_stiffness(n, d).tolil()
    k[n, n] += 2.0 * kappa / d
    return k.tocsr()


def _apply_d1(f, axis, d):
    out = np.empty_like(f, dtype=float)
    f = np.moveaxis(f, axis, 0)
    o = np.moveaxis(out, axis, 0)
    o[1:-1] = (f[2:] - f[:-2]) / (2.0 * d)
    o[0] = (f[1] - f[0]) / d
    o[-1] = (f[-1] - f[-2]) / d
    return out


# ---------------------------------------------------------------------------
# Domain and parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DomainSpec:
    """Uniform box ``(0, lx) x (0, ly) x (-H, 0)`` with ``nx x ny x nz`` cells."""

    nx: int
    ny: int
    nz: int
    lx: float = 1.0
    ly: float = 1.0
    H: float = 1.0

    def __post_init__(self):
        for name in ("nx", "ny", "nz"):
            v = getattr(self, name)
            if int(v) != v or v < 4:
                raise ValueError(f"{name} must be an integer >= 4, got {v!r}")
        for name in ("lx", "ly", "H"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"{name} must be positive, got {v!r}")

    @property
    def shape(self):
        return (self.nx + 1, self.ny + 1, self.nz + 1)

    @property
    def shape2d(self):
        return (self.nx + 1, self.ny + 1)

    @property
    def dx(self):
        return self.lx / self.nx

    @property
    def dy(self):
        return self.ly / self.ny

    @property
    def dz(self):
        return self.H / self.nz

    @cached_property
    def x(self):
        return np.linspace(0.0, self.lx, self.nx + 1)

    @cached_property
    def y(self):
        return np.linspace(0.0, self.ly, self.ny + 1)

    @cached_property
    def z(self):
        return np.linspace(-self.H, 0.0, self.nz + 1)

    @cached_property
    def mesh(self):
        """Broadcastable node coordinates ``(X, Y, Z)``."""
        return np.meshgrid(self.x, self.y, self.z, indexing="ij")

    @cached_property
    def wx(self):
        return trapezoid_weights(self.nx, self.dx)

    @cached_property
    def wy(self):
        return trapezoid_weights(self.ny, self.dy)

    @cached_property
    def wz(self):
        return trapezoid_weights(self.nz, self.dz)

    @cached_property
    def weights2d(self):
        return np.multiply.outer(self.wx, self.wy)

    @cached_property
    def weights(self):
        return np.multiply.outer(self.weights2d, self.wz)

    @property
    def area(self):
        return self.lx * self.ly

    @property
    def volume(self):
        return self.lx * self.ly * self.H

    def zeros(self):
        return np.zeros(self.shape)

    def zeros2d(self):
        return np.zeros(self.shape2d)

    def extend(self, f2d):
        """Replicate a surface field uniformly in z."""
        return np.repeat(np.asarray(f2d, dtype=float)[:, :, None], self.nz + 1, axis=2)

    def refine(self, factor=2):
        return DomainSpec(self.nx * factor, self.ny * factor, self.nz * factor,
                          self.lx, self.ly, self.H)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in dc_fields(self)}


@dataclass(frozen=True)
class PhysParams:
    """Physical constants of the model and the nudging strength ``mu``.

    ``f = f0 * (beta + y)`` is the Coriolis parameter; ``alpha`` is the heat
    exchange coefficient of the top Robin condition.
    """

    A_h: float = 1.0
    A_v: float = 1.0
    K_h: float = 0.2
    K_v: float = 0.2
    alpha: float = 0.1
    f0: float = 1.0
    beta: float = 1.0
    mu: float = 0.0

    def __post_init__(self):
        for name in ("A_h", "A_v", "K_h", "K_v", "alpha"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"{name} must be positive, got {v!r}")
        if not np.isfinite(self.mu) or self.mu < 0:
            raise ValueError(f"mu must be >= 0, got {self.mu!r}")
        for name in ("f0", "beta"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    def coriolis(self, y):
        return self.f0 * (self.beta + np.asarray(y))

    def with_mu(self, mu):
        return PhysParams(**{**self.to_dict(), "mu": float(mu)})

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in dc_fields(self)}


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def check_field(f, domain, name="field"):
    f = np.asarray(f, dtype=float)
    if f.shape != domain.shape:
        raise InvalidFieldError(f"{name} has shape {f.shape}, expected {domain.shape}")
    if not np.all(np.isfinite(f)):
        raise InvalidFieldError(f"{name} contains non-finite values")
    return f


def _check_vector(u, domain, name="vector field"):
    u = np.asarray(u, dtype=float)
    if u.shape != (2,) + domain.shape:
        raise InvalidFieldError(f"{name} has shape {u.shape}, expected {(2,) + domain.shape}")
    if not np.all(np.isfinite(u)):
        raise InvalidFieldError(f"{name} contains non-finite values")
    return u


def _check_2d(f, domain, name="surface field"):
    f = np.asarray(f, dtype=float)
    if f.shape != domain.shape2d:
        raise InvalidFieldError(f"{name} has shape {f.shape}, expected {domain.shape2d}")
    if not np.all(np.isfinite(f)):
        raise InvalidFieldError(f"{name} contains non-finite values")
    return f


# ---------------------------------------------------------------------------
# Derivatives and vertical integrals
# ---------------------------------------------------------------------------

def ddx(f, domain):
    return _apply_d1(f, 0, domain.dx)


def ddy(f, domain):
    return _apply_d1(f, 1, domain.dy)


def ddz(f, domain):
    return _apply_d1(f, 2, domain.dz)


def divergence(u, domain):
    """Horizontal divergence ``d(u1)/dx + d(u2)/dy`` on every level (SBP)."""
    return ddx(u[0], domain) + ddy(u[1], domain)


def cumulative_z(f, domain):
    """``int_{-H}^z f`` by cumulative trapezoid; zero on the bottom level."""
    return cumulative_trapezoid(f, dx=domain.dz, axis=-1, initial=0.0)


def vertical_integral(f, domain):
    """``int_{-H}^0 f dz`` (trapezoid), a surface field."""
    return np.tensordot(f, domain.wz, axes=([-1], [0]))


def vertical_cumulative_divergence(u, domain):
    """Vertical velocity ``w = -int_{-H}^z div(u)``.

    ``w`` vanishes identically on the bottom level; on the top level it equals
    minus the divergence of the depth-integrated flow.
    """
    u = _check_vector(u, domain, "u")
    return -cumulative_z(divergence(u, domain), domain)


def laplacian_2d(f2d, domain):
    """Horizontal Laplacian of a surface field with homogeneous Neumann walls."""
    kx = neumann_stiffness(domain.nx, domain.dx)
    ky = neumann_stiffness(domain.ny, domain.dy)
    return -(kx @ f2d + (ky @ f2d.T).T)


# ---------------------------------------------------------------------------
# Norms
# ---------------------------------------------------------------------------

def _edge_sq(f, axis, d, w_other):
    g = np.diff(f, axis=axis) / d
    return d * np.sum(w_other * g * g)


def _grad_sq(f, domain):
    """Edge-based ``int |grad f|^2`` split into (x, y, z) parts."""
    wyz = np.multiply.outer(domain.wy, domain.wz)[None, :, :]
    wxz = np.multiply.outer(domain.wx, domain.wz)[:, None, :]
    wxy = domain.weights2d[:, :, None]
    return (_edge_sq(f, 0, domain.dx, wyz),
            _edge_sq(f, 1, domain.dy, wxz),
            _edge_sq(f, 2, domain.dz, wxy))


def l2_norm(f, domain):
    """Trapezoidal ``(int_Omega f^2)^{1/2}``."""
    f = check_field(f, domain)
    return float(np.sqrt(np.sum(domain.weights * f * f)))


def l2_norm_2d(f2d, domain):
    f2d = _check_2d(f2d, domain)
    return float(np.sqrt(np.sum(domain.weights2d * f2d * f2d)))


def energy_norm(f, domain, params):
    """Weighted norm ``(alpha int_top f^2 + int K_h|grad f|^2 + K_v|f_z|^2)^{1/2}``.

    Gradients are taken on grid edges, which makes the square of this norm
    equal to ``<L2 f, f>`` for the discrete diffusion operator.
    """
    f = check_field(f, domain)
    gx, gy, gz = _grad_sq(f, domain)
    top = np.sum(domain.weights2d * f[:, :, -1] ** 2)
    return float(np.sqrt(params.alpha * top + params.K_h * (gx + gy) + params.K_v * gz))


def h1_norm_scalar(f, domain):
    f = check_field(f, domain)
    return float(np.sqrt(np.sum(domain.weights * f * f) + sum(_grad_sq(f, domain))))


def h1_norm(u, domain):
    """Discrete H^1 norm of a horizontal vector field ``(u1, u2)``."""
    u = _check_vector(u, domain, "U")
    total = 0.0
    for c in u:
        total += np.sum(domain.weights * c * c) + sum(_grad_sq(c, domain))
    return float(np.sqrt(total))


def h1_norm_2d(f2d, domain):
    f2d = _check_2d(f2d, domain)
    gx = np.diff(f2d, axis=0) / domain.dx
    gy = np.diff(f2d, axis=1) / domain.dy
    s = (np.sum(domain.weights2d * f2d**2)
         + domain.dx * np.sum(domain.wy[None, :] * gx**2)
         + domain.dy * np.sum(domain.wx[:, None] * gy**2))
    return float(np.sqrt(s))


def h2_norm_2d(f2d, domain):
    """H^2 norm of a surface field (second derivatives by ``np.gradient``)."""
    f2d = _check_2d(f2d, domain)
    fx, fy = np.gradient(f2d, domain.dx, domain.dy, edge_order=2)
    fxx, fxy = np.gradient(fx, domain.dx, domain.dy, edge_order=2)
    _, fyy = np.gradient(fy, domain.dx, domain.dy, edge_order=2)
    second = np.sum(domain.weights2d * (fxx**2 + 2 * fxy**2 + fyy**2))
    return float(np.sqrt(h1_norm_2d(f2d, domain) ** 2 + second))


def poincare_constant(params, H):
    """``max(2H/alpha, 2H^2/K_v)``: bounds ``|T|^2`` by the weighted norm squared."""
    return max(2.0 * H / params.alpha, 2.0 * H**2 / params.K_v)


# ---------------------------------------------------------------------------
# Snapshot I/O
# ---------------------------------------------------------------------------

def write_snapshot(path, f, domain, name, time):
    """Raw little-endian float64 (z fastest) plus a ``.json`` sidecar header."""
    path = Path(path)
    f = check_field(f, domain, name)
    np.ascontiguousarray(f, dtype="<f8").tofile(path)
    header = {"nx": domain.nx, "ny": domain.ny, "nz": domain.nz,
              "lx": domain.lx, "ly": domain.ly, "h": domain.H,
              "name": name, "time": float(time)}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(header, indent=2) + "\n")
    return path


def read_snapshot(path):
    path = Path(path)
    header = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    domain = DomainSpec(header["nx"], header["ny"], header["nz"],
                        header["lx"], header["ly"], header["h"])
    values = np.fromfile(path, dtype="<f8").reshape(domain.shape)
    return values, domain, header
