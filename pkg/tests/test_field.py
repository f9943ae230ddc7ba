import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from pgnudge.field import (DomainSpec, InvalidFieldError, PhysParams, cumulative_z, ddx, ddz,
                           divergence, energy_norm, h1_norm_2d, h1_norm_scalar, l2_norm,
                           laplacian_2d, poincare_constant, read_snapshot, sbp_d1,
                           trapezoid_weights, vertical_cumulative_divergence,
                           vertical_integral, write_snapshot)
from pgnudge.stepper import DiffusionOperator

D = DomainSpec(8, 6, 5, lx=2.0, ly=1.5, H=0.8)
P = PhysParams()
finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
fields = arrays(float, D.shape, elements=finite)


@pytest.mark.parametrize("kw", [{"nx": 3, "ny": 8, "nz": 8}, {"nx": 8, "ny": 8, "nz": 8, "H": -1.0},
                                {"nx": 8, "ny": 8, "nz": 8, "lx": np.inf}])
def test_domain_rejects_bad_input(kw):
    with pytest.raises(ValueError):
        DomainSpec(**kw)


def test_params_reject_nonpositive_coefficients():
    with pytest.raises(ValueError, match="K_v"):
        PhysParams(K_v=0.0)
    with pytest.raises(ValueError, match="mu"):
        PhysParams(mu=-1.0)


def test_invalid_fields_raise():
    with pytest.raises(InvalidFieldError):
        l2_norm(np.zeros((3, 3, 3)), D)
    bad = D.zeros()
    bad[1, 1, 1] = np.nan
    with pytest.raises(InvalidFieldError):
        l2_norm(bad, D)


def test_trapezoid_integrates_linear_exactly():
    X, Y, Z = D.mesh
    assert np.isclose(np.sum(D.weights * (1 + X + 2 * Y - Z)),
                      D.volume * (1 + 1.0 + 1.5 + 0.4))
    assert np.isclose(trapezoid_weights(4, 0.25).sum(), 1.0)


def test_sbp_property():
    n, d = 7, 0.3
    Q = np.diag(trapezoid_weights(n, d)) @ sbp_d1(n, d).toarray()
    B = np.zeros((n + 1, n + 1))
    B[0, 0], B[-1, -1] = -1.0, 1.0
    np.testing.assert_allclose(Q + Q.T, B, atol=1e-14)


def test_derivatives_exact_on_linear_fields():
    X, Y, Z = D.mesh
    f = 3 * X - 2 * Z
    np.testing.assert_allclose(ddx(f, D), 3.0, atol=1e-12)
    np.testing.assert_allclose(ddz(f, D), -2.0, atol=1e-12)
    u = np.stack([X * 0 + 2 * X, -Y])
    np.testing.assert_allclose(divergence(u, D), 1.0, atol=1e-12)


def test_vertical_integrals():
    _, _, Z = D.mesh
    c = np.full(D.shape, 2.0)
    np.testing.assert_allclose(cumulative_z(c, D), 2.0 * (Z + D.H), atol=1e-14)
    np.testing.assert_allclose(vertical_integral(Z, D), -D.H ** 2 / 2, atol=1e-14)


def test_vertical_velocity_top_is_minus_integrated_divergence():
    rng = np.random.default_rng(0)
    u = rng.standard_normal((2,) + D.shape)
    w = vertical_cumulative_divergence(u, D)
    np.testing.assert_array_equal(w[:, :, 0], 0.0)
    np.testing.assert_allclose(w[:, :, -1], -vertical_integral(divergence(u, D), D), atol=1e-12)


def _lap_error(n):
    d = DomainSpec(n, n, 4)
    X, Y = np.meshgrid(d.x, d.y, indexing="ij")
    f = np.cos(np.pi * X) * np.cos(np.pi * Y)
    return np.max(np.abs(laplacian_2d(f, d) + 2 * np.pi ** 2 * f))


def test_laplacian_second_order():
    ratio = _lap_error(16) / _lap_error(32)
    assert 3.6 < ratio < 4.4


def test_h1_norm_2d_converges_to_exact_value():
    # |f|^2 = 1/4 and |grad f|^2 = pi^2/2 for cos(pi x) cos(pi y) on the unit square
    exact = np.sqrt(0.25 + np.pi ** 2 / 2)
    errs = []
    for n in (16, 32):
        d = DomainSpec(n, n, 4)
        X, Y = np.meshgrid(d.x, d.y, indexing="ij")
        errs.append(abs(h1_norm_2d(np.cos(np.pi * X) * np.cos(np.pi * Y), d) - exact))
    assert errs[1] < 1e-2 and 3.5 < errs[0] / errs[1] < 4.5


@settings(max_examples=40, deadline=None)
@given(fields)
def test_energy_norm_matches_diffusion_operator(f):
    op = DiffusionOperator(D, P)
    lhs = energy_norm(f, D, P) ** 2
    rhs = np.sum(D.weights * op.apply(f) * f)
    assert np.isclose(lhs, rhs, rtol=1e-10, atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(fields)
def test_poincare_inequality(f):
    assert l2_norm(f, D) ** 2 <= poincare_constant(P, D.H) * energy_norm(f, D, P) ** 2 * (1 + 1e-12) + 1e-12


@settings(max_examples=30, deadline=None)
@given(fields, fields, finite)
def test_norm_axioms(f, g, a):
    assert l2_norm(f + g, D) <= l2_norm(f, D) + l2_norm(g, D) + 1e-9
    assert np.isclose(h1_norm_scalar(a * f, D), abs(a) * h1_norm_scalar(f, D), rtol=1e-12, atol=1e-9)


def test_snapshot_round_trip(tmp_path):
    f = np.random.default_rng(3).standard_normal(D.shape)
    path = write_snapshot(tmp_path / "T", f, D, "T", 1.25)
    g, dom, header = read_snapshot(path)
    np.testing.assert_array_equal(f, g)
    assert dom == D and header["name"] == "T" and header["time"] == 1.25
    assert path.stat().st_size == 8 * f.size
