import numpy as np
import pytest

from pgnudge.gronwall import gronwall_check, window_integrals

T = np.linspace(0.0, 12.0, 1201)


def test_window_integrals_of_simple_functions():
    np.testing.assert_allclose(window_integrals(T, np.full_like(T, 3.0), 2.0), 6.0)
    I = window_integrals(T, T, 1.0)
    np.testing.assert_allclose(I, T[:-100] + 0.5, atol=1e-12)


@pytest.mark.parametrize("bad", [np.array([0.0, 1.0, 3.0]), np.array([0.0]), np.array([1.0, 0.5, 0.0])])
def test_grid_must_be_uniform(bad):
    with pytest.raises(ValueError):
        window_integrals(bad, np.ones_like(bad), 1.0)


def test_window_length_checks():
    with pytest.raises(ValueError, match="multiple"):
        window_integrals(T, T, 0.015)
    with pytest.raises(ValueError, match="longer"):
        window_integrals(T, T, 20.0)


def test_exponential_decay_passes():
    r = gronwall_check(T, np.exp(-2 * T), 2.0, 0.0, tau=1.0, gamma=1.0)
    assert r.passed and all(r.hypotheses.values())
    assert abs(r.tail_rate - 2.0) < 1e-10 and r.inequality_excess < 2e-2


def test_negative_alpha_fails():
    r = gronwall_check(T, np.exp(T), -1.0, 0.0, tau=1.0, gamma=1.0)
    assert not r.passed
    assert not r.hypotheses["alpha_lower"] and not r.hypotheses["Y_decays"]


def test_oscillating_alpha_with_positive_mean():
    alpha = 1.0 + 3.0 * np.sin(2 * np.pi * T)
    Y = np.exp(-T + 3.0 / (2 * np.pi) * (np.cos(2 * np.pi * T) - 1))
    r = gronwall_check(T, Y, alpha, 0.0, tau=1.0, gamma=0.99)
    assert r.passed and r.details["max_alpha_minus_integral"] > 0
    assert not gronwall_check(T, Y, alpha, 0.0, tau=1.0, gamma=1.5).passed


def test_persistent_source_fails():
    r = gronwall_check(T, 0.5 + np.exp(-T), 1.0, 0.5, tau=1.0, gamma=0.5)
    assert not r.hypotheses["beta_vanishes"] and not r.passed


def test_input_validation():
    with pytest.raises(ValueError):
        gronwall_check(T, -np.ones_like(T), 1.0, 0.0, tau=1.0, gamma=0.5)
    with pytest.raises(ValueError):
        gronwall_check(T, np.ones_like(T), 1.0, 0.0, tau=1.0, gamma=0.5, tail_fraction=0.0)
