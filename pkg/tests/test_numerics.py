"""Quadrature panels and the batched Runge-Kutta integrator."""
import numpy as np
import pytest

from relscatter.integrator import IntegrationError, integrate_batch
from relscatter.quadrature import line_grid, panel_grid, power_tail


def test_panel_rule_integrates_polynomials_exactly():
    g = panel_grid([-1.0, 0.5, 2.0], order=8)
    for k in range(15):
        exact = (2.0 ** (k + 1) - (-1.0) ** (k + 1)) / (k + 1)
        assert g.integrate(g.nodes ** k) == pytest.approx(exact, rel=1e-13, abs=1e-13)


def test_cumulative_matches_antiderivative():
    g = panel_grid(np.linspace(-3, 3, 7), order=16)
    cum = g.cumulative(np.cos(g.nodes))
    assert np.max(np.abs(cum - (np.sin(g.nodes) - np.sin(-3.0)))) < 1e-13
    rev = g.cumulative_reverse(np.cos(g.nodes))
    assert np.max(np.abs(rev - (np.sin(3.0) - np.sin(g.nodes)))) < 1e-13


def test_cumulative_vectorises_over_trailing_axes():
    g = panel_grid([0.0, 1.0, 2.0], order=12)
    vals = np.stack([g.nodes, g.nodes ** 2], axis=1)
    cum = g.cumulative(vals)
    assert cum.shape == vals.shape
    assert np.allclose(cum[:, 1], g.nodes ** 3 / 3, atol=1e-14)


def test_line_grid_handles_algebraic_tails():
    # int (1 + t^2)^-2 dt over R = pi / 2
    g = line_grid(2.0, 4.0)
    assert g.integrate((1 + g.nodes ** 2) ** -2.0) == pytest.approx(np.pi / 2, rel=1e-13)
    half = line_grid(2.0, 4.0, lower=0.0)
    assert half.integrate((1 + half.nodes ** 2) ** -2.0) == pytest.approx(np.pi / 4, rel=1e-13)


def test_power_tail_closed_form():
    # int_5^inf 3 (1 + 2t)^-4 dt = 3 * 11^-3 / (2 * 3)
    assert power_tail(3.0, 1.0, 2.0, 5.0, 4.0) == pytest.approx(0.5 * 11.0 ** -3, rel=1e-15)
    assert power_tail(1.0, 1.0, 1.0, 0.0, 1.0) == np.inf


def test_batch_integrator_on_harmonic_oscillators():
    omega = np.array([1.0, 2.0, 3.0])

    def rhs(t, y):
        return np.stack([y[:, 1], -omega ** 2 * y[:, 0]], axis=1)

    y0 = np.stack([np.ones(3), np.zeros(3)], axis=1)
    ts = np.linspace(0.0, 10.0, 11)
    res = integrate_batch(rhs, 0.0, 10.0, y0, rtol=1e-12, atol=1e-14, t_eval=ts)
    assert np.array_equal(res.t, ts)
    exact = np.cos(np.outer(ts, omega))
    assert np.max(np.abs(res.y[:, :, 0] - exact)) < 1e-10


def test_batch_integrator_hits_eval_points_exactly_and_respects_cap():
    seen = []

    def rhs(t, y):
        seen.append(t)
        return -y

    res = integrate_batch(rhs, 0.0, 3.0, np.ones((1, 1)), rtol=1e-10, atol=1e-12,
                          t_eval=[0.5, 1.0, 3.0], step_cap=lambda t: 0.1)
    assert list(res.t) == [0.5, 1.0, 3.0]
    assert np.allclose(res.y[:, 0, 0], np.exp(-np.array([0.5, 1.0, 3.0])), rtol=1e-9)
    assert res.n_steps >= 30
    assert np.max(np.diff(sorted(set(seen)))) <= 0.1 + 1e-12


def test_batch_integrator_reports_blowup():
    with pytest.raises(IntegrationError):
        integrate_batch(lambda t, y: y * y, 0.0, 2.0, np.ones((1, 1)), rtol=1e-8, atol=1e-10)


def test_batch_integrator_rejects_backward_span():
    with pytest.raises(ValueError):
        integrate_batch(lambda t, y: y, 1.0, 0.0, np.ones((1, 1)), rtol=1e-8, atol=1e-8)
