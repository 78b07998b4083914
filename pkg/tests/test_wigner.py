import math

import numpy as np
import pytest

from mesoreduce.algebra import LiouvillianSpec
from mesoreduce.classical import PhaseSpaceField, build_classical, gaussian_field, stable_dt, step_classical
from mesoreduce.errors import NumericalInstability
from mesoreduce.polynomial import parse_polynomial as P
from mesoreduce.quantum import DensityMatrix, GridBasis, cat_state, dephasing_closed_form, gaussian_state, state_from_wavefunction
from mesoreduce.wigner import (
    EXACT,
    boundary_decay_check,
    evolve_wigner,
    field_integral,
    position_marginal,
    semiclassical_ratios,
    wigner_forward,
    wigner_grid,
    wigner_inverse,
    wigner_operator,
    wigner_stable_dt,
)

# continuous-maximum quadrature oracle, V = x^4, sigma_x = sigma_p = 0.5, hbar = 0.1
RATIO34_X4 = 0.875089306501
RATIO35_X4 = 3.065662009762


def run_wigner(w, V, mu, hbar, gamma, t):
    n = math.ceil(t / wigner_stable_dt(wigner_operator(w, V, mu, hbar, gamma)))
    return evolve_wigner(w, V, mu, hbar, gamma, t / n, n)[-1][1]


def gaussian_w(x, p, x0=0.0, sx=0.5, sp=0.5):
    data = np.exp(-(x[:, None] - x0) ** 2 / (2 * sx**2) - p[None, :] ** 2 / (2 * sp**2)) / (2 * math.pi * sx * sp)
    return PhaseSpaceField((x, p), data)


def test_ground_state_closed_form():
    b = GridBasis(64, -8, 8)
    w = wigner_forward(gaussian_state(b, sigma_x=math.sqrt(0.5)), 1.0)
    x, p = w.axes
    exact = np.exp(-x[:, None] ** 2 - p[None, :] ** 2) / math.pi
    assert np.max(np.abs(w.data - exact)) < 1e-6
    assert field_integral(w) == pytest.approx(1.0, abs=1e-8)


def test_inverse_of_analytic_gaussian_is_ground_state():
    b = GridBasis(64, -8, 8)
    x, p = wigner_grid(b, 1.0)
    analytic = PhaseSpaceField((x, p), np.exp(-x[:, None] ** 2 - p[None, :] ** 2) / math.pi)
    rho = wigner_inverse(analytic, 1.0)
    ground = gaussian_state(b, sigma_x=math.sqrt(0.5))
    assert np.max(np.abs(rho.data - ground.data)) < 1e-6


def test_round_trip_random_hermitian():
    b = GridBasis(40, -3, 3)
    rng = np.random.default_rng(3)
    a = rng.normal(size=(40, 40)) + 1j * rng.normal(size=(40, 40))
    h = a @ a.conj().T
    rho = DensityMatrix(b, h / (np.trace(h).real * b.dx))
    back = wigner_inverse(wigner_forward(rho, 0.3), 0.3)
    assert np.linalg.norm(back.data - rho.data) / np.linalg.norm(rho.data) < 1e-12
    assert back.trace() == pytest.approx(1.0, abs=1e-12)


def test_cat_state_fringes_are_negative_with_expected_wavevector():
    hbar, a = 1.0, 2.0
    b = GridBasis(96, -8, 8)
    w = wigner_forward(cat_state(b, a, math.sqrt(0.5), hbar), hbar)
    x, p = w.axes
    assert w.data.min() < -0.1
    row = w.data[np.argmin(np.abs(x))]
    core = np.abs(p) < 2.5
    signs = np.sign(row[core])
    crossings = p[core][1:][np.diff(signs) != 0]
    spacing = np.mean(np.diff(crossings))
    # cos(2 a p / hbar) has zeros every pi hbar / (2 a)
    assert spacing == pytest.approx(math.pi * hbar / (2 * a), rel=0.05)


def test_maximally_mixed_state():
    b = GridBasis(32, -2, 2)
    rho = DensityMatrix(b, np.eye(32) / (32 * b.dx))
    w = wigner_forward(rho, 1.0)
    assert field_integral(w) == pytest.approx(1.0, abs=1e-8)
    marg = position_marginal(w)[::2]
    np.testing.assert_allclose(marg, 1 / (32 * b.dx), atol=1e-8)
    # odd lags come from interpolated half-points, so the p profile is not flat,
    # but it stays even in p and peaks at p = 0
    rows = w.data[::2]
    np.testing.assert_allclose(rows, rows[:, ::-1], atol=1e-12)
    assert w.axes[1][np.argmax(rows.sum(axis=0))] == 0.0


def test_marginals_of_localized_state():
    hbar = 0.7
    b = GridBasis(64, -6, 6)
    psi = np.exp(-(b.x - 0.4) ** 2 / 0.8 + 1j * 0.9 * b.x / hbar)
    rho = state_from_wavefunction(b, psi)
    w = wigner_forward(rho, hbar)
    np.testing.assert_allclose(position_marginal(w)[::2], np.real(np.diag(rho.data)), atol=1e-8)
    x, p = w.axes
    psi_n = psi / math.sqrt(np.sum(np.abs(psi) ** 2) * b.dx)
    phi = np.exp(-1j * np.outer(p, b.x) / hbar) @ psi_n * b.dx / math.sqrt(2 * math.pi * hbar)
    mom = w.data.sum(axis=0) * w.spacings[0]
    np.testing.assert_allclose(mom, np.abs(phi) ** 2, atol=1e-8)


def test_non_hermitian_and_grid_mismatch_errors():
    b = GridBasis(8, -1, 1)
    bad = np.eye(8, dtype=complex)
    bad[0, 1] = 1j
    with pytest.raises(ValueError, match="Hermitian"):
        wigner_forward(DensityMatrix(b, bad), 1.0)
    w = wigner_forward(gaussian_state(b, sigma_x=0.5, hbar=0.5), 0.5)
    with pytest.raises(ValueError, match="conjugate"):
        wigner_inverse(w, 1.0)


def test_negativity_survives_evolution():
    b = GridBasis(48, -6, 6)
    w = wigner_forward(cat_state(b, 2.0, 0.7), 1.0)
    out = run_wigner(w, P("x^2/2"), 1.0, 1.0, 0.0, 0.2)
    assert out.data.min() < -0.05


def test_unstable_step_is_refused():
    b = GridBasis(32, -4, 4)
    w = wigner_forward(gaussian_state(b, sigma_x=0.7), 1.0)
    with pytest.raises(NumericalInstability) as info:
        evolve_wigner(w, P("x^4"), 1.0, 1.0, 0.1, 1.0, 3)
    assert info.value.suggested_dt < 1.0


def test_cubic_deviation_from_classical_scales_as_hbar_squared():
    x = np.linspace(-4, 4, 129)
    p = np.linspace(-5, 5, 161)
    w0 = gaussian_w(x, p, x0=0.3)
    V = P("x^2/2 + x^3/10")
    classical = run_wigner(w0, V, 1.0, 0.0, 0.0, 0.5)
    dev = [np.abs(run_wigner(w0, V, 1.0, h, 0.0, 0.5).data - classical.data).max() for h in (0.4, 0.2)]
    assert 3 <= dev[0] / dev[1] <= 5


def test_hbar_zero_reduces_to_classical_engine():
    V = P("x^2/2 + x^3/10")
    spec = LiouvillianSpec(("x",), (1,), [(1, V)])
    T = 0.5

    def classical(m):
        ops = build_classical(spec, [(-4, 4, m)], [(-4, 4, m)])
        f = gaussian_field(ops, 0.5, 0, 0.5, 0.5)
        n = math.ceil(T / (0.9 * stable_dt(ops)))
        for _ in range(n):
            f = step_classical(ops, f, T / n)
        return ops, f

    ops, c64 = classical(64)
    _, c128 = classical(128)
    own_error = np.abs(c64.data - c128.data.reshape(64, 2, 64, 2).mean(axis=(1, 3))).max()
    w = run_wigner(gaussian_field(ops, 0.5, 0, 0.5, 0.5), V, 1.0, 0.0, 0.0, T)
    assert np.abs(w.data - c64.data).max() <= 2 * own_error


def test_gamma_hbar_term_vanishes_for_cubic():
    x = np.linspace(-3, 3, 61)
    p = np.linspace(-3, 3, 61)
    w = gaussian_w(x, p)
    op = wigner_operator(w, P("x^3"), 1.0, 0.5, 0.3)
    assert not np.any(op.v2 * op.v4)


def test_semiclassical_ratios():
    x = np.linspace(-4, 4, 401)
    p = np.linspace(-4, 4, 401)
    w = gaussian_w(x, p)
    harm = semiclassical_ratios(w, P("x^2"), 0.1)
    assert harm == {"ratio34": EXACT, "ratio35": EXACT}
    cubic = semiclassical_ratios(w, P("x^3"), 0.1)
    assert cubic["ratio35"] == EXACT and math.isfinite(cubic["ratio34"])
    quart = semiclassical_ratios(w, P("x^4"), 0.1)
    assert quart["ratio34"] == pytest.approx(RATIO34_X4, rel=1e-3)
    assert quart["ratio35"] == pytest.approx(RATIO35_X4, rel=1e-3)


def test_boundary_decay_examples():
    b = GridBasis(64, -5, 5)
    assert boundary_decay_check(gaussian_state(b, sigma_x=0.5))["passed"]
    sin_state = state_from_wavefunction(b, np.sin(1.3 * b.x))
    assert not boundary_decay_check(sin_state)["passed"]
    spec = LiouvillianSpec(("x",), (1,), (), [(1.0, P("x"))], kinetic=False)
    later = dephasing_closed_form(spec, sin_state, b, 1.0, 0.2)
    assert boundary_decay_check(later)["passed"]
