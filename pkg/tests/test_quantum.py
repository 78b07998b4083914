import math

import numpy as np
import pytest

from mesoreduce.algebra import LiouvillianSpec
from mesoreduce.errors import NumericalInstability
from mesoreduce.polynomial import parse_polynomial as P
from mesoreduce.quantum import (
    DensityMatrix,
    GridBasis,
    apply_liouvillian,
    build_operators,
    cat_state,
    coherence_metrics,
    dephasing_closed_form,
    evolve_density,
    gaussian_state,
    observables,
    unravel_stochastic,
)


def op(ham=(), dec=(), kinetic=True, mass=1):
    return LiouvillianSpec(("x",), (mass,), [(c, P(t)) for c, t in ham], [(g, P(t)) for g, t in dec], kinetic=kinetic)


def test_generator_preserves_trace_and_hermiticity():
    b = GridBasis(24, -4, 4)
    ops = build_operators(op([(0.5, "x^2")], [(0.3, "x")]), b, 1.0)
    rho = cat_state(b, 1.0, 0.5)
    rate = apply_liouvillian(ops, rho)
    assert abs(np.trace(rate)) * b.dx < 1e-12
    assert np.max(np.abs(rate - rate.conj().T)) < 1e-12


def test_dimension_mismatch():
    ops = build_operators(op([(1, "x^2")]), GridBasis(10, -1, 1), 1.0)
    with pytest.raises(ValueError, match="dimension mismatch"):
        apply_liouvillian(ops, np.eye(8))


def test_multi_coordinate_operator_rejected():
    spec = LiouvillianSpec(("a", "b"), (1, 1), [(1, P("a*b"))])
    with pytest.raises(ValueError, match="one mesoparticle"):
        build_operators(spec, GridBasis(8, -1, 1), 1.0)


def test_kinetic_free_matches_closed_form_with_potential():
    b = GridBasis(40, -3, 3)
    spec = op([(1, "x^3")], [(0.2, "x^2")], kinetic=False)
    rho0 = cat_state(b, 1.0, 0.5)
    traj = evolve_density(build_operators(spec, b, 0.7), rho0, 1e-3, 400)
    exact = dephasing_closed_form(spec, rho0, b, 0.7, 0.4)
    err = np.linalg.norm(traj.final().data - exact.data) / np.linalg.norm(exact.data)
    assert err < 1e-8


def test_cptp_health_harmonic_with_two_channels():
    b = GridBasis(32, -5, 5)
    ops = build_operators(op([(0.5, "x^2")], [(0.1, "x"), (0.02, "x^2")]), b, 1.0)
    traj = evolve_density(ops, cat_state(b, 1.5, 0.6), 0.005, 400, save_every=40, check_eigenvalues=True)
    assert max(traj.trace_drift) <= 1e-9
    assert traj.max_asymmetry <= 1e-12
    assert traj.min_eigenvalue >= -1e-8


def test_offdiagonal_norm_monotone_without_hamiltonian():
    b = GridBasis(32, -4, 4)
    ops = build_operators(op([], [(0.4, "x")], kinetic=False), b, 1.0)
    traj = evolve_density(ops, cat_state(b, 1.5, 0.5), 0.01, 100, save_every=5)
    l1 = [coherence_metrics(s)["offdiag_l1"] for s in traj.states]
    assert all(b_ <= a + 1e-14 for a, b_ in zip(l1, l1[1:]))
    assert l1[-1] < 0.5 * l1[0]


def test_ehrenfest_harmonic_oscillator():
    # <x>(t) = x0 cos t for a unit oscillator; gamma only heats <p^2>
    b = GridBasis(128, -6, 6)
    ops = build_operators(op([(0.5, "x^2")], [(0.05, "x")]), b, 1.0, stencil_order=4)
    rho0 = gaussian_state(b, 1.0, 0.0, math.sqrt(0.5))
    t = 1.0
    traj = evolve_density(ops, rho0, 0.005, 200)
    mean_x = observables(traj.final(), 1.0)["mean_x"]
    assert abs(mean_x - math.cos(t)) < 1e-4


def test_instability_is_detected():
    b = GridBasis(64, -1, 1)
    ops = build_operators(op([(1, "x^2")]), b, 1.0)
    with pytest.raises(NumericalInstability) as info:
        evolve_density(ops, cat_state(b, 0.3, 0.1), 0.5, 50)
    assert info.value.suggested_dt is not None


def test_unraveling_is_seeded_and_chunk_independent():
    b = GridBasis(16, -4, 4)
    ops = build_operators(op([(0.5, "x^2")], [(0.1, "x")]), b, 1.0)
    rho0 = cat_state(b, 1.0, 0.6)
    a = unravel_stochastic(ops, rho0, 0.01, 20, 30, seed=5, chunk=7).final().data
    c = unravel_stochastic(ops, rho0, 0.01, 20, 30, seed=5, chunk=30).final().data
    d = unravel_stochastic(ops, rho0, 0.01, 20, 30, seed=6).final().data
    np.testing.assert_allclose(a, c, rtol=0, atol=1e-14)
    assert np.max(np.abs(a - d)) > 0


def test_unraveling_average_tracks_master_equation():
    b = GridBasis(24, -5, 5)
    ops = build_operators(op([(0.5, "x^2")], [(0.1, "x")]), b, 1.0)
    rho0 = cat_state(b, 1.5, 0.6)
    master = evolve_density(ops, rho0, 0.005, 100).final()
    avg = unravel_stochastic(ops, rho0, 0.005, 100, 1500, seed=11).final()
    diff = avg.operator() - master.operator()
    off = np.abs(diff - np.diag(np.diag(diff))).sum()
    assert off / coherence_metrics(master)["offdiag_l1"] < 3 / math.sqrt(1500)
    assert abs(np.trace(avg.data).real * b.dx - 1) < 1e-9


def test_gaussian_state_validation():
    with pytest.raises(ValueError):
        gaussian_state(GridBasis(8, -1, 1), sigma_x=0.1, sigma_p=0.1)


def test_density_matrix_shape_check():
    with pytest.raises(ValueError):
        DensityMatrix(GridBasis(4, 0, 1), np.eye(3))
