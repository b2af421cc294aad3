"""Homogenized coefficients: closed forms, gates, covariance, sampling."""

import numpy as np
import pytest

from kinhom.cell_solver import assemble, equilibrium_F, solve_chi_star
from kinhom.collision import make_kernel
from kinhom.effective import (
    EllipticityError,
    assemble_effective,
    check_vfc,
    diffusion_matrix,
    ellipticity_gate,
)
from kinhom.phase_space import CellGrid, two_velocity_1d, uniform_circle

VM = two_velocity_1d()
GRID = CellGrid((32,))
CONSTANT = make_kernel("constant", s0=1.0)
SINUSOIDAL = make_kernel("sinusoidal", base=1.0, alpha=0.5)


def test_constant_kernel_coefficients():
    # sigma = 1, weights (1, 1): D = 1/2, no drift, no equilibrium flux
    eff = assemble_effective(CONSTANT, VM, grid=GRID)
    assert eff.constant
    assert abs(eff.D[0, 0] - 0.5) < 1e-10
    assert abs(eff.U[0]) < 1e-12
    assert abs(eff.flux[0]) < 1e-12
    assert eff.residual < 1e-9
    D_pts, U_pts = eff.at_points(np.array([-1.0, 0.25, 3.0]))
    assert D_pts.shape == (3, 1, 1) and U_pts.shape == (3, 1)
    assert np.max(np.abs(D_pts - 0.5)) < 1e-10


def test_pairing_and_divergence_form_conventions():
    op = assemble(CONSTANT, 0.0, VM, GRID, scheme="upwind")
    _, F = equilibrium_F(op)
    chi, _ = solve_chi_star(op, F)
    raw = diffusion_matrix(op, chi, F, convention="pairing")
    eff = diffusion_matrix(op, chi, F, convention="effective")
    assert abs(raw[0, 0] + 0.5) < 1e-10
    assert np.max(np.abs(eff + raw)) < 1e-15
    with pytest.raises(ValueError):
        diffusion_matrix(op, chi, F, convention="symmetrized")


def test_ellipticity_gate():
    assert ellipticity_gate(np.array([[0.5]])) == pytest.approx(0.5)
    # the antisymmetric part never enters the verdict
    skew = np.array([[1.0, 0.4], [-0.4, 1.0]])
    assert ellipticity_gate(skew) == pytest.approx(1.0)
    # a tiny negative eigenvalue inside the tolerance is reported, not fatal
    assert ellipticity_gate(np.diag([1.0, -1e-12])) == pytest.approx(-1e-12)
    with pytest.raises(EllipticityError):
        ellipticity_gate(np.diag([1.0, -0.1]))


def test_diffusion_scales_inversely_with_kernel_strength():
    # Exact only for cell-constant rates: the corrector is then flat and the
    # transport term inert, so D(c sigma) = D(sigma) / c.  (An oscillating
    # kernel rebalances transport against collisions and breaks this.)
    c = 3.7
    base = assemble_effective(CONSTANT, VM, grid=GRID)
    scaled = assemble_effective(make_kernel("constant", s0=c), VM, grid=GRID)
    assert abs(scaled.D[0, 0] - base.D[0, 0] / c) < 1e-10
    assert abs(scaled.flux[0]) < 1e-12


def test_diffusion_is_gauge_invariant_when_flux_vanishes():
    op = assemble(SINUSOIDAL, 0.0, VM, GRID, scheme="upwind")
    _, F = equilibrium_F(op)
    chi, b = solve_chi_star(op, F)
    assert abs(b[0]) < 1e-12
    D = diffusion_matrix(op, chi, F)
    shifted = [op.wrap(op.unwrap(chi[0]) + 0.3 * op.const)]
    D_shift = diffusion_matrix(op, shifted, F)
    assert np.max(np.abs(D_shift - D)) < 1e-12


def test_asymmetric_weights_closed_forms():
    # weights (1, 2) on nodes (-1, +1), sigma = 1: mu(V) = 3, F = 1/3,
    # flux b = 1/3, and D = -(1/3) sum w a (-(a - b)/3) = 8/27.
    vm = two_velocity_1d(weights=(1.0, 2.0))
    eff = assemble_effective(CONSTANT, vm, grid=GRID)
    assert abs(eff.flux[0] - 1.0 / 3.0) < 1e-10
    assert abs(eff.D[0, 0] - 8.0 / 27.0) < 1e-10
    assert abs(eff.U[0]) < 1e-12
    # nonzero equilibrium flux shows up in the vanishing-flux report
    op = assemble(CONSTANT, 0.0, vm, GRID, scheme="upwind")
    _, F = equilibrium_F(op)
    report = check_vfc(op, F)
    assert not report.passed
    assert abs(report.flux[0] - 1.0 / 3.0) < 1e-10


def test_circle_velocity_set_gives_isotropic_tensor():
    vm = uniform_circle(8, speed=1.3)
    kernel = make_kernel("constant", s0=1.0, dim=2)
    eff = assemble_effective(kernel, vm, grid=CellGrid((8, 8)))
    expected = 1.3**2 / (4.0 * np.pi)
    assert np.max(np.abs(eff.D - expected * np.eye(2))) < 1e-10
    assert np.max(np.abs(eff.U)) < 1e-12
    assert ellipticity_gate(eff.D) > 0.0


def test_slow_modulation_sampled_coefficients():
    # sigma(x, y) = (1 + 0.4 tanh x): D(x) = 1 / (2 (1 + 0.4 tanh x)), U = 0
    kernel = make_kernel("constant", s0=1.0, x_dependence="tanh", x_amplitude=0.4)
    x = np.linspace(-2.0, 2.0, 21)
    eff = assemble_effective(kernel, VM, x=x, grid=CellGrid((16,)))
    assert not eff.constant
    expected = 1.0 / (2.0 * (1.0 + 0.4 * np.tanh(x)))
    assert np.max(np.abs(eff.D[:, 0, 0] - expected)) < 1e-8
    # the equilibrium never depends on x, so the sampled drift is exactly zero
    assert np.max(np.abs(eff.U)) < 1e-12
    assert np.max(np.abs(eff.flux)) < 1e-12
    # interpolation matches the piecewise-linear oracle off the sample points
    query = np.array([-1.37, 0.0, 0.61])
    D_pts, U_pts = eff.at_points(query)
    oracle = np.interp(query, x, eff.D[:, 0, 0])
    assert np.max(np.abs(D_pts[:, 0, 0] - oracle)) < 1e-14
    assert np.max(np.abs(U_pts)) < 1e-12


def test_grid_backend_requires_a_grid():
    with pytest.raises(ValueError):
        assemble_effective(CONSTANT, VM)
