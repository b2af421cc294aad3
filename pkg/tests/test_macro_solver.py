"""Macro drift-diffusion integrator: exact solutions, conservation, orders."""

import numpy as np
import pytest

from kinhom.macro_solver import DriftDiffusionSolver, initial_density
from kinhom.phase_space import MacroGrid, two_velocity_1d, uniform_circle


def _gaussian(x, width):
    return np.exp(-(x**2) / (2.0 * width**2))


def _periodized_heat_solution(x, t, width, D, L):
    """Free-space Gaussian evolution summed over periodic images."""
    var = width**2 + 2.0 * D * t
    out = np.zeros_like(x)
    for k in range(-3, 4):
        out += width / np.sqrt(var) * np.exp(-((x + k * L) ** 2) / (2.0 * var))
    return out


def test_heat_kernel_accuracy():
    mg = MacroGrid(half_width=4.0, shape=(512,), bc="periodic")
    x = mg.axes()[0]
    rho0 = _gaussian(x, 0.1)
    solver = DriftDiffusionSolver(mg, D=np.array([[0.5]]))
    T = 0.5
    field = solver.run(rho0, T, dt=T / 1024.0)
    exact = _periodized_heat_solution(x, T, 0.1, 0.5, 8.0)
    rel = np.linalg.norm(field.values[-1] - exact) / np.linalg.norm(exact)
    assert rel <= 1e-3
    mass = field.mass()
    assert abs(mass[-1] - mass[0]) <= 1e-12 * mass[0]


def test_mass_conserved_over_many_steps_periodic():
    mg = MacroGrid(half_width=2.0, shape=(64,), bc="periodic")
    x = mg.axes()[0]
    # per-cell positive diffusion and a nonuniform drift
    D = (0.3 + 0.1 * np.sin(np.pi * x / 2.0)).reshape(-1, 1, 1)
    U = (0.2 * np.cos(np.pi * x / 2.0)).reshape(-1, 1)
    solver = DriftDiffusionSolver(mg, D=D, U=U)
    rho = _gaussian(x, 0.4) + 0.05
    m0 = rho.sum() * mg.cell_volume
    for _ in range(1000):
        rho = solver.step(rho, 1e-3)
    m1 = rho.sum() * mg.cell_volume
    assert abs(m1 - m0) <= 1e-12 * m0


def test_mass_conserved_no_flux_walls():
    # drift pushes mass against the wall; the closed ends must not leak
    mg = MacroGrid(half_width=1.0, shape=(48,), bc="no-flux")
    x = mg.axes()[0]
    solver = DriftDiffusionSolver(mg, D=np.array([[0.05]]), U=np.array([0.8]))
    rho = _gaussian(x, 0.2)
    field = solver.run(rho, 1.0, dt=1e-3)
    mass = field.mass()
    assert abs(mass[-1] - mass[0]) <= 1e-12 * mass[0]


def test_time_stepping_self_convergence_is_second_order():
    mg = MacroGrid(half_width=4.0, shape=(128,), bc="periodic")
    x = mg.axes()[0]
    rho0 = _gaussian(x, 0.3)
    solver = DriftDiffusionSolver(mg, D=np.array([[0.3]]), U=np.array([0.4]))
    T = 0.25
    ref = solver.run(rho0, T, dt=T / 512.0).values[-1]
    errs = [
        np.linalg.norm(solver.run(rho0, T, dt=T / n).values[-1] - ref)
        for n in (16, 32, 64)
    ]
    assert errs[0] / errs[1] >= 3.0
    assert errs[1] / errs[2] >= 3.0


def test_pure_drift_translates_the_profile():
    mg = MacroGrid(half_width=4.0, shape=(256,), bc="periodic")
    x = mg.axes()[0]
    u0 = 0.7
    solver = DriftDiffusionSolver(mg, D=np.array([[0.0]]), U=np.array([u0]))
    rho0 = _gaussian(x, 0.3)
    T = 0.5
    field = solver.run(rho0, T, dt=T / 512.0)
    rho_T = field.values[-1]
    mass = field.mass()
    assert abs(mass[-1] - mass[0]) <= 1e-12 * mass[0]
    # d rho / dt = d(u rho)/dx moves the profile to the left by u0 T
    com0 = np.sum(x * rho0) / np.sum(rho0)
    comT = np.sum(x * rho_T) / np.sum(rho_T)
    assert abs(comT - (com0 - u0 * T)) < 1e-3


def test_upwind_drift_keeps_sharp_fronts_nonnegative():
    mg = MacroGrid(half_width=2.0, shape=(128,), bc="periodic")
    x = mg.axes()[0]
    rho0 = np.where(np.abs(x) < 0.5, 1.0, 0.0)
    up = DriftDiffusionSolver(mg, D=np.array([[0.0]]), U=np.array([1.0]),
                              theta=1.0, drift_mode="upwind")
    field = up.run(rho0, 0.5, dt=1e-2)
    assert field.values[-1].min() >= -1e-13
    mass = field.mass()
    assert abs(mass[-1] - mass[0]) <= 1e-12 * mass[0]


def test_explicit_step_is_stability_checked():
    mg = MacroGrid(half_width=4.0, shape=(64,), bc="periodic")
    x = mg.axes()[0]
    solver = DriftDiffusionSolver(mg, D=np.array([[0.5]]), theta=0.0)
    limit = mg.spacing[0] ** 2 / (2.0 * 0.5)  # h^2 / (2 d max|D|)
    rho = _gaussian(x, 0.5)
    with pytest.raises(ValueError):
        solver.step(rho, 1.25 * limit)
    out = solver.step(rho, 0.8 * limit)
    assert out.shape == rho.shape


def test_two_dim_anisotropic_variance_growth():
    # second moments of div(D grad rho) grow linearly: Cov(T) - Cov(0) = 2 D T
    mg = MacroGrid(half_width=4.0, shape=(48, 48), bc="periodic")
    ax, ay = mg.axes()
    X, Y = np.meshgrid(ax, ay, indexing="ij")
    D = np.array([[0.5, 0.15], [0.15, 0.3]])
    solver = DriftDiffusionSolver(mg, D=D)
    rho0 = np.exp(-(X**2 + Y**2) / (2.0 * 0.5**2))
    T = 0.5
    field = solver.run(rho0, T, dt=T / 128.0)

    def cov(r):
        m = r.sum()
        mx = (X * r).sum() / m
        my = (Y * r).sum() / m
        return np.array([
            [((X - mx) ** 2 * r).sum() / m, ((X - mx) * (Y - my) * r).sum() / m],
            [((X - mx) * (Y - my) * r).sum() / m, ((Y - my) ** 2 * r).sum() / m],
        ])

    growth = cov(field.values[-1]) - cov(field.values[0])
    assert np.max(np.abs(growth - 2.0 * D * T)) < 0.01 * np.max(2.0 * D * T)
    mass = field.mass()
    assert abs(mass[-1] - mass[0]) <= 1e-12 * mass[0]


def test_no_flux_refuses_mixed_tensor():
    mg = MacroGrid(half_width=2.0, shape=(16, 16), bc="no-flux")
    D = np.array([[0.5, 0.1], [0.1, 0.5]])
    with pytest.raises(NotImplementedError):
        DriftDiffusionSolver(mg, D=D)


def test_checkpoint_lookup_and_validation():
    mg = MacroGrid(half_width=2.0, shape=(32,), bc="periodic")
    x = mg.axes()[0]
    solver = DriftDiffusionSolver(mg, D=np.array([[0.2]]))
    rho0 = _gaussian(x, 0.5)
    field = solver.run(rho0, 0.3, dt=0.1, checkpoints=np.array([0.0, 0.25, 0.3]))
    assert np.allclose(field.times, [0.0, 0.25, 0.3])
    assert field.dt == pytest.approx(0.05)  # shrunk to land on the checkpoint
    assert field.at_time(0.25).shape == mg.shape
    with pytest.raises(KeyError):
        field.at_time(0.17)
    with pytest.raises(ValueError):
        solver.run(rho0, 0.3, checkpoints=np.array([0.1, 0.3]))
    with pytest.raises(ValueError):
        solver.run(rho0, 0.3, checkpoints=np.array([0.0, 0.2]))


def test_initial_density_integrates_velocity_nodes():
    vm = two_velocity_1d(weights=(1.0, 2.0))
    mg = MacroGrid(half_width=1.0, shape=(16,), bc="periodic")
    x = mg.axes()[0]

    def f0(pts, v):
        return np.exp(-(pts**2)) * (2.0 if v[0] > 0 else 1.0)

    rho = initial_density(f0, vm, mg)
    # weights (1, 2) on nodes (-1, +1): rho = (1*1 + 2*2) exp(-x^2)
    assert np.max(np.abs(rho - 5.0 * np.exp(-(x**2)))) < 1e-14

    vm2 = uniform_circle(4)
    mg2 = MacroGrid(half_width=1.0, shape=(8, 8), bc="periodic")

    def g0(pts, v):
        return np.exp(-np.sum(pts**2, axis=-1))

    rho2 = initial_density(g0, vm2, mg2)
    ax, ay = mg2.axes()
    X, Y = np.meshgrid(ax, ay, indexing="ij")
    assert rho2.shape == (8, 8)
    assert np.max(np.abs(rho2 - 2.0 * np.pi * np.exp(-(X**2) - Y**2))) < 1e-12
