import numpy as np
import pytest
import scipy.linalg

from kinhom.cell_solver import (
    CompatibilityError,
    assemble,
    assemble_spectral_ap,
    equilibrium_F,
    solve_adjoint_corrector,
    solve_chi_star,
    solve_corrector,
    verify_variational,
)
from kinhom.collision import BalanceError, make_kernel
from kinhom.phase_space import CellGrid, two_velocity_1d, velocity_from_tables

VM = two_velocity_1d()
GRID32 = CellGrid((32,))
SINUSOIDAL = make_kernel("sinusoidal", base=1.0, alpha=0.5)
CONSTANT = make_kernel("constant", s0=1.0)


# ---------------------------------------------------------------------------
# closed forms: constant kernel, symmetric two-velocity set
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("scheme", ["upwind", "spectral"])
def test_constant_kernel_closed_forms(scheme):
    # F = 1/mu(V) = 1/2 and chi(v) = -v / (sigma0 mu(V)) = -v/2, b = 0
    op = assemble(CONSTANT, 0.0, VM, GRID32, scheme=scheme)
    lam, F = equilibrium_F(op)
    assert abs(lam - 1.0) < 1e-12
    assert np.max(np.abs(F.values - 0.5)) < 1e-10
    chi, b = solve_chi_star(op, F)
    assert abs(b[0]) < 1e-12
    expect = -VM.field[:, 0] / 2.0
    assert np.max(np.abs(chi[0].values - expect[None, :])) < 1e-10


def test_constant_kernel_closed_forms_spectral_ap():
    op = assemble_spectral_ap(CONSTANT, 0.0, VM)
    lam, F = equilibrium_F(op)
    assert abs(lam - 1.0) < 1e-12
    y = np.linspace(0.0, 3.0, 7)
    assert np.max(np.abs(F.sample(y) - 0.5)) < 1e-10
    chi, b = solve_chi_star(op, F)
    assert abs(b[0]) < 1e-12
    assert np.max(np.abs(chi[0].sample(y) - (-VM.field[:, 0] / 2.0)[None, :])) < 1e-10


# ---------------------------------------------------------------------------
# dense oracles on the 32 x 2 discretization
# ---------------------------------------------------------------------------

def test_null_space_dimension_and_equilibrium_direction():
    op = assemble(SINUSOIDAL, 0.0, VM, GRID32, scheme="upwind")
    P = op.dense_P()
    s = scipy.linalg.svdvals(P)
    assert np.sum(s < 1e-10 * s[0]) == 1
    # the kernel direction from the dense SVD matches equilibrium_F
    _, _, Vh = scipy.linalg.svd(P)
    null = Vh[-1]
    null = null / np.sum(op.weights * null)  # normalize mean_v to 1
    _, F = equilibrium_F(op)
    assert np.max(np.abs(op.unwrap(F) - null)) < 1e-8


def test_spectral_scheme_even_grid_carries_alternating_mode():
    # The spectral derivative on an even grid zeroes the unpaired top
    # frequency, so the alternating sample pattern (velocity-independent)
    # is transport-invisible and collision-invisible: one extra, physically
    # inert null direction.  An odd grid has none.
    op = assemble(SINUSOIDAL, 0.0, VM, GRID32, scheme="spectral")
    s = scipy.linalg.svdvals(op.dense_P())
    assert np.sum(s < 1e-10 * s[0]) == 2
    alt = np.repeat(np.cos(np.pi * np.arange(32)), VM.n_nodes)
    assert np.max(np.abs(op.apply_P(alt))) < 1e-10
    # equilibrium is untouched by the artifact: it still solves exactly
    lam, F = equilibrium_F(op)
    assert abs(lam - 1.0) < 1e-12
    assert np.min(op.unwrap(F).real) > 0.0

    odd = assemble(SINUSOIDAL, 0.0, VM, CellGrid((33,)), scheme="spectral")
    s_odd = scipy.linalg.svdvals(odd.dense_P())
    assert np.sum(s_odd < 1e-10 * s_odd[0]) == 1


def test_corrector_matches_dense_least_squares():
    op = assemble(SINUSOIDAL, 0.0, VM, GRID32, scheme="spectral")
    P = op.dense_P()
    g = op.velocity_profile(0)  # mean_v(a) = 0: compatible forward datum
    # gauge-constrained dense solve: stack the weighted-mean row
    aug = np.vstack([P, op.weights[None, :]])
    rhs = np.concatenate([g, [0.0]])
    dense, *_ = np.linalg.lstsq(aug, rhs, rcond=None)
    sol = solve_corrector(op, g)
    assert np.max(np.abs(op.unwrap(sol.field) - dense)) < 1e-8
    assert sol.residual < 1e-9


def test_adjoint_corrector_matches_dense_least_squares():
    op = assemble(SINUSOIDAL, 0.0, VM, GRID32, scheme="spectral")
    _, F = equilibrium_F(op)
    P = op.dense_P()
    W = np.diag(op.weights)
    P_star = np.linalg.solve(W, P.T @ W)
    rhs = -op.velocity_profile(0)  # b = 0 here, so no shift needed
    aug = np.vstack([P_star, op.weights[None, :]])
    dense, *_ = np.linalg.lstsq(aug, np.concatenate([rhs, [0.0]]), rcond=None)
    sol = solve_adjoint_corrector(op, rhs, F)
    assert np.max(np.abs(op.unwrap(sol.field) - dense)) < 1e-8


def test_incompatible_data_is_refused():
    op = assemble(CONSTANT, 0.0, VM, GRID32, scheme="upwind")
    _, F = equilibrium_F(op)
    with pytest.raises(CompatibilityError):
        solve_corrector(op, op.const)  # mean_v(1) = mu(V) != 0
    with pytest.raises(CompatibilityError):
        solve_adjoint_corrector(op, op.const, F)


def test_unbalanced_kernel_is_refused():
    kernel = make_kernel("table", table=np.array([[1.0, 2.0], [3.0, 4.0]]))
    with pytest.raises(BalanceError):
        assemble(kernel, 0.0, VM, GRID32)
    with pytest.raises(BalanceError):
        assemble_spectral_ap(kernel, 0.0, VM)


# ---------------------------------------------------------------------------
# structure invariants
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("scheme", ["upwind", "spectral"])
def test_discrete_duality(scheme):
    rng = np.random.default_rng(1)
    op = assemble(SINUSOIDAL, 0.0, VM, GRID32, scheme=scheme)
    for _ in range(25):
        f = rng.standard_normal(op.size)
        g = rng.standard_normal(op.size)
        lhs = op.inner(op.apply_P(f), g)
        rhs = op.inner(f, op.apply_P_adjoint(g))
        assert abs(lhs - rhs) < 1e-12 * max(abs(lhs), 1.0)


def test_absorption_inverse_bound_and_positivity():
    # <Af, f> >= sigma_min ||f||^2 for both schemes, so ||A^-1|| <= 1/sigma_min;
    # upwind A is an M-matrix, so A^-1 preserves positivity
    rng = np.random.default_rng(2)
    for scheme in ("upwind", "spectral"):
        op = assemble(SINUSOIDAL, 0.0, VM, GRID32, scheme=scheme)
        for _ in range(25):
            h = rng.standard_normal(op.size)
            f = op.apply_A_inverse(h)
            assert op.norm(f) <= op.norm(h) / op.sigma_min * (1 + 1e-12)
    op = assemble(SINUSOIDAL, 0.0, VM, GRID32, scheme="upwind")
    for _ in range(25):
        h = rng.uniform(0.1, 1.0, op.size)
        assert np.all(op.apply_A_inverse(h) > 0)


def test_transport_has_zero_cell_mean():
    # M(a . grad_y u) = 0: the transport part of A has vanishing grid average
    rng = np.random.default_rng(3)
    for scheme in ("upwind", "spectral"):
        op = assemble(SINUSOIDAL, 0.0, VM, GRID32, scheme=scheme)
        for _ in range(25):
            u = rng.standard_normal(op.size)
            Au = op.apply_P(u) + op.apply_K(u)
            transport = Au - op.sigma_flat * u
            means = transport.reshape(op.n_points, VM.n_nodes).mean(axis=0)
            assert np.max(np.abs(means)) < 1e-12 * max(np.abs(u).max(), 1.0)


def test_variational_residual_is_roundoff():
    for build in (
        lambda: assemble(SINUSOIDAL, 0.0, VM, GRID32, scheme="spectral"),
        lambda: assemble_spectral_ap(
            make_kernel("quasi_periodic", base=1.0, alpha1=0.2, alpha2=0.2), 0.0, VM
        ),
    ):
        op = build()
        _, F = equilibrium_F(op)
        assert verify_variational(op, F) < 1e-12


# ---------------------------------------------------------------------------
# scheme agreement and convergence
# ---------------------------------------------------------------------------

def test_upwind_converges_to_spectral_corrector():
    # v-independent sinusoidal rate: the spectral solve is exact below
    # Nyquist, upwind carries an O(h) bias that must shrink ~ first order
    ref_op = assemble(SINUSOIDAL, 0.0, VM, CellGrid((256,)), scheme="spectral")
    _, F_ref = equilibrium_F(ref_op)
    chi_ref, _ = solve_chi_star(ref_op, F_ref)
    y = ref_op.grid.axes()[0]

    errs = []
    for n in (32, 64, 128):
        op = assemble(SINUSOIDAL, 0.0, VM, CellGrid((n,)), scheme="upwind")
        _, F = equilibrium_F(op)
        chi, _ = solve_chi_star(op, F)
        stride = 256 // n
        errs.append(np.max(np.abs(chi[0].values - chi_ref[0].values[::stride])))
    assert errs[0] > errs[1] > errs[2]
    assert errs[0] / errs[1] > 1.7 and errs[1] / errs[2] > 1.7


def test_lattice_backend_matches_grid_backend():
    op_g = assemble(SINUSOIDAL, 0.0, VM, CellGrid((64,)), scheme="spectral")
    op_s = assemble_spectral_ap(SINUSOIDAL, 0.0, VM, n_modes=24)
    _, F_g = equilibrium_F(op_g)
    _, F_s = equilibrium_F(op_s)
    y = op_g.grid.axes()[0]
    assert np.max(np.abs(F_s.sample(y) - F_g.values)) < 1e-10
    chi_g, b_g = solve_chi_star(op_g, F_g)
    chi_s, b_s = solve_chi_star(op_s, F_s)
    assert np.max(np.abs(b_g - b_s)) < 1e-10
    assert np.max(np.abs(chi_s[0].sample(y) - chi_g[0].values)) < 1e-8


def test_equilibrium_positive_for_asymmetric_weights():
    vm = velocity_from_tables(nodes=[[-1.0], [1.0]], weights=[1.0, 2.0])
    op = assemble(CONSTANT, 0.0, vm, GRID32, scheme="upwind")
    lam, F = equilibrium_F(op)
    assert abs(lam - 1.0) < 1e-12
    # F = 1/mu(V) = 1/3 for every admissible kernel
    assert np.max(np.abs(F.values - 1.0 / 3.0)) < 1e-10
    assert F.values.min() > 0


def test_spectral_field_sampling_consistency():
    op = assemble_spectral_ap(SINUSOIDAL, 0.0, VM, n_modes=8)
    _, F = equilibrium_F(op)
    # mean over the fast variable equals the zero-frequency coefficient
    zero = np.flatnonzero(np.abs(F.freqs) < 1e-12)[0]
    dense_mean = F.sample(np.linspace(0, 1, 2048, endpoint=False)).mean(axis=0)
    assert np.max(np.abs(dense_mean - F.coeffs[zero].real)) < 1e-12
    assert np.max(np.abs(np.asarray(F.mean_y()) - F.coeffs[zero].real)) < 1e-14
