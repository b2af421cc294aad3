import numpy as np
import pytest

from kinhom.collision import (
    BalanceError,
    PhaseField,
    RepresentationError,
    absorption_rate,
    apply_K,
    apply_Q,
    apply_Q_star,
    check_sdb,
    make_kernel,
)
from kinhom.phase_space import CellGrid, two_velocity_1d, velocity_from_tables


def _random_sdb_kernel(rng, K):
    """Symmetric node table: semi-detailed balance for any weights."""
    g = rng.uniform(0.2, 2.0, (K, K))
    return make_kernel("table", table=(g + g.T) / 2)


def test_absorption_columns_of_weighted_table():
    # frozen hand evaluation: Sigma[l] = sum_k mu_k g[k, l]
    vm = two_velocity_1d()
    grid = CellGrid((4,))
    kernel = make_kernel("table", table=np.array([[1.0, 2.0], [3.0, 4.0]]))
    sigma = absorption_rate(kernel, 0.0, grid, vm)
    assert np.allclose(sigma, [[4.0, 6.0]] * 4)


def test_sdb_detection_negative_control():
    vm = two_velocity_1d()
    grid = CellGrid((4,))
    kernel = make_kernel("table", table=np.array([[1.0, 2.0], [3.0, 4.0]]))
    report = check_sdb(kernel, 0.0, grid, vm)
    # outgoing row sums (3, 7) vs incoming column sums (4, 6): gap 1
    assert not report.passed
    assert abs(report.max_abs_gap - 1.0) < 1e-15


def test_sdb_detection_positive_control():
    rng = np.random.default_rng(11)
    vm = velocity_from_tables(nodes=[[-1.0], [0.5], [2.0]], weights=[1.0, 0.7, 2.0])
    grid = CellGrid((4,))
    for _ in range(20):
        report = check_sdb(_random_sdb_kernel(rng, 3), 0.0, grid, vm)
        assert report.passed


def test_conservation_and_duality_randomized():
    # 100 trials: int Qf dmu = 0 and <Qf, g> = <f, Q*g> to 1e-12 relative
    rng = np.random.default_rng(0)
    grid = CellGrid((8,))
    for _ in range(100):
        K = int(rng.integers(2, 5))
        weights = rng.uniform(0.3, 2.0, K)
        nodes = np.sort(rng.uniform(-2, 2, K))
        vm = velocity_from_tables(nodes=nodes[:, None], weights=weights)
        kernel = _random_sdb_kernel(rng, K)
        f = PhaseField(rng.standard_normal((8, K)), grid, vm)
        g = PhaseField(rng.standard_normal((8, K)), grid, vm)
        Qf = apply_Q(kernel, 0.0, f)
        scale = np.abs(Qf.values).max()
        assert np.max(np.abs(Qf.velocity_integral())) < 1e-12 * max(scale, 1.0)
        lhs = float(np.sum(Qf.values * g.values * vm.weights))
        rhs = float(np.sum(f.values * apply_Q_star(kernel, 0.0, g).values * vm.weights))
        assert abs(lhs - rhs) < 1e-12 * max(abs(lhs), 1.0)


def test_gain_bounded_by_kernel_sup():
    # |Kf| <= sup(sigma) * mu(V)^(1/2) * ||f||_mu pointwise (Cauchy-Schwarz)
    rng = np.random.default_rng(5)
    vm = two_velocity_1d(weights=(1.0, 2.0))
    grid = CellGrid((8,))
    kernel = make_kernel("sinusoidal", base=1.0, alpha=0.5)
    for _ in range(50):
        f = PhaseField(rng.standard_normal((8, 2)), grid, vm)
        Kf = apply_K(kernel, 0.0, f)
        norm_f = np.sqrt(np.sum(f.values**2 * vm.weights, axis=1))
        bound = kernel.sup_bound() * np.sqrt(vm.total_mass) * norm_f
        assert np.all(np.abs(Kf.values) <= bound[:, None] + 1e-12)


def test_sinusoidal_profile_and_frequencies():
    kernel = make_kernel("sinusoidal", base=1.0, alpha=0.5)
    y = np.linspace(0, 1, 33)
    assert np.allclose(kernel.profile_values(y), 1.0 + 0.5 * np.sin(2 * np.pi * y))
    freqs, coeffs = kernel.profile_frequencies()
    # reconstruct the profile from its frequency content
    recon = np.real(np.exp(1j * np.outer(y, freqs)) @ coeffs)
    assert np.allclose(recon, kernel.profile_values(y), atol=1e-14)
    assert kernel.natural_period == 1.0


def test_quasi_periodic_has_no_period_and_refuses_cell_sampling():
    kernel = make_kernel("quasi_periodic", base=1.0, alpha1=0.2, alpha2=0.2)
    assert kernel.natural_period is None
    vm = two_velocity_1d()
    with pytest.raises(RepresentationError):
        kernel.sample_cell(0.0, CellGrid((16,)), vm)


def test_cell_sampling_refuses_dimension_mismatch():
    kernel = make_kernel("constant", s0=1.0)  # oscillates in one dimension
    with pytest.raises(RepresentationError):
        kernel.sample_cell(0.0, CellGrid((8, 8)), two_velocity_1d())


def test_quasi_approx_period_is_denominator():
    kernel = make_kernel("quasi_approx", base=1.0, alpha1=0.2, alpha2=0.2, p=239, q=169)
    assert kernel.natural_period == 169.0
    y = np.linspace(0, 169, 257)
    expect = 1.0 + 0.2 * np.cos(2 * np.pi * y) + 0.2 * np.cos(2 * np.pi * (239 / 169) * y)
    assert np.allclose(kernel.profile_values(y), expect, atol=1e-12)


def test_positivity_guard():
    with pytest.raises(ValueError):
        make_kernel("sinusoidal", base=1.0, alpha=1.5)  # profile dips negative
    with pytest.raises(ValueError):
        make_kernel("table", table=np.array([[1.0, -0.1], [0.5, 1.0]]))


def test_tanh_macro_modulation():
    kernel = make_kernel("constant", s0=2.0, x_dependence="tanh", x_amplitude=0.3)
    vm = two_velocity_1d()
    vals_left = kernel.evaluate(-50.0, np.zeros(1), vm)
    vals_right = kernel.evaluate(+50.0, np.zeros(1), vm)
    assert np.allclose(vals_left, 2.0 * 0.7, atol=1e-10)
    assert np.allclose(vals_right, 2.0 * 1.3, atol=1e-10)
    with pytest.raises(ValueError):
        make_kernel("constant", s0=1.0, x_dependence="tanh", x_amplitude=1.2)


def test_phase_field_reductions():
    vm = two_velocity_1d(weights=(1.0, 2.0))
    grid = CellGrid((4,))
    f = PhaseField(np.arange(8.0).reshape(4, 2), grid, vm)
    # velocity integral: f[:,0]*1 + f[:,1]*2
    assert np.allclose(f.velocity_integral(), [2, 8, 14, 20])
    assert np.allclose(f.mean_y(), [3.0, 4.0])
    assert abs(f.mean_v_total() - 11.0) < 1e-14


def test_defect_kernel_profile():
    kernel = make_kernel(
        "sinusoidal_defect", base=1.0, alpha=0.25,
        defect_amplitude=0.5, defect_width=0.25,
    )
    # near the origin the bump is present, far away only the periodic part
    near = kernel.profile_values(np.array([0.0]))[0]
    far = kernel.profile_values(np.array([500.0]))[0]
    assert abs(near - (1.0 + 0.5)) < 1e-12
    assert abs(far - (1.0 + 0.25 * np.sin(2 * np.pi * 500.0))) < 1e-9
