"""Microstructure cell problems: equilibrium, correctors, adjoints.

The discrete cell operator is

    P = a(v) . grad_y + Sigma - K      (transport + absorption - gain)

acting on phase-space fields over (cell grid) x (velocity set).  Its
adjoint in the natural weighted inner product  <f, g> = int M(f g) dmu  is
assembled as the weighted transpose, so duality, conservation, and the
Fredholm alternative hold *exactly* in floating point, not just in the
continuum limit.

Two backends share one protocol:

* a grid backend (`assemble`) sampling the kernel on a periodic grid, with
  first-order upwind (sparse, positivity-preserving) or Fourier collocation
  (dense, spectrally accurate) transport;
* a frequency-lattice backend (`assemble_spectral_ap`) for quasi-periodic
  profiles, a Galerkin compression onto integer combinations of the
  profile's generator frequencies.

Solves handle the singular structure explicitly: the equilibrium comes from
power iteration on the gain-relaxation map  O = K A^{-1}  (principal
eigenvalue 1), and corrector equations are Krylov solves of the rewritten
fixed-point system with the one-dimensional kernel deflated out.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse.linalg import LinearOperator, gmres, splu

from kinhom.collision import PhaseField, ScatteringKernel, check_sdb, BalanceError
from kinhom.phase_space import CellGrid, VelocityMeasure

__all__ = [
    "CompatibilityError",
    "ConvergenceError",
    "CellOperator",
    "SpectralCellOperator",
    "SpectralField",
    "CorrectorSolution",
    "assemble",
    "assemble_spectral_ap",
    "apply_A_inverse",
    "equilibrium_F",
    "solve_corrector",
    "solve_adjoint_corrector",
    "solve_chi_star",
    "verify_variational",
]

log = logging.getLogger(__name__)


class CompatibilityError(ValueError):
    """Right-hand side violates the solvability (mean-compatibility) condition."""


class ConvergenceError(RuntimeError):
    """An iterative solve failed to reach its tolerance."""


# ---------------------------------------------------------------------------
# differentiation matrices
# ---------------------------------------------------------------------------


def _upwind_matrix(n: int, h: float, speed: float) -> sparse.csr_matrix:
    """First-order upwind discretization of ``speed * d/dy`` (periodic)."""
    if speed == 0.0:
        return sparse.csr_matrix((n, n))
    e = np.ones(n)
    if speed > 0:
        # backward difference: (f_j - f_{j-1}) / h
        mat = sparse.diags([e, -e], [0, -1], shape=(n, n), format="lil")
        mat[0, n - 1] = -1.0
    else:
        # forward difference: (f_{j+1} - f_j) / h
        mat = sparse.diags([-e, e], [0, 1], shape=(n, n), format="lil")
        mat[n - 1, 0] = 1.0
    return (speed / h) * mat.tocsr()


def _spectral_matrix(n: int, period: float) -> np.ndarray:
    """Dense Fourier-collocation differentiation matrix (periodic)."""
    k = 2.0 * np.pi * np.fft.fftfreq(n, d=period / n)
    if n % 2 == 0:
        k[n // 2] = 0.0
    col = np.fft.ifft(1j * k).real  # derivative of the discrete delta
    return scipy.linalg.circulant(col)


def _transport_matrix(grid: CellGrid, velocity: np.ndarray, scheme: str):
    """Discrete ``a . grad_y`` on the flattened grid for one velocity node."""
    if scheme not in ("upwind", "spectral"):
        raise ValueError(f"unknown transport scheme {scheme!r}")
    mats = []
    for axis in range(grid.dim):
        n = grid.shape[axis]
        h = grid.spacing[axis]
        a = float(velocity[axis])
        if scheme == "upwind":
            mats.append(_upwind_matrix(n, h, a))
        else:
            mats.append(a * _spectral_matrix(n, grid.period[axis]))
    if grid.dim == 1:
        return mats[0]
    if scheme == "upwind":
        eye0 = sparse.identity(grid.shape[0], format="csr")
        eye1 = sparse.identity(grid.shape[1], format="csr")
        return sparse.kron(mats[0], eye1, format="csr") + sparse.kron(eye0, mats[1], format="csr")
    return np.kron(mats[0], np.eye(grid.shape[1])) + np.kron(np.eye(grid.shape[0]), mats[1])


# ---------------------------------------------------------------------------
# factorization wrapper (sparse or dense, real or complex)
# ---------------------------------------------------------------------------


class _Factorized:
    def __init__(self, mat):
        self._sparse = sparse.issparse(mat)
        if self._sparse:
            self._lu = splu(mat.tocsc())
        else:
            self._lu = scipy.linalg.lu_factor(np.asarray(mat))
        self._complex = np.iscomplexobj(mat.data if self._sparse else mat)

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self._sparse:
            return self._lu.solve(b)
        return scipy.linalg.lu_solve(self._lu, b)

    def solve_adjoint(self, b: np.ndarray) -> np.ndarray:
        """Solve with the (conjugate) transpose of the factored matrix."""
        if self._sparse:
            return self._lu.solve(b, trans="H" if self._complex else "T")
        return scipy.linalg.lu_solve(self._lu, b, trans=2 if self._complex else 1)


# ---------------------------------------------------------------------------
# shared solver protocol
# ---------------------------------------------------------------------------


class _CellOperatorBase:
    """State shared by both backends.

    Subclasses populate: ``P`` (matrix), ``A_fact`` (factorized A),
    ``K_mat``, ``weights`` (flat inner-product weights), ``const`` (the
    constant function), ``sigma_min``, ``vm``, and conversion helpers.
    """

    P: np.ndarray
    K_mat: np.ndarray
    A_fact: _Factorized
    weights: np.ndarray
    const: np.ndarray
    sigma_min: float
    vm: VelocityMeasure
    dtype: type

    # -- inner-product geometry --------------------------------------------

    def inner(self, f: np.ndarray, g: np.ndarray):
        """Weighted pairing ``int M(conj(f) g) dmu`` on flat vectors."""
        return np.sum(self.weights * np.conj(f) * g)

    def norm(self, f: np.ndarray) -> float:
        return float(np.sqrt(np.real(np.sum(self.weights * np.abs(f) ** 2))))

    def project_out(self, f: np.ndarray, direction: np.ndarray) -> np.ndarray:
        coef = self.inner(direction, f) / self.inner(direction, direction)
        return f - coef * direction

    def mean_v(self, f: np.ndarray) -> float:
        """``int M(f) dmu`` of a flat field.

        Pairing against the constant field keeps this correct for both
        backends: on the grid it is the plain weighted sum, on the frequency
        lattice only the zero mode carries a nonzero cell mean.
        """
        return float(np.real(self.inner(self.const, f)))

    # -- operator actions ----------------------------------------------------

    def apply_P(self, f: np.ndarray) -> np.ndarray:
        return self.P @ f

    def apply_P_adjoint(self, f: np.ndarray) -> np.ndarray:
        return (self.P.conj().T @ (self.weights * f)) / self.weights

    def apply_K(self, f: np.ndarray) -> np.ndarray:
        return self.K_mat @ f

    def apply_K_adjoint(self, f: np.ndarray) -> np.ndarray:
        return (self.K_mat.conj().T @ (self.weights * f)) / self.weights

    def apply_A_inverse(self, f: np.ndarray) -> np.ndarray:
        return self.A_fact.solve(f)

    def apply_A_adjoint_inverse(self, f: np.ndarray) -> np.ndarray:
        return self.A_fact.solve_adjoint(self.weights * f) / self.weights

    def apply_O(self, f: np.ndarray) -> np.ndarray:
        """Gain-relaxation map ``K A^{-1}``."""
        return self.apply_K(self.apply_A_inverse(f))

    def apply_O_adjoint(self, f: np.ndarray) -> np.ndarray:
        return self.apply_K_adjoint(self.apply_A_adjoint_inverse(f))

    # -- diagnostics -----------------------------------------------------------

    def dense_P(self, max_size: int = 6000) -> np.ndarray:
        n = self.P.shape[0]
        if n > max_size:
            raise ValueError(f"dense dump limited to {max_size} rows, operator has {n}")
        return self.P.toarray() if sparse.issparse(self.P) else np.array(self.P)

    def dump_dense(self, path) -> None:
        """Coordinate-text dump ``i j value`` of the assembled operator."""
        mat = self.dense_P()
        with open(path, "w") as fh:
            fh.write(f"# {mat.shape[0]} {mat.shape[1]}\n")
            rows, cols = np.nonzero(np.abs(mat) > 0)
            for i, j in zip(rows, cols):
                v = mat[i, j]
                if np.iscomplexobj(mat):
                    fh.write(f"{i} {j} {v.real:.17g} {v.imag:.17g}\n")
                else:
                    fh.write(f"{i} {j} {v:.17g}\n")


# ---------------------------------------------------------------------------
# grid backend
# ---------------------------------------------------------------------------


class CellOperator(_CellOperatorBase):
    """Cell operator sampled on a periodic grid (see :func:`assemble`)."""

    def __init__(self, kernel, x, vm: VelocityMeasure, grid: CellGrid, scheme: str,
                 sdb_tol: float = 1e-12, require_balance: bool = True):
        if grid.dim != vm.dim:
            raise ValueError(f"cell grid dim {grid.dim} != velocity dim {vm.dim}")
        self.kernel = kernel
        self.x = x
        self.vm = vm
        self.grid = grid
        self.scheme = scheme
        self.dtype = float

        if require_balance:
            report = check_sdb(kernel, x, grid, vm, tol=sdb_tol)
            if not report.passed:
                raise BalanceError(
                    f"kernel violates semi-detailed balance "
                    f"(relative gap {report.max_rel_gap:.3e} > {sdb_tol:.1e})"
                )

        K = vm.n_nodes
        n = grid.n_points
        self.n_points = n
        self.size = n * K
        self.field_shape = (*grid.shape, K)

        if isinstance(kernel, ScatteringKernel):
            samp = kernel.sample_cell(x, grid, vm)
        else:
            from kinhom.collision import _sampled
            samp = _sampled(kernel, x, grid, vm)
        samp = samp.reshape(n, K, K)
        if np.any(samp <= 0):
            raise ValueError("scattering rates must be strictly positive on the grid")

        # absorption Sigma(y, v): first slot integrated
        sigma = np.einsum("jkl,k->jl", samp, vm.weights)
        self.sigma_min = float(sigma.min())
        if self.sigma_min <= 0:
            raise ValueError("absorption rate must be strictly positive")
        sigma_flat = sigma.reshape(-1)

        dense = scheme == "spectral"
        if dense:
            T = np.zeros((self.size, self.size))
            for k in range(K):
                T[k::K, k::K] = _transport_matrix(grid, vm.field[k], scheme)
            Km = np.zeros((self.size, self.size))
            diag_idx = np.arange(n) * K
            for k in range(K):
                for l in range(K):
                    Km[diag_idx + k, diag_idx + l] = vm.weights[l] * samp[:, k, l]
            A = T + np.diag(sigma_flat)
            self.P = A - Km
        else:
            blocks = []
            for k in range(K):
                Tk = _transport_matrix(grid, vm.field[k], scheme)
                Ek = sparse.csr_matrix(([1.0], ([k], [k])), shape=(K, K))
                blocks.append(sparse.kron(Tk, Ek, format="csr"))
            T = sum(blocks)
            jj, kk, ll = np.meshgrid(np.arange(n), np.arange(K), np.arange(K), indexing="ij")
            rows = (jj * K + kk).ravel()
            cols = (jj * K + ll).ravel()
            data = (samp * vm.weights[None, None, :]).ravel()
            Km = sparse.csr_matrix((data, (rows, cols)), shape=(self.size, self.size))
            A = (T + sparse.diags(sigma_flat)).tocsr()
            self.P = (A - Km).tocsr()

        self.K_mat = Km
        self.A_mat = A
        self.A_fact = _Factorized(A)
        self.weights = np.tile(vm.weights, n) / n
        self.const = np.ones(self.size)
        self.sigma_flat = sigma_flat

    # -- field conversion ----------------------------------------------------

    def wrap(self, flat: np.ndarray) -> PhaseField:
        return PhaseField(values=np.real(flat).reshape(self.field_shape),
                          grid=self.grid, vm=self.vm)

    def unwrap(self, field) -> np.ndarray:
        if isinstance(field, PhaseField):
            return field.values.reshape(-1)
        flat = np.asarray(field)
        if flat.shape != (self.size,):
            raise ValueError(f"expected flat size {self.size}, got {flat.shape}")
        return flat

    def velocity_profile(self, component: int) -> np.ndarray:
        """Flat field of ``a_component(v)`` (y-independent)."""
        return np.tile(self.vm.field[:, component], self.n_points)

    def pair_mean_y(self, f: np.ndarray, g: np.ndarray) -> np.ndarray:
        """Per-node cell average ``M(f_k g_k)``, shape ``(K,)``."""
        prod = (f * g).reshape(self.n_points, self.vm.n_nodes)
        return prod.mean(axis=0)

    def values(self, flat: np.ndarray) -> np.ndarray:
        return np.asarray(flat, dtype=float)


def assemble(kernel, x, vm: VelocityMeasure, grid: CellGrid, scheme: str = "upwind",
             sdb_tol: float = 1e-12, require_balance: bool = True) -> CellOperator:
    """Build the grid-backend cell operator at macro position ``x``.

    Refuses kernels that fail semi-detailed balance (``require_balance``
    exists for diagnostic negative controls only).
    """
    return CellOperator(kernel, x, vm, grid, scheme,
                        sdb_tol=sdb_tol, require_balance=require_balance)


# ---------------------------------------------------------------------------
# frequency-lattice backend
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralField:
    """Phase-space field in frequency coordinates: ``coeffs[m, k]``."""

    coeffs: np.ndarray       # (n_lattice, K) complex
    freqs: np.ndarray        # (n_lattice,) float
    vm: VelocityMeasure

    def sample(self, y: np.ndarray) -> np.ndarray:
        """Real samples at fast coordinates ``y``, shape ``(len(y), K)``."""
        phases = np.exp(1j * np.asarray(y, dtype=float)[:, None] * self.freqs[None, :])
        return (phases @ self.coeffs).real

    def mean_y(self) -> np.ndarray:
        zero = np.flatnonzero(np.abs(self.freqs) < 1e-12)
        if zero.size == 0:
            return np.zeros(self.vm.n_nodes)
        return self.coeffs[zero[0]].real


class SpectralCellOperator(_CellOperatorBase):
    """Galerkin compression of the cell operator onto a frequency lattice.

    Unknowns are complex coefficients on integer combinations of the
    profile's generator frequencies (one or two generators in 1-D).  The
    inner product is the Parseval pairing weighted by the velocity measure,
    under which the adjoint is the conjugate transpose, so the Fredholm
    bookkeeping is as exact as in the grid backend.
    """

    def __init__(self, kernel: ScatteringKernel, x, vm: VelocityMeasure, n_modes: int = 8):
        if vm.dim != 1:
            raise ValueError("the frequency-lattice backend is one-dimensional")
        freqs, coeffs = kernel.profile_frequencies()
        c = float(np.asarray(kernel.x_factor(x)))
        gens = sorted({round(float(abs(f)), 9) for f in freqs if abs(f) > 1e-12})
        if len(gens) > 2:
            raise ValueError("at most two generator frequencies are supported")
        self.kernel = kernel
        self.x = x
        self.vm = vm
        self.generators = gens
        self.dtype = complex

        # integer-coordinate lattice
        m = int(n_modes)
        if len(gens) == 0:
            coords = np.zeros((1, 1), dtype=int)
            lattice = np.zeros(1)
        elif len(gens) == 1:
            coords = np.arange(-m, m + 1, dtype=int)[:, None]
            lattice = coords[:, 0] * gens[0]
        else:
            aa, bb = np.meshgrid(np.arange(-m, m + 1), np.arange(-m, m + 1), indexing="ij")
            coords = np.stack([aa.ravel(), bb.ravel()], axis=1)
            lattice = coords[:, 0] * gens[0] + coords[:, 1] * gens[1]
        self.coords = coords
        self.lattice = lattice.astype(float)
        n_lat = coords.shape[0]
        self.n_lattice = n_lat
        index = {tuple(t): i for i, t in enumerate(coords)}
        self.mirror = np.array([index[tuple(-t)] for t in coords])

        # profile multiplication operator on the lattice
        mult = np.zeros((n_lat, n_lat), dtype=complex)
        for f, cf in zip(freqs, coeffs):
            if abs(f) < 1e-12:
                shift = tuple([0] * coords.shape[1])
            else:
                g_idx = gens.index(round(float(abs(f)), 9))
                shift = tuple(
                    int(np.sign(f)) if i == g_idx else 0 for i in range(coords.shape[1])
                )
            for i, t in enumerate(coords):
                target = tuple(np.asarray(t) + np.asarray(shift))
                j = index.get(target)
                if j is not None:
                    mult[j, i] += cf
        K = vm.n_nodes
        g = kernel.node_matrix(vm)
        sig_v = c * (vm.weights @ g)               # Sigma per node / profile factor
        gain_v = c * (g * vm.weights[None, :])     # gain matrix per node pair

        a = vm.field[:, 0]
        transport = np.diag(np.kron(1j * self.lattice, np.ones(K)) * np.tile(a, n_lat))
        A = transport + np.kron(mult, np.diag(sig_v))
        Km = np.kron(mult, gain_v)
        self.P = A - Km
        self.K_mat = Km
        self.A_mat = A
        self.A_fact = _Factorized(A)
        self.size = n_lat * K
        self.weights = np.tile(vm.weights, n_lat)
        const = np.zeros(self.size, dtype=complex)
        zero_row = index[tuple([0] * coords.shape[1])]
        const[zero_row * K: zero_row * K + K] = 1.0
        self.const = const
        self.zero_row = zero_row
        # Sigma(y, v) = s(y) * sig_v[v] with s bounded below by its closed-form minimum
        self.sigma_min = float(kernel._profile_min() * sig_v.min())

    # -- field conversion ------------------------------------------------------

    def wrap(self, flat: np.ndarray) -> SpectralField:
        coeffs = np.asarray(flat, dtype=complex).reshape(self.n_lattice, self.vm.n_nodes)
        return SpectralField(coeffs=coeffs, freqs=self.lattice, vm=self.vm)

    def unwrap(self, field) -> np.ndarray:
        if isinstance(field, SpectralField):
            return field.coeffs.reshape(-1)
        flat = np.asarray(field, dtype=complex)
        if flat.shape != (self.size,):
            raise ValueError(f"expected flat size {self.size}, got {flat.shape}")
        return flat

    def hermitize(self, flat: np.ndarray) -> np.ndarray:
        """Project onto conjugate-symmetric (real-valued) coefficient vectors."""
        co = np.asarray(flat, dtype=complex).reshape(self.n_lattice, self.vm.n_nodes)
        sym = 0.5 * (co + np.conj(co[self.mirror]))
        return sym.reshape(-1)

    def velocity_profile(self, component: int) -> np.ndarray:
        out = np.zeros(self.size, dtype=complex)
        K = self.vm.n_nodes
        out[self.zero_row * K: self.zero_row * K + K] = self.vm.field[:, component]
        return out

    def pair_mean_y(self, f: np.ndarray, g: np.ndarray) -> np.ndarray:
        fc = np.asarray(f, dtype=complex).reshape(self.n_lattice, self.vm.n_nodes)
        gc = np.asarray(g, dtype=complex).reshape(self.n_lattice, self.vm.n_nodes)
        return np.sum(fc * np.conj(gc), axis=0).real

    def values(self, flat: np.ndarray, n_samples: int = 2048) -> np.ndarray:
        """Real space samples for positivity diagnostics."""
        y = np.linspace(0.0, 64.0, n_samples, endpoint=False)
        return self.wrap(flat).sample(y).reshape(-1)


def assemble_spectral_ap(kernel: ScatteringKernel, x, vm: VelocityMeasure,
                         n_modes: int = 8, sdb_tol: float = 1e-12,
                         require_balance: bool = True) -> SpectralCellOperator:
    """Build the frequency-lattice cell operator for a quasi-periodic kernel."""
    if require_balance:
        g = kernel.node_matrix(vm)
        out_rate = g @ vm.weights
        in_rate = vm.weights @ g
        gap = float(np.max(np.abs(out_rate - in_rate)))
        scale = float(np.max(np.abs(out_rate)) + np.max(np.abs(in_rate)))
        if gap > sdb_tol * max(scale, 1e-300):
            raise BalanceError(
                f"kernel violates semi-detailed balance (node-table gap {gap:.3e})"
            )
    return SpectralCellOperator(kernel, x, vm, n_modes=n_modes)


# ---------------------------------------------------------------------------
# solves
# ---------------------------------------------------------------------------


def apply_A_inverse(op: _CellOperatorBase, h):
    """Invert the transport-plus-absorption part; returns a wrapped field."""
    return op.wrap(op.apply_A_inverse(op.unwrap(h)))


def equilibrium_F(op: _CellOperatorBase, tol_eig: float = 1e-12,
                  max_iter: int = 100_000, tol_lambda: float = 1e-8):
    """Principal eigenpair of the gain-relaxation map; normalized equilibrium.

    Power iteration on ``O = K A^{-1}``; the Rayleigh quotient must land on
    1 within ``tol_lambda`` (anything else signals kernel/quadrature
    inconsistency).  The returned field satisfies ``int M(F) dmu = 1`` and
    is strictly positive.

    Returns
    -------
    (lam, F) :
        The converged eigenvalue and the wrapped equilibrium field.
    """
    h = op.apply_P(op.const) + op.apply_K(op.const)  # = A(1), strictly positive
    h = h / op.norm(h)
    lam_prev = np.inf
    lam = 0.0
    for _ in range(int(max_iter)):
        oh = op.apply_O(h)
        lam = float(np.real(op.inner(h, oh))) / float(np.real(op.inner(h, h)))
        nrm = op.norm(oh)
        if nrm == 0.0:
            raise ConvergenceError("gain-relaxation map annihilated the iterate")
        h = oh / nrm
        if abs(lam - lam_prev) <= tol_eig:
            break
        lam_prev = lam
    else:
        raise ConvergenceError(
            f"power iteration did not converge in {max_iter} iterations "
            f"(last increment {abs(lam - lam_prev):.3e})"
        )
    if abs(lam - 1.0) > tol_lambda:
        raise ConvergenceError(
            f"principal eigenvalue {lam!r} deviates from 1 beyond {tol_lambda:.1e}; "
            "kernel and quadrature are inconsistent"
        )
    F = op.apply_A_inverse(h)
    if hasattr(op, "hermitize"):
        F = op.hermitize(F)
    mass = op.mean_v(F)
    if mass == 0.0:
        raise ConvergenceError("equilibrium has zero mean; cannot normalize")
    F = F / mass
    vals = op.values(F)
    scale = float(np.max(np.abs(vals)))
    if vals.min() <= -1e-12 * scale:
        raise ConvergenceError(
            f"equilibrium has negative samples (min {vals.min():.3e})"
        )
    if isinstance(F, np.ndarray) and not np.iscomplexobj(F):
        tiny = vals.min()
        if tiny <= 0.0:
            n_clamped = int(np.sum(F <= 0))
            log.warning("clamping %d nonpositive equilibrium samples to tiny positive", n_clamped)
            F = np.where(F <= 0, 1e-16 * scale, F)
    return lam, op.wrap(F)


@dataclass(frozen=True)
class CorrectorSolution:
    """A corrector field with its solve diagnostics."""

    field: object
    residual: float
    bound_constant: float
    iterations: int


def _deflated_gmres(op: _CellOperatorBase, action, rhs: np.ndarray,
                    deflate: np.ndarray, tol: float) -> tuple[np.ndarray, int]:
    """GMRES on the deflated fixed-point system.

    ``action`` is the map ``v -> (I - O) v`` (or its adjoint twin); the
    projector removes the ``deflate`` direction, which spans the cokernel,
    so the restricted operator is nonsingular and iterates stay in the
    solvable subspace.
    """
    count = {"n": 0}

    def projected(v):
        count["n"] += 1
        return op.project_out(action(v), deflate)

    lin = LinearOperator((rhs.size, rhs.size), matvec=projected, dtype=op.dtype)
    b = op.project_out(rhs.astype(op.dtype), deflate)
    x, info = gmres(lin, b, rtol=tol, atol=0.0, restart=min(rhs.size, 300), maxiter=50)
    if info != 0:
        raise ConvergenceError(f"deflated GMRES failed to converge (info={info})")
    return x, count["n"]


def solve_corrector(op: _CellOperatorBase, g, tol: float | None = None,
                    compat_tol: float = 1e-10) -> CorrectorSolution:
    """Solve ``P f = g`` for the unique zero-mean corrector.

    Requires the compatibility condition ``int M(g) dmu = 0``; solves the
    rewritten system ``(I - O) h = g`` by deflated GMRES, maps back through
    ``f = A^{-1} h``, and gauges the result to ``int M(f) dmu = 0``.
    """
    g_flat = op.unwrap(g).astype(op.dtype)
    g_norm = op.norm(g_flat)
    compat = op.mean_v(g_flat)
    if abs(compat) > compat_tol * max(1.0, g_norm):
        raise CompatibilityError(
            f"int M(g) dmu = {compat:.3e} violates the solvability condition"
        )
    tol = 1e-12 if tol is None else tol

    def action(v):
        return v - op.apply_O(v)

    h, n_iter = _deflated_gmres(op, action, g_flat, op.const, tol)
    f = op.apply_A_inverse(h)
    if hasattr(op, "hermitize"):
        f = op.hermitize(f)
    f = f - (op.mean_v(f) / op.mean_v(op.const)) * op.const
    residual = op.norm(op.apply_P(f) - g_flat)
    if g_norm > 0 and residual > 1e-9 * g_norm:
        raise ConvergenceError(
            f"corrector residual {residual:.3e} exceeds 1e-9 relative"
        )
    constant = op.norm(f) / g_norm if g_norm > 0 else 0.0
    return CorrectorSolution(field=op.wrap(f), residual=residual,
                             bound_constant=constant, iterations=n_iter)


def solve_adjoint_corrector(op: _CellOperatorBase, rhs, F, tol: float | None = None,
                            compat_tol: float = 1e-10) -> CorrectorSolution:
    """Solve ``P* phi = rhs`` (adjoint cell problem) with zero-mean gauge.

    The solvability condition is ``int M(rhs * F) dmu = 0`` with ``F`` the
    equilibrium spanning ``ker P``.
    """
    rhs_flat = op.unwrap(rhs).astype(op.dtype)
    F_flat = op.unwrap(F).astype(op.dtype)
    rhs_norm = op.norm(rhs_flat)
    compat = float(np.real(op.inner(F_flat, rhs_flat)))
    if abs(compat) > compat_tol * max(1.0, rhs_norm * op.norm(F_flat)):
        raise CompatibilityError(
            f"int M(rhs F) dmu = {compat:.3e} violates the adjoint solvability condition"
        )
    tol = 1e-12 if tol is None else tol

    def action(v):
        return v - op.apply_O_adjoint(v)

    h, n_iter = _deflated_gmres(op, action, rhs_flat, F_flat, tol)
    phi = op.apply_A_adjoint_inverse(h)
    if hasattr(op, "hermitize"):
        phi = op.hermitize(phi)
    phi = phi - (op.mean_v(phi) / op.mean_v(op.const)) * op.const
    residual = op.norm(op.apply_P_adjoint(phi) - rhs_flat)
    if rhs_norm > 0 and residual > 1e-9 * rhs_norm:
        raise ConvergenceError(
            f"adjoint corrector residual {residual:.3e} exceeds 1e-9 relative"
        )
    constant = op.norm(phi) / rhs_norm if rhs_norm > 0 else 0.0
    return CorrectorSolution(field=op.wrap(phi), residual=residual,
                             bound_constant=constant, iterations=n_iter)


def solve_chi_star(op: _CellOperatorBase, F, tol: float | None = None):
    """Adjoint correctors driven by the transport directions.

    For each spatial component ``j`` this solves ``P* chi_j = -(a_j - b_j)``
    where ``b_j = int M(a_j F) dmu`` is the equilibrium flux.  The shift by
    ``b_j`` restores solvability whenever the flux does not vanish; ``b``
    is returned so downstream consumers know the co-moving frame.

    Returns
    -------
    (chi, b) :
        List of wrapped corrector fields (one per dimension) and the flux
        vector ``b``.
    """
    F_flat = op.unwrap(F)
    d = op.vm.dim
    chi = []
    b = np.zeros(d)
    for j in range(d):
        a_j = op.velocity_profile(j)
        b[j] = float(np.real(op.inner(F_flat, a_j)))  # int M(a_j F) dmu
        rhs = -(a_j - b[j] * op.const)
        sol = solve_adjoint_corrector(op, rhs, F, tol=tol)
        chi.append(sol.field)
    return chi, b


def verify_variational(op: _CellOperatorBase, F, n_fields: int = 8, seed: int = 0) -> float:
    """Weak-form residual of the equilibrium against a test-field battery.

    Returns ``max |<F, P* phi>| / (||F|| ||phi||)`` over structured and
    random test fields; a converged equilibrium drives this to roundoff,
    an unconverged one does not.
    """
    F_flat = op.unwrap(F)
    rng = np.random.default_rng(seed)
    tests = [op.const.astype(op.dtype)]
    for j in range(op.vm.dim):
        a_j = op.velocity_profile(j)
        tests.append(a_j.astype(op.dtype))
        # velocity profiles live on the mean-zero-frequency row, so the
        # elementwise square is the coefficient vector of a_j(v)^2
        tests.append((a_j ** 2).astype(op.dtype))
    for _ in range(n_fields):
        v = rng.standard_normal(op.size)
        if op.dtype is complex:
            v = v.astype(complex)
            if hasattr(op, "hermitize"):
                v = op.hermitize(v)
        tests.append(v)
    worst = 0.0
    for phi in tests:
        denom = op.norm(F_flat) * op.norm(phi)
        if denom == 0:
            continue
        worst = max(worst, abs(float(np.real(op.inner(F_flat, op.apply_P_adjoint(phi))))) / denom)
    return worst
