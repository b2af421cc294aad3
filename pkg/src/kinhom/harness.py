"""Experiment driver: scenario configs, the full pipeline, sweeps, reports.

A scenario is a flat INI file with sections ``[scenario] [velocity] [cell]
[sigma] [initial] [macro] [kinetic] [output]``.  Unknown sections or keys
are hard errors that name the offending dotted key and the nearest valid
one; parsing fills defaults, and :func:`dump_config` renders a canonical
echo that round-trips byte-identically.

The pipeline runs the stages in dependency order — balance/quadrature
gates, cell solves, effective coefficients, macro integration, kinetic
reference runs per epsilon — and every stage failure is re-raised as a
:class:`StageError` naming the stage.  Sweep and sigma-functional tables
quantify how the kinetic density approaches the homogenized limit; all
emitted tables are comma-separated with one header line, decimal values
at 17 significant digits, written atomically.
"""

from __future__ import annotations

import configparser
import difflib
import io
import logging
import os
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from kinhom.cell_solver import (
    SpectralField,
    assemble,
    assemble_spectral_ap,
    equilibrium_F,
    solve_chi_star,
    verify_variational,
)
from kinhom.collision import PhaseField, ScatteringKernel, check_sdb, make_kernel
from kinhom.effective import EffectiveCoefficients, assemble_effective, ellipticity_gate
from kinhom.kinetic_ref import KineticSolver, KineticState
from kinhom.macro_solver import DriftDiffusionSolver, MacroField
from kinhom.phase_space import (
    CellGrid,
    MacroGrid,
    VelocityMeasure,
    two_velocity_1d,
    uniform_circle,
    validate_h1,
)

__all__ = [
    "ConfigError",
    "StageError",
    "ScenarioConfig",
    "PipelineReport",
    "SweepRow",
    "SweepResult",
    "SigmaRow",
    "parse_config",
    "dump_config",
    "run_pipeline",
    "epsilon_sweep",
    "sigma_test",
    "emit_tables",
]

log = logging.getLogger(__name__)

FMT = "%.17g"


class ConfigError(ValueError):
    """A scenario file is malformed or internally inconsistent."""


class StageError(RuntimeError):
    """A pipeline stage failed; the message names the stage."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage


# ---------------------------------------------------------------------------
# schema
# ---------------------------------------------------------------------------

# (type, default, choices) ; type in {str, int, float, bool, floatlist, auto}
_SCHEMA: dict[str, dict[str, tuple]] = {
    "scenario": {
        "name": ("str", "scenario", None),
        "dimension": ("int", 1, None),
    },
    "velocity": {
        "family": ("str", "two_velocity", ("two_velocity", "uniform_circle")),
        "speed": ("float", 1.0, None),
        "weights": ("floatlist", (1.0, 1.0), None),
        "n": ("int", 8, None),
    },
    "cell": {
        "n": ("int", 64, None),
        "period": ("float", 1.0, None),
        "scheme": ("str", "upwind", ("upwind", "spectral")),
        "backend": ("str", "auto", ("auto", "grid", "spectral_ap")),
        "n_modes": ("int", 8, None),
        "tol": ("float", 1e-12, None),
    },
    "sigma": {
        "family": (
            "str",
            "constant",
            ("constant", "table", "sinusoidal", "quasi_periodic", "quasi_approx", "sinusoidal_defect"),
        ),
        "s0": ("float", 1.0, None),
        "base": ("float", 1.0, None),
        "alpha": ("float", 0.5, None),
        "alpha1": ("float", 0.2, None),
        "alpha2": ("float", 0.2, None),
        "p": ("int", 239, None),
        "q": ("int", 169, None),
        "defect_amplitude": ("float", 0.0, None),
        "defect_width": ("float", 0.25, None),
        "x_dependence": ("str", "none", ("none", "tanh")),
        "x_amplitude": ("float", 0.0, None),
        "table": ("str", "", None),
    },
    "initial": {
        "kind": ("str", "gaussian", ("gaussian", "uniform")),
        "center": ("float", 0.0, None),
        "width": ("float", 0.1, None),
        "prepared": ("bool", True, None),
    },
    "macro": {
        "half_width": ("float", 4.0, None),
        "n": ("int", 512, None),
        "bc": ("str", "periodic", ("periodic", "no-flux")),
        "theta": ("float", 0.5, None),
        "dt": ("auto", "auto", None),
        "t": ("float", 0.5, None),
        "checkpoints": ("int", 10, None),
    },
    "kinetic": {
        "epsilons": ("floatlist", (0.4, 0.2, 0.1), None),
        "scheme": ("str", "upwind", ("upwind", "shift")),
        "collision": ("str", "implicit", ("implicit", "exact")),
        "c_cfl": ("float", 0.9, None),
        "c_split": ("float", 0.1, None),
    },
    "output": {
        "dir": ("str", "out", None),
    },
}

_SECTION_ORDER = ["scenario", "velocity", "cell", "sigma", "initial", "macro", "kinetic", "output"]


def _all_dotted_keys() -> list[str]:
    return [f"{sec}.{key}" for sec in _SECTION_ORDER for key in _SCHEMA[sec]]


def _coerce(section: str, key: str, raw: str):
    kind, default, choices = _SCHEMA[section][key]
    text = raw.strip()
    try:
        if kind == "int":
            value = int(text)
        elif kind == "float":
            value = float(text)
        elif kind == "bool":
            low = text.lower()
            if low in ("yes", "true", "1", "on"):
                value = True
            elif low in ("no", "false", "0", "off"):
                value = False
            else:
                raise ValueError(f"not a boolean: {text!r}")
        elif kind == "floatlist":
            value = tuple(float(tok) for tok in text.split(",") if tok.strip())
            if not value:
                raise ValueError("empty list")
        elif kind == "auto":
            value = "auto" if text.lower() == "auto" else float(text)
        else:
            value = text
    except ValueError as exc:
        raise ConfigError(f"key `{section}.{key}`: {exc}") from None
    if choices is not None and value not in choices:
        raise ConfigError(
            f"key `{section}.{key}`: value {value!r} not in {choices}"
        )
    return value


def _render(section: str, key: str, value) -> str:
    kind = _SCHEMA[section][key][0]
    if kind == "floatlist":
        return ", ".join(repr(float(v)) for v in value)
    if kind == "bool":
        return "yes" if value else "no"
    if kind == "float":
        return repr(float(value))
    if kind == "auto":
        return "auto" if value == "auto" else repr(float(value))
    return str(value)


@dataclass(frozen=True)
class ScenarioConfig:
    """A fully resolved scenario: per-section value dicts plus builders."""

    scenario: dict
    velocity: dict
    cell: dict
    sigma: dict
    initial: dict
    macro: dict
    kinetic: dict | None
    output: dict

    # -- builders ------------------------------------------------------------

    @property
    def dimension(self) -> int:
        return self.scenario["dimension"]

    def build_velocity(self) -> VelocityMeasure:
        fam = self.velocity["family"]
        if fam == "two_velocity":
            return two_velocity_1d(speed=self.velocity["speed"], weights=self.velocity["weights"])
        return uniform_circle(self.velocity["n"], speed=self.velocity["speed"])

    def build_kernel(self) -> ScatteringKernel:
        s = dict(self.sigma)
        fam = s.pop("family")
        params: dict = {"dim": self.dimension}
        if s["x_dependence"] != "none":
            params["x_dependence"] = s["x_dependence"]
            params["x_amplitude"] = s["x_amplitude"]
        if fam == "constant":
            params["s0"] = s["s0"]
        elif fam == "table":
            rows = [
                [float(tok) for tok in row.split(",")]
                for row in s["table"].split(";")
                if row.strip()
            ]
            if not rows:
                raise ConfigError("key `sigma.table`: empty table")
            params["table"] = np.asarray(rows, dtype=float)
        elif fam == "sinusoidal":
            params.update(base=s["base"], alpha=s["alpha"])
        elif fam in ("quasi_periodic", "quasi_approx"):
            params.update(base=s["base"], alpha1=s["alpha1"], alpha2=s["alpha2"])
            if fam == "quasi_approx":
                params.update(p=s["p"], q=s["q"])
        else:  # sinusoidal_defect
            params.update(
                base=s["base"],
                alpha=s["alpha"],
                defect_amplitude=s["defect_amplitude"],
                defect_width=s["defect_width"],
            )
        return make_kernel(fam, **params)

    def build_cell_grid(self) -> CellGrid:
        d = self.dimension
        return CellGrid((self.cell["n"],) * d, period=(self.cell["period"],) * d)

    def build_macro_grid(self) -> MacroGrid:
        d = self.dimension
        return MacroGrid(
            half_width=self.macro["half_width"],
            shape=(self.macro["n"],) * d,
            bc=self.macro["bc"],
        )

    def cell_backend(self, kernel: ScatteringKernel) -> str:
        backend = self.cell["backend"]
        if backend == "auto":
            return "grid" if kernel.natural_period is not None else "spectral_ap"
        return backend

    def checkpoint_times(self) -> np.ndarray:
        return np.linspace(0.0, self.macro["t"], self.macro["checkpoints"] + 1)

    def macro_dt(self) -> float | None:
        dt = self.macro["dt"]
        return None if dt == "auto" else float(dt)

    def initial_rho(self, mg: MacroGrid) -> np.ndarray:
        if self.initial["kind"] == "uniform":
            return np.ones(mg.shape)
        c = self.initial["center"]
        w = self.initial["width"]
        axes = mg.axes()
        if mg.dim == 1:
            return np.exp(-((axes[0] - c) ** 2) / (2.0 * w * w))
        mesh = np.meshgrid(*axes, indexing="ij")
        r2 = sum((m - c) ** 2 for m in mesh)
        return np.exp(-r2 / (2.0 * w * w))

    def initial_f(self, mg: MacroGrid, vm: VelocityMeasure) -> np.ndarray:
        """Initial kinetic datum: well-prepared (equilibrium profile) or not."""
        rho = self.initial_rho(mg).reshape(-1)
        f0 = np.zeros((rho.size, vm.n_nodes))
        if self.initial["prepared"]:
            f0[:] = rho[:, None] / vm.total_mass
        else:
            f0[:, 0] = rho / vm.weights[0]
        return f0


def parse_config(text: str) -> ScenarioConfig:
    """Parse a scenario file, validating exhaustively and filling defaults."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed scenario file: {exc}") from None

    valid_dotted = _all_dotted_keys()
    for sec in cp.sections():
        if sec not in _SCHEMA:
            keys = list(cp[sec].keys()) or [""]
            dotted = f"{sec}.{keys[0]}" if keys[0] else sec
            hint = difflib.get_close_matches(dotted, valid_dotted, n=1)
            extra = f"; nearest valid: `{hint[0]}`" if hint else ""
            raise ConfigError(f"unknown key `{dotted}`{extra}")
        for key in cp[sec]:
            if key not in _SCHEMA[sec]:
                dotted = f"{sec}.{key}"
                hint = difflib.get_close_matches(dotted, valid_dotted, n=1)
                extra = f"; nearest valid: `{hint[0]}`" if hint else ""
                raise ConfigError(f"unknown key `{dotted}`{extra}")

    sections: dict[str, dict | None] = {}
    for sec in _SECTION_ORDER:
        if sec == "kinetic" and not cp.has_section("kinetic"):
            sections[sec] = None
            continue
        values = {}
        for key, (kind, default, choices) in _SCHEMA[sec].items():
            if cp.has_section(sec) and key in cp[sec]:
                values[key] = _coerce(sec, key, cp[sec][key])
            else:
                values[key] = default
        sections[sec] = values

    cfg = ScenarioConfig(
        scenario=sections["scenario"],
        velocity=sections["velocity"],
        cell=sections["cell"],
        sigma=sections["sigma"],
        initial=sections["initial"],
        macro=sections["macro"],
        kinetic=sections["kinetic"],
        output=sections["output"],
    )
    _validate_consistency(cfg)
    return cfg


def _validate_consistency(cfg: ScenarioConfig) -> None:
    d = cfg.dimension
    if d not in (1, 2):
        raise ConfigError("key `scenario.dimension`: must be 1 or 2")
    fam = cfg.velocity["family"]
    fam_dim = 1 if fam == "two_velocity" else 2
    if fam_dim != d:
        raise ConfigError(
            f"key `velocity.family`: {fam} is {fam_dim}-dimensional "
            f"but `scenario.dimension` = {d}"
        )
    if cfg.kinetic is not None and d != 1:
        raise ConfigError(
            "key `kinetic.epsilons`: the kinetic reference is one-dimensional; "
            "drop the [kinetic] section for 2-D scenarios"
        )
    if cfg.sigma["family"] == "table" and not cfg.sigma["table"].strip():
        raise ConfigError("key `sigma.table`: required for the table family")


def dump_config(cfg: ScenarioConfig) -> str:
    """Canonical scenario text; fixed section/key order, round-trip stable."""
    out = io.StringIO()
    for sec in _SECTION_ORDER:
        values = getattr(cfg, sec)
        if values is None:
            continue
        out.write(f"[{sec}]\n")
        for key in _SCHEMA[sec]:
            out.write(f"{key} = {_render(sec, key, values[key])}\n")
        out.write("\n")
    return out.getvalue()


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    epsilon: float
    err: float
    runtime: float
    l2_flag: bool


@dataclass(frozen=True)
class SweepResult:
    rows: list[SweepRow]
    monotone: bool
    min_ratio: float
    drift_shift: float  # |b| T / eps at the smallest eps (0 when no shift)


@dataclass(frozen=True)
class SigmaRow:
    epsilon: float
    phi: str
    m: str
    c: str
    lhs: float
    rhs: float

    @property
    def residual(self) -> float:
        return abs(self.lhs - self.rhs)


@dataclass
class PipelineReport:
    """Everything the pipeline produced, ready for table emission."""

    config: ScenarioConfig
    sdb_gap: float = 0.0
    h1_ok: bool = True
    lam: float = 0.0
    flux: np.ndarray = field(default_factory=lambda: np.zeros(1))
    variational_residual: float = 0.0
    corrector_residual: float = 0.0
    bound_constant: float = 0.0
    coefficients: EffectiveCoefficients | None = None
    ellipticity_min: float = 0.0
    macro: MacroField | None = None
    kinetic_states: dict[float, list[KineticState]] = field(default_factory=dict)
    sweep: SweepResult | None = None
    sigma_rows: list[SigmaRow] = field(default_factory=list)
    summary: dict[str, float | str] = field(default_factory=dict)


def _stage(name: str):
    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, StageError):
                raise StageError(name, str(exc)) from exc
            return False

    return _Ctx()


def _circular_shift(values: np.ndarray, shift: float, length: float) -> np.ndarray:
    """Translate periodic samples right by ``shift`` via the FFT phase rule."""
    n = values.shape[0]
    kappa = 2.0 * np.pi * np.fft.rfftfreq(n, d=length / n)
    spectra = np.fft.rfft(values) * np.exp(-1j * kappa * shift)
    return np.fft.irfft(spectra, n=n)


def _profile_moment(F_field, m_kind: str, vm: VelocityMeasure) -> np.ndarray:
    """Cell-average ``M(F_k m)`` per velocity node for a catalogue profile."""
    if m_kind == "1":
        return np.asarray(F_field.mean_y(), dtype=float)
    freq_map = {
        "cos2pi": (2.0 * np.pi, "cos"),
        "sin2pi": (2.0 * np.pi, "sin"),
        "cos2r2pi": (2.0 * np.sqrt(2.0) * np.pi, "cos"),
    }
    freq, flavor = freq_map[m_kind]
    if isinstance(F_field, PhaseField):
        y = F_field.grid.axes()[0]
        m_vals = np.cos(freq * y) if flavor == "cos" else np.sin(freq * y)
        return (F_field.values * m_vals[:, None]).mean(axis=0)
    if isinstance(F_field, SpectralField):
        idx = np.flatnonzero(np.abs(F_field.freqs - freq) < 1e-9)
        if idx.size == 0:
            return np.zeros(vm.n_nodes)
        coeff = F_field.coeffs[idx[0]]
        return coeff.real if flavor == "cos" else -coeff.imag
    raise TypeError(f"unsupported equilibrium field {type(F_field)!r}")


def sigma_test(
    states: list[KineticState],
    macro: MacroField,
    F_field,
    *,
    drift: float = 0.0,
    include_quasi: bool = False,
) -> list[SigmaRow]:
    """Oscillation-aware weak-convergence residuals on a test catalogue.

    For each test function ``psi = phi(t,x) m(y) c(v)`` this compares the
    kinetic pairing ``iint f_eps psi(t, x, x/eps, v) dmu dx dt`` against
    the factorized limit ``iint M(f0 psi) dmu dx dt`` with
    ``f0 = rho0 F`` (drift-shifted when the equilibrium flux is nonzero),
    integrating checkpoints by the trapezoid rule.
    """
    vm = states[0].vm
    grid = states[0].grid
    eps = states[0].epsilon
    x = grid.axes()[0]
    h = grid.cell_volume
    length = 2.0 * grid.half_width
    times = np.array([s.t for s in states])
    a1 = vm.field[:, 0]

    phis = {"1": lambda t, xx: np.ones_like(xx), "gauss": lambda t, xx: np.exp(-(xx**2) / 2.0)}
    m_kinds = ["1", "cos2pi", "sin2pi"] + (["cos2r2pi"] if include_quasi else [])
    c_kinds = {"1": np.ones(vm.n_nodes), "a1": a1}
    m_freqs = {
        "1": None,
        "cos2pi": (2.0 * np.pi, np.cos),
        "sin2pi": (2.0 * np.pi, np.sin),
        "cos2r2pi": (2.0 * np.sqrt(2.0) * np.pi, np.cos),
    }

    rho_slices = []
    for t in times:
        rho_t = macro.at_time(t)
        shift = drift * t / eps
        rho_slices.append(_circular_shift(rho_t, shift, length) if shift else rho_t)

    rows: list[SigmaRow] = []
    for m_kind in m_kinds:
        moments = {}  # c_kind -> scalar sum_k mu_k c_k M(F_k m)
        for c_name, c_vals in c_kinds.items():
            mk = _profile_moment(F_field, m_kind, vm)
            moments[c_name] = float(np.sum(vm.weights * c_vals * mk))
        fm = m_freqs[m_kind]
        m_fast = np.ones_like(x) if fm is None else fm[1](fm[0] * x / eps)
        for phi_name, phi in phis.items():
            phi_slices = [phi(t, x) for t in times]
            for c_name, c_vals in c_kinds.items():
                lhs_t = [
                    h * float(np.sum((s.f * (vm.weights * c_vals)[None, :]).sum(axis=1)
                                     * phi_slices[i] * m_fast))
                    for i, s in enumerate(states)
                ]
                rhs_t = [
                    h * float(np.sum(rho_slices[i] * phi_slices[i])) * moments[c_name]
                    for i in range(len(states))
                ]
                rows.append(
                    SigmaRow(
                        epsilon=eps,
                        phi=phi_name,
                        m=m_kind,
                        c=c_name,
                        lhs=float(np.trapezoid(lhs_t, times)),
                        rhs=float(np.trapezoid(rhs_t, times)),
                    )
                )
    return rows


def run_pipeline(
    cfg: ScenarioConfig, jobs: int = 1, seed: int = 0, stop_after: str | None = None
) -> PipelineReport:
    """Execute the full homogenization pipeline for one scenario.

    Stages: gate checks (balance, velocity-span), cell solves, effective
    coefficients, macro integration, then — when a ``[kinetic]`` section
    is present — kinetic runs per epsilon with sweep and sigma tables.
    ``stop_after`` truncates the run after the named stage, leaving later
    report fields unset.
    """
    report = PipelineReport(config=cfg)

    def _finish() -> PipelineReport:
        report.summary = _summarize(report)
        return report

    with _stage("check"):
        vm = cfg.build_velocity()
        kernel = cfg.build_kernel()
        h1 = validate_h1(vm)
        report.h1_ok = bool(h1.ok)
        backend = cfg.cell_backend(kernel)
        if backend == "grid":
            grid = cfg.build_cell_grid()
            sdb = check_sdb(kernel, 0.0, grid, vm)
            report.sdb_gap = float(sdb.max_rel_gap)
            if not sdb.passed:
                raise ValueError(
                    f"kernel violates semi-detailed balance "
                    f"(relative gap {sdb.max_rel_gap:.3e})"
                )
        else:
            grid = None
            g = kernel.node_matrix(vm)
            gap = float(np.max(np.abs(g @ vm.weights - vm.weights @ g)))
            scale = float(np.max(np.abs(g @ vm.weights)))
            report.sdb_gap = gap / scale if scale > 0 else gap
            if gap > 1e-12 * scale:
                raise ValueError(f"kernel violates semi-detailed balance (gap {gap:.3e})")
    if stop_after == "check":
        return _finish()

    with _stage("cell"):
        if backend == "grid":
            op = assemble(kernel, 0.0, vm, grid, scheme=cfg.cell["scheme"])
        else:
            op = assemble_spectral_ap(kernel, 0.0, vm, n_modes=cfg.cell["n_modes"])
        lam, F = equilibrium_F(op)
        chi, b = solve_chi_star(op, F, tol=cfg.cell["tol"])
        report.lam = lam
        report.flux = b
        report.variational_residual = verify_variational(op, op.unwrap(F), seed=seed)
        F_flat = op.unwrap(F)
        worst_res = worst_const = 0.0
        for j, c in enumerate(chi):
            rhs = -(op.velocity_profile(j) - b[j] * op.const)
            nrm = op.norm(rhs)
            if nrm > 0:
                worst_res = max(worst_res, op.norm(op.apply_P_adjoint(op.unwrap(c)) - rhs) / nrm)
                worst_const = max(worst_const, op.norm(op.unwrap(c)) / nrm)
        report.corrector_residual = worst_res
        report.bound_constant = worst_const
        F_field = F
    if stop_after == "cell":
        return _finish()

    with _stage("effective"):
        mg = cfg.build_macro_grid()
        x_samples = mg.axes()[0] if kernel.x_dependence != "none" else None
        coeffs = assemble_effective(
            kernel,
            vm,
            x=x_samples,
            grid=grid,
            scheme=cfg.cell["scheme"],
            backend=backend,
            n_modes=cfg.cell["n_modes"],
            tol=cfg.cell["tol"],
            jobs=jobs,
        )
        report.coefficients = coeffs
        D_all = coeffs.D if coeffs.D.ndim == 3 else coeffs.D[None, :, :]
        report.ellipticity_min = min(ellipticity_gate(Dm) for Dm in D_all)
    if stop_after == "effective":
        return _finish()

    with _stage("macro"):
        rho0 = cfg.initial_rho(mg)
        if coeffs.constant:
            D_run, U_run = coeffs.D, coeffs.U
        else:
            pts = mg.axes()[0]
            D_run, U_run = coeffs.at_points(pts)
        solver = DriftDiffusionSolver(mg, D_run, U_run, theta=cfg.macro["theta"])
        macro = solver.run(
            rho0, cfg.macro["t"], dt=cfg.macro_dt(), checkpoints=cfg.checkpoint_times()
        )
        report.macro = macro
    if stop_after == "macro":
        return _finish()

    if cfg.kinetic is not None:
        with _stage("kinetic"):
            _run_kinetic(cfg, report, vm, kernel, mg, macro, F_field, jobs)

    return _finish()


def _run_kinetic(cfg, report, vm, kernel, mg, macro, F_field, jobs):
    T = cfg.macro["t"]
    times = cfg.checkpoint_times()
    b1 = float(report.flux[0])
    drift = b1 if abs(b1) > 1e-10 else 0.0
    quasi = kernel.natural_period is None
    length = 2.0 * mg.half_width
    ref_final = macro.at_time(T)

    def run_one(eps: float):
        t0 = time.perf_counter()
        solver = KineticSolver(
            kernel,
            vm,
            mg,
            epsilon=eps,
            scheme=cfg.kinetic["scheme"],
            collision=cfg.kinetic["collision"],
            c_cfl=cfg.kinetic["c_cfl"],
            c_split=cfg.kinetic["c_split"],
        )
        states = solver.run(cfg.initial_f(mg, vm), T, checkpoints=times)
        runtime = time.perf_counter() - t0
        ref = ref_final
        if drift:
            ref = _circular_shift(ref_final, drift * T / eps, length)
        rho_eps = states[-1].density()
        err = float(np.linalg.norm(rho_eps - ref) / np.linalg.norm(ref))
        l2 = [s.l2_norm() for s in states]
        flag = bool(max(l2) > l2[0] * (1.0 + 1e-8))
        return states, err, runtime, flag

    epsilons = list(cfg.kinetic["epsilons"])
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=int(jobs)) as pool:
            outcomes = list(pool.map(run_one, epsilons))
    else:
        outcomes = [run_one(e) for e in epsilons]

    rows = []
    for eps, (states, err, runtime, flag) in zip(epsilons, outcomes):
        report.kinetic_states[eps] = states
        rows.append(SweepRow(epsilon=eps, err=err, runtime=runtime, l2_flag=flag))
        report.sigma_rows.extend(
            sigma_test(states, macro, F_field, drift=drift, include_quasi=quasi)
        )

    ordered = sorted(rows, key=lambda r: -r.epsilon)
    errs = [r.err for r in ordered]
    ratios = [errs[i] / errs[i + 1] for i in range(len(errs) - 1) if errs[i + 1] > 0]
    monotone = all(e1 > e2 for e1, e2 in zip(errs, errs[1:]))
    min_ratio = min(ratios) if ratios else float("nan")
    shift = abs(drift) * T / min(epsilons) if drift else 0.0
    report.sweep = SweepResult(rows=ordered, monotone=monotone, min_ratio=min_ratio, drift_shift=shift)


def epsilon_sweep(cfg: ScenarioConfig, jobs: int = 1, seed: int = 0) -> SweepResult:
    """Run the pipeline and return the kinetic-vs-macro convergence table."""
    if cfg.kinetic is None:
        raise ConfigError("epsilon_sweep needs a [kinetic] section")
    report = run_pipeline(cfg, jobs=jobs, seed=seed)
    assert report.sweep is not None
    return report.sweep


def _summarize(report: PipelineReport) -> dict[str, float | str]:
    cfg = report.config
    coeffs = report.coefficients
    out: dict[str, float | str] = {
        "scenario": cfg.scenario["name"],
        "sdb_relative_gap": report.sdb_gap,
        "h1_ok": "yes" if report.h1_ok else "no",
    }
    if report.lam != 0.0:  # cell stage ran
        out["lambda"] = report.lam
        out["variational_residual"] = report.variational_residual
        out["corrector_residual"] = report.corrector_residual
        out["bound_constant"] = report.bound_constant
        for j in range(len(report.flux)):
            out[f"b_{j + 1}"] = float(report.flux[j])
    if report.coefficients is not None:
        out["ellipticity_min"] = report.ellipticity_min
    if coeffs is not None:
        D = coeffs.D if coeffs.constant else coeffs.D[0]
        U = coeffs.U if coeffs.constant else coeffs.U[0]
        for i in range(D.shape[0]):
            for j in range(D.shape[1]):
                out[f"D_eff_{i + 1}{j + 1}"] = float(D[i, j])
        for i in range(U.shape[0]):
            out[f"U_{i + 1}"] = float(U[i])
    if report.macro is not None:
        mass = report.macro.mass()
        out["macro_mass_drift"] = float(abs(mass[-1] - mass[0]) / mass[0])
    if report.sweep is not None:
        for row in report.sweep.rows:
            out[f"err_eps_{row.epsilon:g}"] = row.err
        out["sweep_monotone"] = "yes" if report.sweep.monotone else "no"
        out["sweep_min_ratio"] = report.sweep.min_ratio
    return out


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv(header: list[str], rows: list[list]) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(FMT % v if isinstance(v, float) else str(v) for v in row))
    return "\n".join(lines) + "\n"


def emit_tables(report: PipelineReport, out_dir: str) -> dict[str, str]:
    """Write every table the report carries; returns ``{name: path}``.

    All files are comma-separated with one header line and decimal values
    at 17 significant digits, written atomically (temp file + rename).
    """
    cfg = report.config
    paths: dict[str, str] = {}

    def emit(name: str, text: str) -> None:
        path = os.path.join(out_dir, name)
        _atomic_write(path, text)
        paths[name] = path

    emit("config.ini", dump_config(cfg))

    coeffs = report.coefficients
    if coeffs is not None:
        d = coeffs.D.shape[-1]
        header = ["x"]
        header += [f"D_eff_{i + 1}{j + 1}" for i in range(d) for j in range(d)]
        header += [f"U_{i + 1}" for i in range(d)]
        header += [f"b_{i + 1}" for i in range(d)]
        header += ["lambda", "ellipticity_min"]
        if coeffs.constant:
            xs = [0.0]
            Ds = coeffs.D[None]
            Us = coeffs.U[None]
            bs = coeffs.flux[None]
        else:
            xs = list(coeffs.x)
            Ds, Us, bs = coeffs.D, coeffs.U, coeffs.flux
        rows = []
        for m, xv in enumerate(xs):
            row = [float(xv)]
            row += [float(v) for v in Ds[m].ravel()]
            row += [float(v) for v in Us[m]]
            row += [float(v) for v in bs[m]] if bs.ndim == 2 else [float(v) for v in coeffs.flux]
            row += [report.lam, report.ellipticity_min]
            rows.append(row)
        emit("effective.csv", _csv(header, rows))

    if report.macro is not None:
        mf = report.macro
        x = mf.grid.axes()[0] if mf.grid.dim == 1 else None
        rows = []
        if x is not None:
            for ti, t in enumerate(mf.times):
                for j in range(x.size):
                    rows.append([float(t), float(x[j]), float(mf.values[ti, j])])
            emit("macro.csv", _csv(["t", "x", "rho"], rows))

    for eps, states in report.kinetic_states.items():
        x = states[0].grid.axes()[0]
        rows = []
        for s in states:
            for j in range(x.size):
                for k in range(s.vm.n_nodes):
                    rows.append([float(s.t), float(x[j]), k, float(s.f[j, k])])
        emit(f"kinetic_eps_{eps:g}.csv", _csv(["t", "x", "v_index", "f"], rows))

    if report.sweep is not None:
        rows = [
            [r.epsilon, r.err, r.runtime, "yes" if r.l2_flag else "no"]
            for r in report.sweep.rows
        ]
        emit("sweep.csv", _csv(["epsilon", "err", "runtime_s", "l2_flag"], rows))

    if report.sigma_rows:
        rows = [
            [r.epsilon, r.phi, r.m, r.c, r.lhs, r.rhs, r.residual]
            for r in report.sigma_rows
        ]
        emit("sigma.csv", _csv(["epsilon", "phi", "m", "c", "lhs", "rhs", "residual"], rows))

    if report.summary:
        lines = [
            f"{k} = " + (FMT % v if isinstance(v, float) else str(v))
            for k, v in report.summary.items()
        ]
        emit("summary.txt", "\n".join(lines) + "\n")

    return paths
