"""End-to-end experiments: sources, data, reconstruction and CSV output."""

from __future__ import annotations

import csv
import dataclasses
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .acquisition import (
    ObservedData,
    SensorBasis,
    CovarianceOperator,
    build_R,
    domain_preset,
    expectation_matrix,
    make_observed_data,
    partition_domain,
    spectral_basis,
)
from .disk_spectrum import EigenMode, build_eigensystem, make_quadrature, project, synthesize
from .inversion import (
    LMConfig,
    ReconstructionResult,
    TikhonovConfig,
    closed_form_full,
    lm_reconstruct,
    rel_l2_error,
    tikhonov_solve,
)
from .sfde_forward import ConstantProfile, KernelGram, ModeMoments, SimConfig, SourceSpec, kernel_gram

__all__ = [
    "ExperimentConfig",
    "ExperimentOutcome",
    "PRESETS",
    "REFERENCE_GAMMAS",
    "build_sensors",
    "build_source",
    "run_experiment",
    "source_fields",
]

PRESETS = ("e1", "e2")
DOMAINS = ("full", "a", "b", "c")

# regularization parameters (gamma_f, gamma_g) of the published partial-domain runs
REFERENCE_GAMMAS = {
    ("e1", "a"): (1e-10, 1e-12),
    ("e1", "b"): (1e-10, 1e-12),
    ("e1", "c"): (1e-10, 1e-11),
    ("e2", "a"): (1e-10, 1e-16),
    ("e2", "b"): (1e-13, 1e-16),
    ("e2", "c"): (1e-13, 1e-16),
}

_E1_F = (10.0, 5.0, 12.0)
_E1_G = (10.0, 2.0, 13.0)


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str = "e1"
    domain: str = "full"
    alpha: float = 0.8
    T: float = 1.0
    h_const: float = 1.0
    n_modes: int = 36
    n0: int = 1
    realizations: int = 1000
    n_t: int = 2048
    noise: float = 0.01
    noise_dist: str = "uniform"
    gamma_f: float | None = None
    gamma_g: float | None = None
    data_mode: str = "empirical"
    seed: int = 0
    n_r_cells: int | None = None
    n_theta_cells: int | None = None
    cell_gauss: int = 12
    quad_r: int = 64
    quad_theta: int = 256
    lm_init: str = "closed-form-diagonal"
    lm_max_iter: int = 200
    lm_step_tol: float = 1e-8
    trust_region: bool = False
    grid_r: int = 128
    grid_theta: int = 256
    workers: int = 1

    def __post_init__(self) -> None:
        if self.preset not in PRESETS:
            raise ValueError(f"preset must be one of {PRESETS}")
        if self.domain not in DOMAINS:
            raise ValueError(f"domain must be one of {DOMAINS}")
        if self.data_mode not in ("empirical", "analytic"):
            raise ValueError("data_mode must be empirical or analytic")
        if self.noise < 0:
            raise ValueError("noise must be nonnegative")
        if not self.h_const > 0:
            raise ValueError("h_const must be positive")
        if self.preset == "e1" and self.n_modes < 3:
            raise ValueError("preset e1 needs at least 3 modes")
        for name in ("gamma_f", "gamma_g"):
            v = getattr(self, name)
            if v is not None and not v >= 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.grid_r < 2 or self.grid_theta < 1:
            raise ValueError("rendering grid too small")

    def resolved(self) -> ExperimentConfig:
        """Copy with every preset-dependent default filled in."""
        upd = {}
        if self.domain != "full":
            _, nr, nt = domain_preset(self.domain)
            gf, gg = REFERENCE_GAMMAS[(self.preset, self.domain)]
            if self.n_r_cells is None:
                upd["n_r_cells"] = nr
            if self.n_theta_cells is None:
                upd["n_theta_cells"] = nt
            if self.gamma_f is None:
                upd["gamma_f"] = gf
            if self.gamma_g is None:
                upd["gamma_g"] = gg
        return dataclasses.replace(self, **upd) if upd else self

    def sim_config(self) -> SimConfig:
        return SimConfig(
            alpha=self.alpha,
            T=self.T,
            N=self.n_modes,
            n_t=self.n_t,
            M=self.realizations,
            seed=self.seed,
            workers=self.workers,
        )


def _indicator_ellipse(cx, cy, ax, ay, rad2, value):
    def fn(r, theta):
        x = r * np.cos(theta)
        y = r * np.sin(theta)
        inside = ax * (x - cx) ** 2 + ay * (y - cy) ** 2 < rad2
        return np.where(inside, value, 0.0)

    return fn


def source_fields(preset: str, modes: Sequence[EigenMode]) -> tuple[Callable, Callable]:
    """Spatial profiles ``f(r, theta)`` and ``g(r, theta)`` of a preset."""
    if preset == "e1":
        def mk(coef):
            c = np.zeros(len(modes))
            c[:3] = coef
            return lambda r, theta: synthesize(c, modes, r, theta)

        return mk(_E1_F), mk(_E1_G)
    if preset == "e2":
        f = _indicator_ellipse(0.3, 0.2, 1.0, 0.5, 0.2**2, 6.0)
        g = _indicator_ellipse(-0.4, -0.3, 0.3, 1.0, 0.15**2, -3.0)
        return f, g
    raise ValueError(f"unknown preset: {preset}")


def build_source(cfg: ExperimentConfig, modes, quad) -> SourceSpec:
    h = ConstantProfile(cfg.h_const)
    if cfg.preset == "e1":
        f = np.zeros(len(modes))
        g = np.zeros(len(modes))
        f[:3] = _E1_F
        g[:3] = _E1_G
    else:
        ff, gf = source_fields(cfg.preset, modes)
        f = project(ff, modes, quad)
        g = project(gf, modes, quad)
    return SourceSpec(f, g, h=h, c_h=cfg.h_const, T=cfg.T)


def build_sensors(cfg: ExperimentConfig, modes) -> SensorBasis:
    if cfg.domain == "full":
        return spectral_basis(len(modes))
    domain, _, _ = domain_preset(cfg.domain)
    cells = partition_domain(domain, cfg.n_r_cells, cfg.n_theta_cells)
    return build_R(cells, modes, cfg.cell_gauss)


@dataclass
class ExperimentOutcome:
    config: ExperimentConfig
    result: ReconstructionResult
    modes: list
    gram: KernelGram
    sensors: SensorBasis
    source: SourceSpec
    data: ObservedData
    truncation_f: float = math.nan
    truncation_g: float = math.nan
    files: list[str] = field(default_factory=list)


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None) -> ExperimentOutcome:
    """Run one experiment; write CSV output into ``out_dir`` if given."""
    cfg = cfg.resolved()
    stage = "spectrum"
    try:
        quad = make_quadrature(cfg.quad_r, cfg.quad_theta)
        modes = build_eigensystem(cfg.n_modes, quad)
        stage = "source"
        source = build_source(cfg, modes, quad)
        f_field, g_field = source_fields(cfg.preset, modes)
        stage = "kernel"
        sim = cfg.sim_config()
        gram = kernel_gram(sim, modes, source.h)
        stage = "sensors"
        sensors = build_sensors(cfg, modes)
        stage = "data"
        data = make_observed_data(source, sensors, gram, sim, cfg.data_mode, cfg.noise, cfg.noise_dist)
        stage = "inversion"
        if cfg.domain == "full":
            f_hat, g_hat = closed_form_full(ModeMoments(data.Ehat, data.Chat), gram, cfg.n0)
            iters, hist, steps = 0, [], []
        else:
            A = expectation_matrix(sensors, gram)
            f_hat = tikhonov_solve(A, data.Ehat, TikhonovConfig(cfg.gamma_f))
            lm_cfg = LMConfig(
                gamma_g=cfg.gamma_g,
                max_iter=cfg.lm_max_iter,
                step_tol=cfg.lm_step_tol,
                init=cfg.lm_init,
                n0=cfg.n0,
                trust_region=cfg.trust_region,
            )
            lm = lm_reconstruct(CovarianceOperator(sensors, gram), data.Chat, lm_cfg)
            g_hat, iters, hist, steps = lm.g, lm.iterations, lm.residual_history, lm.step_history
        stage = "errors"
        err_f = rel_l2_error(f_field, f_hat, modes, quad)
        err_g = rel_l2_error(g_field, g_hat, modes, quad, absolute=True)
        trunc_f = rel_l2_error(f_field, source.f_coeffs, modes, quad)
        trunc_g = rel_l2_error(g_field, source.g_coeffs, modes, quad, absolute=True)
    except (ValueError, ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        raise ExperimentError(stage, exc) from exc

    result = ReconstructionResult(f_hat, g_hat, err_f, err_g, iters, list(hist), list(steps))
    outcome = ExperimentOutcome(cfg, result, modes, gram, sensors, source, data, trunc_f, trunc_g)
    if out_dir is not None:
        outcome.files = write_outputs(outcome, out_dir)
    return outcome


class ExperimentError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


# ---------------------------------------------------------------- output

def fmt(x) -> str:
    """Round-trip float formatting used in every CSV file."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    if x is None:
        return ""
    return "%.17g" % float(x)


def write_csv(path: str, header: Sequence[str], rows) -> str:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def write_modes(path: str, modes) -> str:
    return write_csv(
        path,
        ["n", "m", "parity", "bessel_zero", "lambda", "weight"],
        ((md.index, md.m, md.parity, md.bessel_zero, md.lam, md.weight) for md in modes),
    )


def write_sensors(path: str, sensors: SensorBasis) -> str:
    if sensors.kind == "spectral":
        rows = ((k + 1, "mode", "", "", "", "", i) for k, i in enumerate(sensors.indices))
    else:
        rows = ((k + 1, "cell", c.r0, c.r1, c.theta0, c.theta1, "") for k, c in enumerate(sensors.cells))
    return write_csv(path, ["sensor", "kind", "r0", "r1", "theta0", "theta1", "mode"], rows)


def write_vector(path: str, name: str, values) -> str:
    return write_csv(path, [name, "value"], ((i + 1, v) for i, v in enumerate(values)))


def write_matrix(path: str, values) -> str:
    values = np.asarray(values)
    K = values.shape[0]
    return write_csv(
        path,
        ["row", "col", "value"],
        ((i + 1, j + 1, values[i, j]) for i in range(K) for j in range(K)),
    )


def write_grid(path: str, coeffs, modes, n_r: int, n_theta: int, field_fn: Callable | None = None) -> str:
    r = np.linspace(0.0, 1.0, n_r)
    th = np.arange(n_theta) * (2.0 * math.pi / n_theta)
    rr, tt = np.meshgrid(r, th, indexing="ij")
    vals = field_fn(rr, tt) if field_fn is not None else synthesize(coeffs, modes, rr, tt)
    vals = np.broadcast_to(vals, rr.shape)
    xx, yy = rr * np.cos(tt), rr * np.sin(tt)
    rows = zip(rr.ravel(), tt.ravel(), xx.ravel(), yy.ravel(), vals.ravel())
    return write_csv(path, ["r", "theta", "x", "y", "value"], rows)


def write_config(path: str, cfg) -> str:
    with open(path, "w") as fh:
        for f in dataclasses.fields(cfg):
            v = getattr(cfg, f.name)
            if isinstance(v, bool):
                s = "true" if v else "false"
            elif isinstance(v, float):
                s = fmt(v)
            elif v is None:
                s = "none"
            else:
                s = str(v)
            fh.write(f"{f.name}={s}\n")
    return path


def write_outputs(out: ExperimentOutcome, out_dir: str) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    cfg = out.config
    j = lambda name: os.path.join(out_dir, name)
    res = out.result
    f_field, g_field = source_fields(cfg.preset, out.modes)
    files = [
        write_config(j("config.txt"), cfg),
        write_modes(j("modes.csv"), out.modes),
        write_sensors(j("sensors.csv"), out.sensors),
        write_vector(j("data_expectation.csv"), "sensor", out.data.Ehat),
        write_matrix(j("data_covariance.csv"), out.data.Chat),
        write_grid(j("truth_f.csv"), None, out.modes, cfg.grid_r, cfg.grid_theta, f_field),
        write_grid(j("truth_g.csv"), None, out.modes, cfg.grid_r, cfg.grid_theta, g_field),
        write_grid(j("recon_f.csv"), res.f_hat, out.modes, cfg.grid_r, cfg.grid_theta),
        write_grid(j("recon_g.csv"), np.abs(res.g_hat), out.modes, cfg.grid_r, cfg.grid_theta,
                   lambda r, t: np.abs(synthesize(res.g_hat, out.modes, r, t))),
        write_csv(
            j("results.csv"),
            ["experiment", "gamma_f", "gamma_g", "rel_err_f", "rel_err_g_abs", "iterations",
             "truncation_f", "truncation_g_abs"],
            [(cfg.preset + ("" if cfg.domain == "full" else cfg.domain),
              cfg.gamma_f if cfg.domain != "full" else None,
              cfg.gamma_g if cfg.domain != "full" else None,
              res.rel_err_f, res.rel_err_g_abs, res.iterations, out.truncation_f, out.truncation_g)],
        ),
        write_csv(
            j("residuals.csv"),
            ["iteration", "frobenius_residual", "step_norm"],
            ((i, rnorm, res.step_history[i - 1] if i > 0 else None)
             for i, rnorm in enumerate(res.residual_history)),
        ),
    ]
    return files
