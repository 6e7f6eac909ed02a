"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import os
import sys
import typing

import numpy as np

from .experiment import (
    ExperimentConfig,
    ExperimentError,
    build_sensors,
    build_source,
    run_experiment,
    source_fields,
    write_config,
    write_csv,
    write_grid,
    write_matrix,
    write_modes,
    write_vector,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ConfigError(ValueError):
    pass


def _field_types() -> dict[str, type]:
    hints = typing.get_type_hints(ExperimentConfig)
    out = {}
    for f in dataclasses.fields(ExperimentConfig):
        t = hints[f.name]
        args = [a for a in typing.get_args(t) if a is not type(None)]
        out[f.name] = args[0] if args else t
    return out


def _parse_value(key: str, raw: str, kind: type):
    raw = raw.strip()
    if raw.lower() in ("none", "") and kind in (int, float):
        return None
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def read_config_file(path: str) -> dict:
    """Flat ``key=value`` file; ``#`` starts a comment."""
    types_ = _field_types()
    values = {}
    try:
        fh = open(path)
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    with fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, raw = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in types_:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _parse_value(key, raw, types_[key])
    return values


_FLAG_KEYS = {
    "preset": "preset",
    "domain": "domain",
    "seed": "seed",
    "noise": "noise",
    "gamma_f": "gamma_f",
    "gamma_g": "gamma_g",
    "data_mode": "data_mode",
    "realizations": "realizations",
}


def resolve_config(args) -> ExperimentConfig:
    values = read_config_file(args.config) if getattr(args, "config", None) else {}
    for attr, key in _FLAG_KEYS.items():
        v = getattr(args, attr, None)
        if v is not None:
            values[key] = v
    try:
        return ExperimentConfig(**values).resolved()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="key=value configuration file")
    p.add_argument("--preset", choices=["e1", "e2"])
    p.add_argument("--domain", choices=["full", "a", "b", "c"])
    p.add_argument("--seed", type=int)
    p.add_argument("--out", metavar="DIR", default="out")
    p.add_argument("--noise", type=float, help="relative noise level delta")
    p.add_argument("--gamma-f", dest="gamma_f", type=float)
    p.add_argument("--gamma-g", dest="gamma_g", type=float)
    p.add_argument("--data-mode", dest="data_mode", choices=["empirical", "analytic"])
    p.add_argument("--realizations", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sfdeinv",
        description="Simulate a stochastic time-fractional diffusion equation on the unit disk "
        "and reconstruct its sources from final-time moments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("spectrum", help="write the Dirichlet eigenmodes (modes.csv)")
    _add_common(p)
    p = sub.add_parser("simulate", help="Monte Carlo moments of the final-time coefficients")
    _add_common(p)
    p = sub.add_parser("invert", help="reconstruct sources from data files")
    _add_common(p)
    p.add_argument("--data", metavar="DIR", help="directory holding data_expectation.csv and "
                   "data_covariance.csv (defaults to --out)")
    p = sub.add_parser("experiment", help="full pipeline: data, inversion, error report")
    _add_common(p)
    p = sub.add_parser("selftest", help="run the reduced invariant suites")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _load_vector(path: str) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([float(r[1]) for r in rows[1:]])


def _load_matrix(path: str) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    K = max(int(r[0]) for r in rows)
    C = np.zeros((K, K))
    for r in rows:
        C[int(r[0]) - 1, int(r[1]) - 1] = float(r[2])
    return C


def cmd_spectrum(cfg: ExperimentConfig, out: str) -> None:
    from .disk_spectrum import build_eigensystem, make_quadrature

    os.makedirs(out, exist_ok=True)
    modes = build_eigensystem(cfg.n_modes, make_quadrature(cfg.quad_r, cfg.quad_theta))
    write_config(os.path.join(out, "config.txt"), cfg)
    write_modes(os.path.join(out, "modes.csv"), modes)


def cmd_simulate(cfg: ExperimentConfig, out: str) -> None:
    from .disk_spectrum import build_eigensystem, make_quadrature
    from .sfde_forward import analytic_moments, kernel_gram, simulate_ensemble

    os.makedirs(out, exist_ok=True)
    quad = make_quadrature(cfg.quad_r, cfg.quad_theta)
    modes = build_eigensystem(cfg.n_modes, quad)
    source = build_source(cfg, modes, quad)
    sim = cfg.sim_config()
    gram = kernel_gram(sim, modes, source.h)
    if cfg.data_mode == "analytic":
        mom = analytic_moments(source, gram)
    else:
        mom = simulate_ensemble(source, sim, gram)
    write_config(os.path.join(out, "config.txt"), cfg)
    write_modes(os.path.join(out, "modes.csv"), modes)
    write_vector(os.path.join(out, "moments_expectation.csv"), "n", mom.expectation)
    write_matrix(os.path.join(out, "moments_covariance.csv"), mom.covariance)


def cmd_invert(cfg: ExperimentConfig, out: str, data_dir: str) -> None:
    from .acquisition import CovarianceOperator, expectation_matrix
    from .disk_spectrum import build_eigensystem, make_quadrature
    from .inversion import LMConfig, TikhonovConfig, closed_form_full, lm_reconstruct, rel_l2_error, tikhonov_solve
    from .sfde_forward import ConstantProfile, ModeMoments, kernel_gram

    try:
        E = _load_vector(os.path.join(data_dir, "data_expectation.csv"))
        C = _load_matrix(os.path.join(data_dir, "data_covariance.csv"))
    except (OSError, ValueError, IndexError) as exc:
        raise ConfigError(f"cannot read data files in {data_dir}: {exc}") from None
    C = 0.5 * (C + C.T)
    quad = make_quadrature(cfg.quad_r, cfg.quad_theta)
    modes = build_eigensystem(cfg.n_modes, quad)
    gram = kernel_gram(cfg.sim_config(), modes, ConstantProfile(cfg.h_const))
    sensors = build_sensors(cfg, modes)
    if E.size != sensors.K or C.shape != (sensors.K, sensors.K):
        raise ConfigError(f"data has {E.size} sensors, configuration expects {sensors.K}")
    iters, hist, steps = 0, [], []
    if cfg.domain == "full":
        f_hat, g_hat = closed_form_full(ModeMoments(E, C), gram, cfg.n0)
    else:
        f_hat = tikhonov_solve(expectation_matrix(sensors, gram), E, TikhonovConfig(cfg.gamma_f))
        lm = lm_reconstruct(
            CovarianceOperator(sensors, gram),
            C,
            LMConfig(cfg.gamma_g, cfg.lm_max_iter, cfg.lm_step_tol, cfg.lm_init, cfg.n0, cfg.trust_region),
        )
        g_hat, iters, hist, steps = lm.g, lm.iterations, lm.residual_history, lm.step_history
    f_field, g_field = source_fields(cfg.preset, modes)
    err_f = rel_l2_error(f_field, f_hat, modes, quad)
    err_g = rel_l2_error(g_field, g_hat, modes, quad, absolute=True)
    os.makedirs(out, exist_ok=True)
    write_config(os.path.join(out, "config.txt"), cfg)
    write_vector(os.path.join(out, "f_hat.csv"), "n", f_hat)
    write_vector(os.path.join(out, "g_hat.csv"), "n", g_hat)
    write_grid(os.path.join(out, "recon_f.csv"), f_hat, modes, cfg.grid_r, cfg.grid_theta)
    full = cfg.domain == "full"
    write_csv(
        os.path.join(out, "results.csv"),
        ["experiment", "gamma_f", "gamma_g", "rel_err_f", "rel_err_g_abs", "iterations"],
        [(cfg.preset + ("" if full else cfg.domain), None if full else cfg.gamma_f,
          None if full else cfg.gamma_g, err_f, err_g, iters)],
    )
    write_csv(
        os.path.join(out, "residuals.csv"),
        ["iteration", "frobenius_residual", "step_norm"],
        ((i, r, steps[i - 1] if i > 0 else None) for i, r in enumerate(hist)),
    )
    print(f"rel_err_f={err_f:.6g} rel_err_g_abs={err_g:.6g} iterations={iters}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK

    if args.command == "selftest":
        from .selftest import run_selftest

        return EXIT_OK if run_selftest(seed=args.seed) else EXIT_NUMERIC

    try:
        cfg = resolve_config(args)
        if args.command == "spectrum":
            cmd_spectrum(cfg, args.out)
        elif args.command == "simulate":
            cmd_simulate(cfg, args.out)
        elif args.command == "invert":
            cmd_invert(cfg, args.out, args.data or args.out)
        else:
            out = run_experiment(cfg, args.out)
            r = out.result
            print(f"rel_err_f={r.rel_err_f:.6g} rel_err_g_abs={r.rel_err_g_abs:.6g} "
                  f"iterations={r.iterations}")
    except ConfigError as exc:
        print(f"sfdeinv: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ExperimentError as exc:
        print(f"sfdeinv: numerical failure in stage {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ArithmeticError, RuntimeError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"sfdeinv: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
