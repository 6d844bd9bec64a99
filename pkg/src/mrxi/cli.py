"""Command-line driver.

Settings are resolved as built-in defaults, then the ``--config`` JSON file,
then explicit flags (flags win). Exit codes: 0 ok, 2 configuration error,
3 numerical failure, 4 I/O error. ``MRXI_THREADS`` caps BLAS threads.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError
from threadpoolctl import threadpool_limits

from .config import ExperimentConfig, dump_config, load_config, with_overrides
from .fileio import ContainerError, read_vector_csv, write_json, write_vector_csv
from .forward import DensityField, load_operator, save_operator
from .forward import simulate as simulate_data
from .geometry import DegenerateGeometryError
from .metrics import evaluate
from .phantoms import PhantomSpec, export_pgm, rasterize
from .pipeline import (
    PipelineError,
    build_operator,
    grids,
    layout,
    layout_dict,
    operator_norm,
    render_report,
    run_experiment,
)
from .signal import Measurement, ZeroSignalError, add_gaussian_noise, load_measurement, save_measurement
from .solvers import AdmmParams, solve_bregman, solve_tikhonov, solve_tv_admm

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

# flag dest -> dotted config key
_OVERRIDES = {
    "output_dir": "output_dir",
    "standoff": "domain.standoff",
    "coil_mode": "coils.mode",
    "coil_seed": "coils.seed",
    "coils_per_side": "coils.per_side",
    "sensors_per_side": "sensors.per_side",
    "sim_grid": "grids.simulation",
    "rec_grid": "grids.reconstruction",
    "snr_db": "noise.snr_db",
    "noise_seed": "noise.seed",
    "forward_model": "forward_model",
    "allow_inverse_crime": "allow_inverse_crime",
}


def _add_config_flags(p):
    p.add_argument("--config", type=Path, help="experiment config JSON")
    g = p.add_argument_group("overrides (take precedence over --config)")
    g.add_argument("--output-dir")
    g.add_argument("--standoff", type=float)
    g.add_argument("--coil-mode", choices=["aligned", "randomized"])
    g.add_argument("--coil-seed", type=int)
    g.add_argument("--coils-per-side", type=int)
    g.add_argument("--sensors-per-side", type=int)
    g.add_argument("--sim-grid", type=int, nargs=2, metavar=("NY", "NX"))
    g.add_argument("--rec-grid", type=int, nargs=2, metavar=("NY", "NX"))
    g.add_argument("--snr-db", type=float)
    g.add_argument("--no-noise", action="store_true", help="disable measurement noise")
    g.add_argument("--noise-seed", type=int)
    g.add_argument("--forward-model", choices=["dipole", "identity"])
    g.add_argument("--allow-inverse-crime", action="store_true", default=None)
    g.add_argument("--phantom", action="append", choices=["p_shape", "shepp_logan", "tumor"],
                   help="phantom kind (repeatable); replaces the configured list")


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    overrides = {key: getattr(args, dest, None) for dest, key in _OVERRIDES.items()}
    if getattr(args, "phantom", None):
        overrides["phantoms"] = [{"kind": k} for k in args.phantom]
    cfg = with_overrides(cfg, overrides)
    if getattr(args, "no_noise", False):
        cfg = with_overrides(cfg, {"noise": {"snr_db": None, "seed": cfg.noise.seed}})
    return cfg


def cmd_layout(args):
    cfg = resolve_config(args)
    coils, sensors = layout(cfg)
    out = Path(args.out or Path(cfg.output_dir) / "layout.json")
    write_json(out, layout_dict(coils, sensors))
    print(f"{len(coils)} activations, {len(sensors)} sensors -> {out}")


def cmd_assemble(args):
    cfg = resolve_config(args)
    coils, sensors = layout(cfg)
    fine, coarse = grids(cfg)
    grid = fine if args.grid == "simulation" else coarse
    op = build_operator(cfg, coils, sensors, grid)
    out = Path(args.out or Path(cfg.output_dir) / "operator.bin")
    save_operator(out, op)
    print(f"K {op.shape[0]}x{op.shape[1]} -> {out}")


def cmd_simulate(args):
    cfg = resolve_config(args)
    coils, sensors = layout(cfg)
    fine, coarse = grids(cfg)
    kind = args.phantom[0] if args.phantom else cfg.phantoms[0].kind
    ph = next((p for p in cfg.phantoms if p.kind == kind), None)
    spec = PhantomSpec(kind, tuple(s.model_dump() for s in ph.shapes) if ph else ())
    truth = rasterize(spec, fine)
    if cfg.forward_model == "identity":
        clean = truth.flat.copy()
    else:
        clean = simulate_data(coils, sensors, fine, truth, cfg.langevin)
    if cfg.noise.snr_db is None:
        meas = Measurement(clean.copy(), clean)
    else:
        meas = add_gaussian_noise(clean, cfg.noise.snr_db, cfg.noise.seed)
    out = Path(args.out or Path(cfg.output_dir) / f"{kind}.csv")
    fmt = "bin" if out.suffix == ".bin" else "csv"
    paths = save_measurement(out, meas, fmt)
    print(f"{meas.data.size} measurements -> {paths[0]}")


def cmd_reconstruct(args):
    op = load_operator(args.operator)
    meas = load_measurement(args.data)
    K = op.matrix
    scale = operator_norm(K) if args.normalize else 1.0
    Kn, g = K / scale, meas.data / scale
    params = AdmmParams(alpha=args.alpha, rho=args.rho, max_iter=args.max_iter, tol_primal=args.tol,
                        tol_dual=args.tol, flavor=args.flavor, monitor_every=args.monitor_every)
    shape = op.grid.shape
    if args.method == "tikhonov":
        rep = solve_tikhonov(Kn, g, args.alpha, not args.no_positivity, params)
    elif args.method == "tv":
        rep = solve_tv_admm(Kn, g, params, shape)
    else:
        noise = None if args.noise_level is None else args.noise_level / scale
        rep = solve_bregman(Kn, g, args.alpha, params, noise, args.tau, args.max_outer, shape)
    out = Path(args.out)
    write_vector_csv(out, rep.c)
    if op.grid.ndim == 2:
        export_pgm(out.with_suffix(".pgm"), DensityField(op.grid, rep.c.reshape(shape)))
    d = rep.to_dict(include_timing=False)
    d["params"]["operator_scale"] = scale
    write_json(out.with_suffix(".report.json"), d)
    print(f"{rep.method}: {rep.termination} after {rep.iterations} iterations -> {out}")


def cmd_evaluate(args):
    recon = read_vector_csv(args.recon)
    truth = read_vector_csv(args.truth)
    shape = tuple(args.shape) if args.shape else (int(round(np.sqrt(truth.size))),) * 2
    if int(np.prod(shape)) != truth.size:
        raise ValueError(f"cannot reshape {truth.size} values to {shape}; pass --shape")
    ev = evaluate(recon.reshape(shape), truth.reshape(shape), args.misfit or 0.0, args.label, "", "",
                  dynamic_range=args.dynamic_range)
    text = json.dumps(ev.to_dict(), indent=2, sort_keys=True)
    if args.out:
        write_json(args.out, ev.to_dict())
    print(text)


def cmd_run(args):
    cfg = resolve_config(args)
    manifest = run_experiment(cfg)
    print(f"{len(manifest['artifacts'])} artifacts -> {Path(cfg.output_dir) / 'manifest.json'}")
    table = Path(cfg.output_dir) / "ssim_table.csv"
    if table.exists():
        print(table.read_text(), end="")


def cmd_report(args):
    *_, text = render_report(args.runs)
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")


def cmd_show_config(args):
    print(dump_config(resolve_config(args)), end="")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mrxi", description="Magnetorelaxometry imaging experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("layout", help="write coil and sensor positions")
    _add_config_flags(s)
    s.add_argument("--out")
    s.set_defaults(func=cmd_layout)

    s = sub.add_parser("assemble", help="assemble and save the forward operator")
    _add_config_flags(s)
    s.add_argument("--grid", choices=["reconstruction", "simulation"], default="reconstruction")
    s.add_argument("--out")
    s.set_defaults(func=cmd_assemble)

    s = sub.add_parser("simulate", help="simulate noisy measurements of a phantom on the fine grid")
    _add_config_flags(s)
    s.add_argument("--out", help="output path (.csv or .bin)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("reconstruct", help="solve for a density from a saved operator and data")
    s.add_argument("--operator", required=True, type=Path)
    s.add_argument("--data", required=True, type=Path)
    s.add_argument("--method", choices=["tikhonov", "tv", "bregman"], default="tv")
    s.add_argument("--alpha", type=float, required=True)
    s.add_argument("--rho", type=float, default=1e-4)
    s.add_argument("--max-iter", type=int, default=1000)
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--flavor", choices=["anisotropic", "isotropic"], default="anisotropic")
    s.add_argument("--monitor-every", type=int, default=100)
    s.add_argument("--no-positivity", action="store_true", help="Tikhonov only")
    s.add_argument("--no-normalize", dest="normalize", action="store_false",
                   help="skip scaling K and g by the spectral norm of K")
    s.add_argument("--noise-level", type=float, help="Bregman: ||noise|| for the discrepancy stop")
    s.add_argument("--tau", type=float, default=1.02)
    s.add_argument("--max-outer", type=int, default=20)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("evaluate", help="SSIM and relative error of a reconstruction")
    s.add_argument("--recon", required=True, type=Path)
    s.add_argument("--truth", required=True, type=Path)
    s.add_argument("--shape", type=int, nargs=2, metavar=("NY", "NX"))
    s.add_argument("--dynamic-range", type=float)
    s.add_argument("--misfit", type=float)
    s.add_argument("--label", default="")
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("run", help="run the full experiment")
    _add_config_flags(s)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("report", help="re-render the best-SSIM table from run directories")
    s.add_argument("runs", nargs="+", type=Path)
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("config", help="print the resolved config")
    _add_config_flags(s)
    s.set_defaults(func=cmd_show_config)
    return p


def _thread_limit():
    n = os.environ.get("MRXI_THREADS")
    if not n:
        return contextlib.nullcontext()
    return threadpool_limits(limits=int(n))


_NUMERIC = (DegenerateGeometryError, ZeroSignalError, FloatingPointError, np.linalg.LinAlgError, ArithmeticError)
_IO = (OSError, ContainerError)
_CONFIG = (ValidationError, json.JSONDecodeError, ValueError, KeyError)


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, PipelineError):
        return exit_code_for(exc.cause)
    if isinstance(exc, _NUMERIC):
        return EXIT_NUMERIC
    if isinstance(exc, _IO):
        return EXIT_IO
    if isinstance(exc, _CONFIG):
        return EXIT_CONFIG
    return EXIT_NUMERIC


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        with _thread_limit():
            args.func(args)
    except Exception as exc:  # noqa: BLE001 - mapped to an exit code
        code = exit_code_for(exc)
        print(f"mrxi: error: {exc}", file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
