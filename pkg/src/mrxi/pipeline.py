"""End-to-end experiment driver: layout, simulation, reconstruction, evaluation."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, dump_config
from .fileio import atomic_write_text, sha256_file, write_json, write_vector_csv
from .forward import DensityField, ForwardOperator, assemble_operator, default_ids, save_operator, simulate
from .geometry import DipoleActivation, Domain, PixelGrid, SensorSpec
from .metrics import EvaluationResult, evaluate, ssim_table, table_csv, write_table
from .phantoms import PhantomSpec, export_pgm, rasterize, resample
from .signal import Measurement, add_gaussian_noise, save_measurement
from .solvers import (
    AdmmParams,
    prepare_tikhonov_system,
    prepare_tv_system,
    solve_bregman,
    solve_tikhonov,
    solve_tv_admm,
)

log = logging.getLogger(__name__)

# outward normal, start corner and walking direction of each side (counter-clockwise)
_SIDES = (
    ("bottom", (0.0, -1.0), (0.0, 0.0), (1.0, 0.0)),
    ("right", (1.0, 0.0), (1.0, 0.0), (0.0, 1.0)),
    ("top", (0.0, 1.0), (1.0, 1.0), (-1.0, 0.0)),
    ("left", (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)),
)


class PipelineError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


def _side_positions(cfg: ExperimentConfig, count: int, standoff: float):
    lo = np.array(cfg.domain.lower)
    hi = np.array(cfg.domain.upper)
    ext = hi - lo
    t = (np.arange(count) + 0.5) / count
    out = []
    for name, normal, corner, direction in _SIDES:
        n = np.array(normal)
        start = lo + np.array(corner) * ext
        d = np.array(direction)
        length = float(np.abs(d) @ ext)
        for ti in t:
            p = start + d * ti * length + n * standoff
            out.append((name, np.array([p[0], p[1], 0.0]), np.array([n[0], n[1], 0.0])))
    return out


def layout(cfg: ExperimentConfig):
    """Coils and sensors evenly spaced on the four sides of the square.

    Sensors always point inward. Coils point inward (``aligned``) or along an
    angle drawn uniformly from [0, 2 pi) with ``coils.seed`` (``randomized``).
    """
    domain = Domain(tuple(cfg.domain.lower), tuple(cfg.domain.upper), cfg.domain.standoff)
    coils = []
    rng = np.random.Generator(np.random.PCG64(cfg.coils.seed))
    for _, pos, normal in _side_positions(cfg, cfg.coils.per_side, cfg.coil_standoff):
        if cfg.coils.mode == "aligned":
            eta = -normal
        else:
            theta = rng.uniform(0.0, 2.0 * np.pi)
            eta = np.array([math.cos(theta), math.sin(theta), 0.0])
        coils.append(DipoleActivation(pos, cfg.coils.moment * eta))
    sensors = [SensorSpec(pos, -normal) for _, pos, normal in _side_positions(cfg, cfg.sensors.per_side, cfg.sensor_standoff)]
    domain.check_outside([c.position for c in coils], "coil")
    domain.check_outside([s.position for s in sensors], "sensor")
    return coils, sensors


def layout_dict(coils, sensors) -> dict:
    return {
        "activations": [
            {"id": i, "position": c.position.tolist(), "moment": c.moment.tolist(), "scale": c.scale}
            for i, c in zip(default_ids("coil", len(coils)), coils)
        ],
        "sensors": [
            {"id": i, "position": s.position.tolist(), "orientation": s.orientation.tolist()}
            for i, s in zip(default_ids("sensor", len(sensors)), sensors)
        ],
    }


def grids(cfg: ExperimentConfig):
    lo, hi = tuple(cfg.domain.lower), tuple(cfg.domain.upper)
    return (
        PixelGrid(tuple(cfg.grids.simulation[::-1]), lo, hi),
        PixelGrid(tuple(cfg.grids.reconstruction[::-1]), lo, hi),
    )


def operator_norm(K, iters=500, rtol=1e-12) -> float:
    """Largest singular value by power iteration from a fixed start (deterministic)."""
    x = np.ones(K.shape[1]) / math.sqrt(K.shape[1])
    est = 0.0
    for _ in range(iters):
        y = K.T @ (K @ x)
        new = math.sqrt(float(np.linalg.norm(y)))
        x = y / np.linalg.norm(y)
        if abs(new - est) <= rtol * new:
            est = new
            break
        est = new
    return est


def build_operator(cfg: ExperimentConfig, coils, sensors, grid: PixelGrid) -> ForwardOperator:
    if cfg.forward_model == "identity":
        n = grid.n_cells
        return ForwardOperator(np.eye(n), ["identity"], default_ids("cell", n), grid, False, {"stub": "identity"})
    return assemble_operator(coils, sensors, grid, cfg.langevin)


@dataclass
class Artifacts:
    root: Path
    entries: list = field(default_factory=list)

    def add(self, path, kind):
        path = Path(path)
        self.entries.append({"path": path.relative_to(self.root).as_posix(), "kind": kind})
        return path


def _solve(method, K, g, alpha, shape, systems, noise_level):
    params = AdmmParams(alpha=alpha, rho=method.rho, max_iter=method.max_iter, tol_primal=method.tol,
                        tol_dual=method.tol, flavor=method.flavor, monitor_every=method.monitor_every)
    if method.name == "tikhonov":
        key = ("tikhonov",)
        if key not in systems:
            systems[key] = prepare_tikhonov_system(K)
        return solve_tikhonov(K, g, alpha, method.positivity, params, systems[key])
    key = ("tv", method.rho)
    if key not in systems:
        systems[key] = prepare_tv_system(K, shape, method.rho)
    if method.name == "tv":
        return solve_tv_admm(K, g, params, shape, systems[key])
    return solve_bregman(K, g, alpha, params, noise_level, method.tau, method.max_outer, shape,
                         system=systems[key])


def run_experiment(cfg: ExperimentConfig, output_dir=None) -> dict:
    """Run every stage and write artifacts plus ``manifest.json``; returns the manifest.

    Output files are deterministic for a given config. Wall-clock timings go
    to ``timings.json``, which is deliberately left out of the manifest.
    """
    root = Path(output_dir or cfg.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    art = Artifacts(root)
    timings = {}
    results = []
    stage = "config"
    status = "ok"
    failure = None

    def tick(name, t0):
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0

    try:
        atomic_write_text(root / "config.json", dump_config(cfg))
        art.add(root / "config.json", "config")

        stage = "layout"
        t0 = time.perf_counter()
        coils, sensors = layout(cfg)
        write_json(art.add(root / "layout.json", "layout"), layout_dict(coils, sensors))
        fine, coarse = grids(cfg)
        tick(stage, t0)

        stage = "assemble"
        t0 = time.perf_counter()
        op = build_operator(cfg, coils, sensors, coarse)
        scale = operator_norm(op.matrix) if cfg.normalize_operator else 1.0
        op.meta["normalization"] = scale
        if cfg.write_operator:
            save_operator(art.add(root / "operator.bin", "operator"), op)
        K = op.matrix / scale
        tick(stage, t0)

        systems = {}
        for ph in cfg.phantoms:
            spec = PhantomSpec(ph.kind, tuple(s.model_dump() for s in ph.shapes))
            pdir = root / ph.kind

            stage = f"simulate:{ph.kind}"
            t0 = time.perf_counter()
            truth_fine = rasterize(spec, fine)
            truth = resample(truth_fine, coarse)
            if cfg.forward_model == "identity":
                clean = truth_fine.flat.copy()
            else:
                clean = simulate(coils, sensors, fine, truth_fine, cfg.langevin)
            if cfg.noise.snr_db is None:
                meas = Measurement(clean.copy(), clean)
            else:
                meas = add_gaussian_noise(clean, cfg.noise.snr_db, cfg.noise.seed)
            data = meas.data
            noise_level = float(np.linalg.norm(meas.noise))
            for fmt in ("csv", "bin"):
                for p in save_measurement(pdir / f"data.{fmt}", meas, fmt):
                    art.add(p, "measurement")
            export_pgm(art.add(pdir / "truth.pgm", "image"), truth)
            art.add(pdir / "truth.pgm.json", "image-sidecar")
            write_vector_csv(art.add(pdir / "truth.csv", "iterate"), truth.flat)
            tick("simulate", t0)

            g = data / scale
            for method in cfg.methods:
                for alpha in method.alphas:
                    stage = f"reconstruct:{ph.kind}:{method.name}:{alpha:g}"
                    t0 = time.perf_counter()
                    rep = _solve(method, K, g, alpha, coarse.shape, systems, noise_level / scale)
                    tick("reconstruct", t0)
                    rep.params["operator_scale"] = scale
                    rep.params["noise_norm"] = noise_level
                    tag = f"{method.name}_a{alpha:.3e}"
                    img = rep.c.reshape(coarse.shape)
                    write_vector_csv(art.add(pdir / f"{tag}.csv", "iterate"), rep.c)
                    export_pgm(art.add(pdir / f"{tag}.pgm", "image"), DensityField(coarse, img))
                    art.add(pdir / f"{tag}.pgm.json", "image-sidecar")
                    rd = rep.to_dict(include_timing=False)
                    rd["iterate"] = f"{tag}.csv"
                    write_json(art.add(pdir / f"{tag}.report.json", "report"), rd)
                    stage = f"evaluate:{ph.kind}:{method.name}:{alpha:g}"
                    misfit = float(np.linalg.norm(op.matrix @ rep.c - data))
                    ev = evaluate(img, truth.values, misfit, ph.kind, method.name, cfg.coils.mode, alpha)
                    results.append(ev)
                    log.info("%s %s alpha=%g ssim=%.4f (%s after %d)", ph.kind, method.name, alpha,
                             ev.ssim, rep.termination, rep.iterations)

        stage = "tables"
        write_json(art.add(root / "results.json", "results"), [r.to_dict() for r in results])
        methods, phantoms, rows = ssim_table(results)
        for p in write_table(root / "ssim_table", methods, phantoms, rows):
            art.add(p, "table")
        sweep = ["phantom,method,alpha,ssim,rel_l2,misfit"] + [
            f"{r.phantom},{r.method},{r.alpha!r},{r.ssim:.10f},{r.rel_l2:.10f},{r.misfit:.10e}" for r in results
        ]
        atomic_write_text(art.add(root / "sweep.csv", "table"), "\n".join(sweep) + "\n")
    except Exception as exc:  # noqa: BLE001 - recorded, then re-raised stage-tagged
        status = "failed"
        failure = {"stage": stage, "error": f"{type(exc).__name__}: {exc}"}
        log.error("stage %s failed: %s", stage, exc)
        manifest = _write_manifest(root, cfg, art, status, failure)
        write_json(root / "timings.json", timings)
        raise PipelineError(stage, exc) from exc

    manifest = _write_manifest(root, cfg, art, status, failure)
    write_json(root / "timings.json", timings)
    return manifest


def _write_manifest(root, cfg, art, status, failure):
    entries = []
    for e in sorted(art.entries, key=lambda e: e["path"]):
        p = root / e["path"]
        if p.exists():
            entries.append({**e, "sha256": sha256_file(p), "bytes": p.stat().st_size})
        else:
            entries.append({**e, "missing": True})
    manifest = {
        "name": cfg.name,
        "package_version": __version__,
        "status": status,
        "partial": status != "ok",
        "failure": failure,
        "artifacts": entries,
    }
    write_json(root / "manifest.json", manifest)
    return manifest


def render_report(manifest_paths) -> tuple:
    """Rebuild the best-SSIM table from one or more run directories' results."""
    results = []
    for mp in manifest_paths:
        mp = Path(mp)
        root = mp.parent if mp.is_file() else mp
        for r in json.loads((root / "results.json").read_text()):
            results.append(EvaluationResult(**r))
    methods, phantoms, rows = ssim_table(results)
    return methods, phantoms, rows, table_csv(methods, phantoms, rows)
