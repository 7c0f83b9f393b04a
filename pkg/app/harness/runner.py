import itertools
import json
import logging
import os
from multiprocessing import Pool
from typing import Callable, Dict, List, Optional, Tuple

import numpy
import pandas

from app.cauchy.cauchy_algebra import tabulate
from app.config import Config
from app.diagnostics.channels import channel_experiment, make_channel_data
from app.diagnostics.scattering import core_decay, degree_in_cone, scattering_metrics, track_projection_coefficients
from app.diagnostics.spectral import spectral_check
from app.evolver.grid import RadialGrid
from app.evolver.state import Form
from app.evolver.waveEvolver import PsiModel, UModel, evolve, make_initial_data
from app.harmonic.harmonicMap import fit_alpha, harmonic_energy, shoot
from app.harness.config_parser import ConfigParser, ExperimentConfig
from app.harness.persistence import RunManifest, RunWriter, utc_now

logger = logging.getLogger(__name__)


def run_directory(config: ExperimentConfig, output_root: Optional[str] = None) -> str:
    root = output_root or Config.output_root()
    name = config.output_dir or f"{config.kind}-{config.config_hash()[:12]}"
    return name if os.path.isabs(name) else os.path.join(root, name)


def _tabulate(config: ExperimentConfig, writer: RunWriter) -> Dict:
    dims = range(config.get("dims.min"), config.get("dims.max") + 1)
    table = tabulate(dims)
    writer.write_csv("coefficients.csv", table)
    residuals = table[table.family.str.startswith("residual:")]
    failures = int((residuals.numerator != 0).sum())
    return {"dims": [d for d in dims if d % 2], "identity_failures": failures}


def _shoot(config: ExperimentConfig, writer: RunWriter) -> Dict:
    profile = shoot(config.get("ell"), config.get("n"), s_max=config.get("s_max"))
    writer.write_csv("profile.csv", profile.table())
    summary = profile.header()
    fit = fit_alpha(profile)
    summary.update(
        alphaFit=fit.alpha, correction=fit.correction, predictedCorrection=fit.predicted_correction,
        energy=harmonic_energy(profile),
    )
    writer.write_json("profile.json", summary)
    return summary


def _evolve(config: ExperimentConfig, writer: RunWriter) -> Dict:
    ell, degree = config.get("ell"), config.get("degree")
    form = Form(config.get("form"))
    grid_config = config.grid()
    grid = RadialGrid(r_max=grid_config.r_max, npoints=grid_config.npoints)
    profile = shoot(ell, degree)
    state = make_initial_data(ell, degree, profile, config.perturbation(), grid, form)
    model = PsiModel.from_profile(profile, grid) if form == Form.PSI else UModel.from_profile(profile, grid)
    probes = config.probes()
    result = evolve(state, config.get("T"), model, probes, cfl=config.get("cfl"))

    writer.write_csv("ledger.csv", result.ledger.to_frame())
    writer.write_csv("channels.csv", result.ledger.channel_frame())
    metrics = scattering_metrics(result, profile, probes.radii[0])
    writer.write_csv("scattering.csv", metrics)
    tracks = track_projection_coefficients(result.snapshots, probes.radii, profile)
    writer.write_csv("projection.csv", tracks.frame)
    for i, checkpoint in enumerate(result.checkpoints):
        writer.write_bytes(f"checkpoints/checkpoint_{i:04d}.bin", checkpoint.to_bytes())

    # the pinned outer node always holds Q(r_max); read the degree where the evolved field lives
    readings = [degree_in_cone(snapshot, profile) for snapshot in result.snapshots]
    readings = [reading for reading in readings if reading is not None]
    degree_conserved = bool(readings) and all(reading == degree for reading in readings)
    summary = {
        "ell": ell,
        "n": degree,
        "amplitude": config.get("perturbation.amplitude"),
        "energy_drift": result.ledger.max_relative_drift(),
        "core_initial": float(metrics.core_norm.iloc[0]),
        "core_final": float(metrics.core_norm.iloc[-1]),
        "core_decay": core_decay(metrics),
        "degree_conserved": bool(degree_conserved),
        "final_time": result.state.time,
    }
    writer.write_json("summary.json", summary)
    return summary


def _channels(config: ExperimentConfig, writer: RunWriter) -> Dict:
    d, R, T = config.get("dim"), config.get("R"), config.get("T")
    kind = config.get("data")
    rng = numpy.random.default_rng(config.seed)
    samples = config.get("samples") if kind == "random" else 1
    series_rows, summary_rows = [], []
    for sample in range(samples):
        report = channel_experiment(d, R, make_channel_data(kind, d, R, rng), T)
        for t, plus, minus in zip(report.times, report.exterior_plus, report.exterior_minus):
            series_rows.append((sample, t, plus, minus))
        summary_rows.append(
            (sample, report.initial_exterior, report.limit_plus, report.limit_minus, report.perp_norm_sq,
             report.proj_norm_sq, report.ratio, report.plateau_flagged)
        )
    writer.write_csv("exterior_energy.csv", pandas.DataFrame(series_rows, columns=["sample", "t", "exterior_plus", "exterior_minus"]))
    frame = pandas.DataFrame(
        summary_rows,
        columns=["sample", "initial_exterior", "limit_plus", "limit_minus", "perp_norm_sq", "proj_norm_sq", "ratio", "plateau_flagged"],
    )
    writer.write_csv("channel_summary.csv", frame)
    ratios = frame.ratio.dropna()
    return {"dim": d, "R": R, "samples": samples, "min_ratio": float(ratios.min()) if len(ratios) else None}


def _spectral(config: ExperimentConfig, writer: RunWriter) -> Dict:
    ell, degree = config.get("ell"), config.get("degree")
    grid_config = config.grid()
    grid = RadialGrid(r_max=grid_config.r_max, npoints=grid_config.npoints)
    profile = shoot(ell, degree)
    check = spectral_check(profile, grid, n_probes=config.get("probes.count"), seed=config.seed)
    payload = check.model_dump()
    writer.write_json("spectral.json", payload)
    return payload


def _sweep_cell(job: Tuple[ExperimentConfig, str]) -> Dict:
    cell, root = job
    row = {"ell": cell.get("ell"), "n": cell.get("degree"), "amplitude": cell.get("perturbation.amplitude"),
           "config_hash": cell.config_hash(), "status": "ok", "error": ""}
    try:
        manifest = run(cell, output_root=root)
        summary_path = os.path.join(root, manifest.run_id, "summary.json")
        with open(summary_path) as handle:
            summary = json.load(handle)
        for key in ("core_initial", "core_final", "core_decay", "energy_drift", "degree_conserved"):
            row[key] = summary[key]
    except Exception as e:
        logger.error(f"Sweep cell l={row['ell']} n={row['n']} amplitude={row['amplitude']} failed: {e}")
        row.update(status="failed", error=str(e))
    return row


def sweep_cells(config: ExperimentConfig) -> List[ExperimentConfig]:
    """One evolve config per (l, n, amplitude), deduplicated by config hash."""
    base = {spec.key: config.get(spec.key) for spec in Config.params_for_kind("evolve")
            if spec.key not in ("kind", "seed", "output.dir")}
    cells: Dict[str, ExperimentConfig] = {}
    for ell, degree, amplitude in itertools.product(
        config.get("sweep.ell"), config.get("sweep.degree"), config.get("sweep.amplitude")
    ):
        params = dict(base, ell=ell, degree=degree, **{"perturbation.amplitude": amplitude})
        cell = ConfigParser.from_values("evolve", params, seed=config.seed)
        cell = cell.model_copy(update={"output_dir": f"cell-{cell.config_hash()[:12]}"})
        cells.setdefault(cell.config_hash(), cell)
    return list(cells.values())


def _sweep(config: ExperimentConfig, writer: RunWriter) -> Dict:
    cells = sweep_cells(config)
    jobs = [(cell, writer.directory) for cell in cells]
    workers = min(config.get("sweep.workers"), len(jobs))
    logger.info(f"Sweep over {len(jobs)} cells with {workers} worker(s)")
    if workers > 1:
        with Pool(workers) as pool:
            rows = pool.map(_sweep_cell, jobs)
    else:
        rows = [_sweep_cell(job) for job in jobs]
    frame = pandas.DataFrame(rows)
    writer.write_csv("sweep.csv", frame)
    return {"cells": len(rows), "failed": int((frame.status != "ok").sum())}


KIND_HANDLERS: Dict[str, Callable[[ExperimentConfig, RunWriter], Dict]] = {
    "tabulate-coefficients": _tabulate,
    "shoot": _shoot,
    "evolve": _evolve,
    "channels": _channels,
    "spectral": _spectral,
    "sweep": _sweep,
}


def run(config: ExperimentConfig, output_root: Optional[str] = None) -> RunManifest:
    """
    Dispatches ``config`` to its experiment, writing every output atomically and the
    manifest last. On failure the partial outputs are removed and the error propagates.
    """
    directory = run_directory(config, output_root)
    run_id = os.path.basename(os.path.normpath(directory))
    started_at = utc_now()
    logger.info(f"Run {run_id} ({config.kind}) started, writing to {directory}")
    writer = RunWriter(directory)
    try:
        writer.write_bytes("config.cfg", config.to_text().encode())
        KIND_HANDLERS[config.kind](config, writer)
    except Exception as e:
        logger.error(f"Run {run_id} failed: {e}")
        writer.discard()
        raise
    manifest = RunManifest(
        run_id=run_id,
        kind=config.kind,
        config_hash=config.config_hash(),
        tool_version=Config.tool_version,
        started_at=started_at,
        finished_at=utc_now(),
        config=config.to_text(),
        files=sorted(writer.files, key=lambda f: f.path),
    )
    writer.write_manifest(manifest)
    logger.info(f"Run {run_id} finished with {len(manifest.files)} file(s)")
    return manifest


def sweep(config: ExperimentConfig, output_root: Optional[str] = None) -> RunManifest:
    if config.kind != "sweep":
        raise ValueError(f"sweep needs a sweep config, got kind '{config.kind}'")
    return run(config, output_root)
