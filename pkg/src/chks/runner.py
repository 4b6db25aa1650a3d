"""Run orchestration and persistence for single runs and ensembles."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .attractor import absorbing_fit, envelope, run_ensemble
from .config import RunConfig, serialize
from .diagnostics import write_reports_csv
from .grid import write_snapshot
from .stepper import check_compatibility
from .trajectory import Trajectory, simulate

log = logging.getLogger(__name__)


class OutputError(OSError):
    pass


def git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def inputs_hash(cfg: RunConfig, base: Path) -> str:
    parts = [git_blob_hash(serialize(cfg).encode())]
    if cfg.init.mode == "files":
        for name in (cfg.init.phi_file, cfg.init.sigma_file):
            parts.append(git_blob_hash((base / name).read_bytes()))
    return git_blob_hash("\n".join(parts).encode())


def ensure_writable(directory: Path) -> None:
    try:
        directory.mkdir(parents=True, exist_ok=True)
        probe = directory / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise OutputError(f"output directory {directory} is not writable: {exc}") from exc


def write_trajectory(traj: Trajectory, directory: Path, csv_on: bool = True, snapshots_on: bool = True) -> dict:
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    if csv_on:
        with open(directory / "reports.csv", "w", newline="", encoding="utf-8") as fh:
            write_reports_csv(traj.reports, fh)
        files["reports"] = "reports.csv"
    if snapshots_on:
        snap_dir = directory / "snapshots"
        snap_dir.mkdir(exist_ok=True)
        names = []
        for i, s in enumerate(traj.snapshots):
            p, q = f"phi_{i:05d}.chks", f"sigma_{i:05d}.chks"
            write_snapshot(snap_dir / p, traj.grid, s.phi, s.t)
            write_snapshot(snap_dir / q, traj.grid, s.sigma, s.t)
            names.append({"t": s.t, "phi": f"snapshots/{p}", "sigma": f"snapshots/{q}"})
        files["snapshots"] = names
    return files


def _header(cfg: RunConfig, base: Path) -> dict:
    params = cfg.build_params()
    comp = check_compatibility(params)
    if not comp:
        log.warning("compatibility condition chi^2 <= 3 h_min fails (margin %.3g); running anyway", comp.margin)
    return {
        "version": __version__,
        "config": serialize(cfg),
        "seed": cfg.init.seed,
        "compatibility": {"passed": comp.passed, "margin": comp.margin},
        "inputs_hash": inputs_hash(cfg, base),
    }


def cmd_run(cfg: RunConfig, out: Path, base: Path = Path(".")) -> int:
    ensure_writable(out)
    manifest = _header(cfg, base)
    params = cfg.build_params()
    state = cfg.initial_states(1, base)[0]
    traj = simulate(state, params, cfg.time.T, cfg.time.stride, cfg.time.stepper)
    manifest["outputs"] = write_trajectory(traj, out, cfg.output.csv, cfg.output.snapshots)
    manifest["failure"] = traj.failure
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return 2 if traj.failure else 0


def write_envelope_csv(trajectories: Sequence[Trajectory], path: Path) -> None:
    t, emax = envelope(trajectories, "energy")
    _, rmax = envelope(trajectories, "radius")
    n = len(t)
    emin = np.min(np.stack([tr.series("energy")[:n] for tr in trajectories if tr.reports]), axis=0)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "energy_max", "energy_min", "radius_max"])
        for row in zip(t, emax, emin, rmax):
            w.writerow([format(x, ".17g") for x in row])


def cmd_ensemble(cfg: RunConfig, out: Path, workers: int = 1, base: Path = Path(".")) -> int:
    ensure_writable(out)
    manifest = _header(cfg, base)
    spec = cfg.ensemble_spec()
    manifest["ensemble"] = {
        "n_samples": spec.n_samples,
        "R": spec.R,
        "m": spec.m,
        "seed": spec.seed,
        "T": spec.T,
        "stride": spec.stride,
    }
    params = cfg.build_params()
    states = cfg.initial_states(spec.n_samples, base)
    trajs = run_ensemble(states, params, cfg.time.T, cfg.time.stride, cfg.time.stepper, workers)
    manifest["trajectories"] = []
    for i, tr in enumerate(trajs):
        sub = f"traj_{i:03d}"
        files = write_trajectory(tr, out / sub, cfg.output.csv, cfg.output.snapshots)
        manifest["trajectories"].append({"dir": sub, "failure": tr.failure, "reports": files.get("reports")})
    good = [tr for tr in trajs if len(tr.reports) >= 10]
    if good:
        write_envelope_csv(good, out / "envelope.csv")
        fit = absorbing_fit(good)
        (out / "absorbing_fit.json").write_text(json.dumps(_jsonable(fit.summary()), indent=2) + "\n")
        manifest["absorbing_fit"] = "absorbing_fit.json"
        manifest["envelope"] = "envelope.csv"
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return 2 if any(tr.failure for tr in trajs) else 0


def _jsonable(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, (np.bool_,)):
            v = bool(v)
        elif isinstance(v, (np.floating,)):
            v = float(v)
        if isinstance(v, float) and not np.isfinite(v):
            v = str(v)
        out[k] = v
    return out
