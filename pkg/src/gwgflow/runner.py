"""Build targets/particles/networks from a config, run, and write run outputs.

A run directory holds:

``config.yaml``        resolved configuration (re-running it reproduces the run)
``metrics.csv``        ``iter,metric_name,value,wall_ms``
``snapshots.jsonl``    one ``{iter, p, loss, particles}`` record per checkpoint
``final_particles.npy``
``observations.json``  conditioned-diffusion observations (that target only)
``params.f64``         flat float64 network parameters (when ``dump_params``)
``failure.json``       present only if the run diverged
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
from dataclasses import replace
from pathlib import Path
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from threadpoolctl import threadpool_limits

from .config import ExperimentConfig, dump_config, preset
from .core import RngState
from .metrics import (js_divergence_hist, kl_hist_to_density, median_sq_distance, mmd_rbf,
                      mode_coverage)
from .samplers import (STREAM_NET, ParticleDivergence, ParticleSystem, TrajectoryLog,
                       run_sampler)
from .targets import ConditionedDiffusionTarget, GaussianMixtureTarget, MonomialGammaTarget, Target
from .vecfield import init_mlp

log = logging.getLogger(__name__)

CSV_HEADER = ("iter", "metric_name", "value", "wall_ms")


def build_target(spec) -> Target:
    if spec.kind == "gaussian":
        return GaussianMixtureTarget.standard_normal(spec.dim)
    if spec.kind == "mixture":
        if spec.means is not None:
            means = np.asarray(spec.means, dtype=float)
            return GaussianMixtureTarget(np.full(len(means), 1.0 / len(means)), means,
                                         spec.variance)
        return GaussianMixtureTarget.circle(spec.n_modes, spec.radius, spec.variance)
    if spec.kind == "monomial_gamma":
        return MonomialGammaTarget(spec.a, spec.b, spec.dim, spec.epsilon)
    return ConditionedDiffusionTarget.generate(spec.n_steps, spec.dt, spec.stride, spec.sigma,
                                               seed=spec.obs_seed)


def cache_dir() -> Path:
    return Path(os.environ.get("GWGFLOW_CACHE", ".gwgflow_cache"))


def truth_config(cfg: ExperimentConfig) -> ExperimentConfig:
    """Long-run Langevin ground truth for the run's conditioned-diffusion target."""
    base = preset("cd-truth", desk_scale=cfg.target.n_steps < 100)
    return replace(base, target=cfg.target)


def ensure_reference(cfg: ExperimentConfig) -> np.ndarray:
    """Load the reference cloud, computing and caching the Langevin truth for "auto"."""
    if cfg.reference is None:
        raise ValueError("the mmd metric needs a reference cloud")
    if cfg.reference != "auto":
        return np.load(cfg.reference)
    tcfg = truth_config(cfg)
    key = hashlib.sha256(dump_config(tcfg).encode()).hexdigest()[:16]
    path = cache_dir() / f"cd-truth-{key}" / "final_particles.npy"
    if not path.exists():
        log.info("computing Langevin reference into %s", path.parent)
        run_experiment(tcfg, path.parent)
    return np.load(path)


def make_metric_fn(cfg: ExperimentConfig, target: Target) -> Callable[[np.ndarray], Dict]:
    names = list(cfg.metrics)
    ref = None
    if "js" in names:
        gen = RngState(cfg.reference_seed).generator()
        ref = target.sample(cfg.reference_size, gen)
    truth, bandwidth = None, None
    if "mmd" in names:
        truth = ensure_reference(cfg)
        bandwidth = median_sq_distance(truth)

    def fn(x: np.ndarray) -> Dict[str, float]:
        out = {}
        for name in names:
            if name == "mean_norm":
                out[name] = float(np.linalg.norm(x.mean(axis=0)))
            elif name == "mean_abs":
                out[name] = float(np.abs(x.mean(axis=0)).max())
            elif name == "std":
                out[name] = float(x.std(axis=0, ddof=1).mean())
            elif name == "cov_frob":
                cov = np.atleast_2d(np.cov(x.T))
                out[name] = float(np.linalg.norm(cov - np.eye(x.shape[1])))
            elif name == "js":
                out[name] = js_divergence_hist(x, ref, bins=cfg.js_bins)
            elif name == "mode_coverage":
                radius = 3.0 * math.sqrt(target.variance)
                out[name] = float(mode_coverage(x, target.means, radius))
            elif name == "kl_hist":
                out[name] = kl_hist_to_density(x, target.log_density, target.log_normalizer(),
                                               cfg.kl_bin_width)
            elif name == "mmd":
                out[name] = mmd_rbf(x, truth, bandwidth)
        return out

    return fn


def initial_state(cfg: ExperimentConfig, target: Target):
    rng = RngState(cfg.seed)
    ps = ParticleSystem.gaussian(cfg.n_particles, target.dim, rng, cfg.init_mean, cfg.init_std)
    params = None
    if cfg.sampler.method in ("gwg", "ada_gwg"):
        params = init_mlp(target.dim, cfg.net.widths, cfg.net.activation,
                          rng.child(STREAM_NET).generator())
    return ps, params


def thread_limit():
    """Pin BLAS to one thread.

    Multithreaded BLAS reductions change the summation order, and with it the
    last bits of the results; parallelism is spent across runs instead.
    """
    return threadpool_limits(limits=1)


def worker_count() -> int:
    """Number of worker processes for multi-run sweeps, from ``GWGFLOW_THREADS``."""
    try:
        return max(1, int(os.environ.get("GWGFLOW_THREADS", "1")))
    except ValueError:
        return 1


def run_in_memory(cfg: ExperimentConfig, target: Optional[Target] = None
                  ) -> Tuple[ParticleSystem, TrajectoryLog, Target]:
    """Run a config without touching the filesystem (reference caching aside)."""
    target = build_target(cfg.target) if target is None else target
    ps, params = initial_state(cfg, target)
    with thread_limit():
        metric_fn = make_metric_fn(cfg, target) if cfg.metrics else None
        ps, trajectory = run_sampler(cfg.sampler, target, ps, params, metric_fn)
    return ps, trajectory, target


def _final_and_log(cfg: ExperimentConfig):
    ps, trajectory, _ = run_in_memory(cfg)
    return ps.positions, trajectory


def run_many(configs: Sequence[ExperimentConfig]) -> List[Tuple[np.ndarray, TrajectoryLog]]:
    """Run several configs, in parallel processes when ``GWGFLOW_THREADS`` > 1.

    Each run is single-threaded and self-seeded, so results do not depend on
    the worker count.
    """
    workers = min(worker_count(), len(configs))
    if workers <= 1:
        return [_final_and_log(c) for c in configs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_final_and_log, configs))


def _fmt(v) -> str:
    return repr(float(v))


def write_outputs(cfg: ExperimentConfig, trajectory: TrajectoryLog, out: Path,
                  final: Optional[np.ndarray] = None):
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for rec in trajectory.records:
            wall = _fmt(rec.wall_ms) if cfg.record_wall_time else ""
            rows = dict(rec.metrics)
            if rec.p is not None:
                rows["p"] = rec.p
            if rec.loss is not None:
                rows["loss"] = rec.loss
            for name, value in rows.items():
                writer.writerow([rec.iteration, name, _fmt(value), wall])
    with open(out / "snapshots.jsonl", "w") as fh:
        for rec in trajectory.records:
            fh.write(json.dumps({"iter": rec.iteration, "p": rec.p, "loss": rec.loss,
                                 "particles": rec.positions.tolist()}) + "\n")
    if final is not None:
        np.save(out / "final_particles.npy", final)
    if cfg.dump_params and trajectory.params is not None:
        (out / "params.f64").write_bytes(trajectory.params.flat.astype("<f8").tobytes())


def run_experiment(cfg: ExperimentConfig, out) -> int:
    """Run ``cfg`` and write every output into ``out``; returns a process exit code."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(dump_config(cfg))
    target = build_target(cfg.target)
    if isinstance(target, ConditionedDiffusionTarget):
        (out / "observations.json").write_text(json.dumps(
            {"y": target.y.tolist(), "x_true": target.x_true.tolist(),
             "n_steps": target.n_steps, "dt": target.dt, "stride": target.stride,
             "sigma": target.sigma, "obs_seed": cfg.target.obs_seed}))
    try:
        ps, trajectory, _ = run_in_memory(cfg, target)
    except ParticleDivergence as err:
        write_outputs(cfg, err.log, out)
        (out / "failure.json").write_text(json.dumps(
            {"iteration": err.iteration, "indices": err.indices[:100].tolist(),
             "message": str(err)}))
        log.error("%s", err)
        return 3
    write_outputs(cfg, trajectory, out, ps.positions)
    return 0
