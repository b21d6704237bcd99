"""Particle samplers: GWG / Ada-GWG (neural field), SVGD and Langevin baselines."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .core import RngState, YoungFunction
from .targets import Target
from .vecfield import (DivergenceMode, MlpParams, NonFiniteLoss, OptimizerState,
                       make_probes, mlp_forward, optimizer_step, training_loss_grad)

METHODS = ("gwg", "ada_gwg", "svgd", "lmc")

# stream ids handed to RngState.child; substreams index iterations
STREAM_INIT = 1
STREAM_NET = 2
STREAM_PROBES = 3
STREAM_LANGEVIN = 4

VARIANCE_FLOOR = 1e-6
BANDWIDTH_FLOOR = 1e-8

MetricFn = Callable[[np.ndarray], Dict[str, float]]


class ParticleDivergence(FloatingPointError):
    """Raised when a particle position or the training loss turns non-finite."""

    def __init__(self, iteration: int, indices, positions: np.ndarray, log: "TrajectoryLog"):
        idx = list(np.atleast_1d(indices)[:10])
        super().__init__(f"non-finite particles at iteration {iteration}: indices {idx}")
        self.iteration = iteration
        self.indices = np.atleast_1d(indices)
        self.positions = positions
        self.log = log


@dataclass
class ParticleSystem:
    positions: np.ndarray
    rng: RngState
    k: int = 0

    @classmethod
    def gaussian(cls, n: int, dim: int, rng: RngState, mean=0.0, std=1.0) -> "ParticleSystem":
        gen = rng.child(STREAM_INIT).generator()
        pos = np.asarray(mean, dtype=float) + std * gen.standard_normal((n, dim))
        return cls(pos, rng)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def copy(self) -> "ParticleSystem":
        return ParticleSystem(self.positions.copy(), self.rng, self.k)


@dataclass
class SamplerConfig:
    method: str = "gwg"
    young: YoungFunction = field(default_factory=lambda: YoungFunction.lp(2.0))
    step_size: float = 0.1
    inner_steps: int = 5
    outer_steps: int = 100
    optimizer: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    nesterov: bool = True
    divergence: str = "exact"
    n_probes: int = 1
    probe_refresh: str = "per_step"  # or "per_outer"
    pretrain_steps: int = 0
    reinit_net: bool = False
    p0: float = 2.0
    p_lr: float = 0.0
    p_lb: float = 1.1
    p_ub: float = 4.0
    a_grad_clip: Optional[float] = 0.1
    pfg_alpha: Optional[float] = None
    pfg_refresh: int = 1
    checkpoint_every: int = 10

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method: unknown sampler {self.method!r}")
        if not self.step_size > 0:
            raise ValueError("step_size: must be > 0")
        if self.inner_steps < 0 or self.outer_steps < 0 or self.pretrain_steps < 0:
            raise ValueError("inner_steps/outer_steps/pretrain_steps: must be >= 0")
        if not self.p_lb > 1:
            raise ValueError(f"p_lb: lower bound on p must satisfy lb > 1, got {self.p_lb}")
        if not self.p_ub >= self.p_lb:
            raise ValueError("p_ub: upper bound must satisfy ub >= lb")
        if self.method == "ada_gwg" and not self.p_lb <= self.p0 <= self.p_ub:
            raise ValueError("p0: must lie in [p_lb, p_ub]")
        if self.a_grad_clip is not None and not self.a_grad_clip > 0:
            raise ValueError("a_grad_clip: must be positive or null")
        if self.pfg_alpha is not None and self.young.kind != "quadratic":
            raise ValueError("pfg_alpha: requires a quadratic Young function")
        if self.probe_refresh not in ("per_step", "per_outer"):
            raise ValueError("probe_refresh: must be per_step or per_outer")
        if self.checkpoint_every < 1 or self.pfg_refresh < 1:
            raise ValueError("checkpoint_every/pfg_refresh: must be >= 1")
        DivergenceMode(self.divergence, self.n_probes)
        OptimizerState(self.optimizer)

    @property
    def divergence_mode(self) -> DivergenceMode:
        return DivergenceMode(self.divergence, self.n_probes)

    def make_optimizer(self) -> OptimizerState:
        return OptimizerState(self.optimizer, lr=self.lr, momentum=self.momentum,
                              nesterov=self.nesterov)


@dataclass
class CheckpointRecord:
    iteration: int
    positions: np.ndarray
    p: Optional[float]
    loss: Optional[float]
    wall_ms: float
    metrics: Dict[str, float]


@dataclass
class TrajectoryLog:
    records: List[CheckpointRecord] = field(default_factory=list)
    p_trace: List[float] = field(default_factory=list)
    failure: Optional[str] = None
    params: Optional[MlpParams] = None

    def add(self, rec: CheckpointRecord):
        if self.records and rec.iteration <= self.records[-1].iteration:
            raise ValueError("checkpoint iterations must be strictly increasing")
        self.records.append(rec)


def a_hat_grad(p: float, field_values) -> Tuple[float, float]:
    """A(p) = mean_i (1/p) sum_j |f_ij|^p and its derivative in p."""
    if not p > 1:
        raise ValueError("p must exceed 1")
    f = np.abs(np.atleast_2d(np.asarray(field_values, dtype=float)))
    nz = f > 0
    powp = np.where(nz, f, 1.0) ** p * nz
    logf = np.log(np.where(nz, f, 1.0))
    s0 = np.sum(powp, axis=1)
    s1 = np.sum(powp * logf, axis=1)
    a = float(np.mean(s0) / p)
    da = float(np.mean(-s0 / p**2 + s1 / p))
    return a, da


def pfg_preconditioner(positions: np.ndarray, alpha: float) -> YoungFunction:
    """Quadratic Young function with H = (1 / diag variance)^alpha."""
    var = np.maximum(np.var(positions, axis=0), VARIANCE_FLOOR)
    return YoungFunction.quadratic((1.0 / var) ** alpha)


def _check_finite(ps: ParticleSystem, log: TrajectoryLog, iteration: int):
    bad = np.flatnonzero(~np.all(np.isfinite(ps.positions), axis=1))
    if bad.size:
        log.failure = f"non-finite particles at iteration {iteration}: {bad[:10].tolist()}"
        raise ParticleDivergence(iteration, bad, ps.positions.copy(), log)


def _record(log, ps, p, loss, t0, metric_fn):
    metrics = metric_fn(ps.positions) if metric_fn is not None else {}
    log.add(CheckpointRecord(ps.k, ps.positions.copy(), p, loss,
                             1000.0 * (time.perf_counter() - t0), metrics))


def gwg_run(config: SamplerConfig, target: Target, ps: ParticleSystem, params: MlpParams,
            metric_fn: Optional[MetricFn] = None, opt_state: Optional[OptimizerState] = None
            ) -> Tuple[ParticleSystem, TrajectoryLog]:
    """Generalized Wasserstein gradient descent, optionally adapting the exponent p.

    Each outer iteration trains the field for ``inner_steps`` ascent steps on
    the Stein objective (warm-started from the previous field) and then moves
    every particle by ``step_size * f_w(x)``.  With ``method == "ada_gwg"`` the
    Young function is Lp(p) and p follows clipped gradient ascent on A(p).
    With ``pfg_alpha`` set, H is recomputed from the particle variances.
    """
    adaptive = config.method == "ada_gwg"
    ps = ps.copy()
    params = params.copy()
    init_params = params.copy()
    opt = opt_state if opt_state is not None else config.make_optimizer()
    mode = config.divergence_mode
    n, d = ps.positions.shape
    probe_root = ps.rng.child(STREAM_PROBES)
    log = TrajectoryLog()
    t0 = time.perf_counter()

    p = config.p0 if adaptive else None
    young = YoungFunction.lp(p) if adaptive else config.young

    def train(x, scores, young, n_steps, substream):
        loss = None
        probes = None
        for t in range(n_steps):
            if mode.kind == "hutchinson" and (probes is None or config.probe_refresh == "per_step"):
                probes, _ = make_probes(mode, n, d, probe_root.generator((substream << 32) | t))
            try:
                loss, grad = training_loss_grad(params, x, scores, young, mode, probes=probes)
            except NonFiniteLoss as err:
                log.failure = str(err)
                raise ParticleDivergence(ps.k, [err.index], x.copy(), log) from err
            optimizer_step(opt, params, grad, ascent=True)
        return loss

    if config.pfg_alpha is not None:
        young = pfg_preconditioner(ps.positions, config.pfg_alpha)
    if config.pretrain_steps:
        train(ps.positions, target.score(ps.positions), young, config.pretrain_steps, 0)
    _record(log, ps, p, None, t0, metric_fn)
    if adaptive:
        log.p_trace.append(p)

    for k in range(config.outer_steps):
        x = ps.positions
        if config.pfg_alpha is not None and k % config.pfg_refresh == 0:
            young = pfg_preconditioner(x, config.pfg_alpha)
        if config.reinit_net:
            params.flat[...] = init_params.flat
        scores = target.score(x)
        loss = train(x, scores, young, config.inner_steps, k + 1)
        f = mlp_forward(params, x)
        if adaptive:
            _, da = a_hat_grad(p, f)
            if config.a_grad_clip is not None:
                da = min(max(da, -config.a_grad_clip), config.a_grad_clip)
            p = min(max(p + config.p_lr * da, config.p_lb), config.p_ub)
            assert config.p_lb <= p <= config.p_ub
            young = YoungFunction.lp(p)
            log.p_trace.append(p)
        ps.positions = x + config.step_size * f
        ps.k += 1
        _check_finite(ps, log, ps.k)
        if ps.k % config.checkpoint_every == 0 or k == config.outer_steps - 1:
            _record(log, ps, p, loss, t0, metric_fn)
    log.params = params
    return ps, log


def ada_gwg_run(config: SamplerConfig, target: Target, ps: ParticleSystem, params: MlpParams,
                metric_fn: Optional[MetricFn] = None):
    return gwg_run(replace(config, method="ada_gwg"), target, ps, params, metric_fn)


def svgd_direction(x: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """phi(x_i) = (1/n) sum_j [k(x_j, x_i) s_j + grad_{x_j} k(x_j, x_i)].

    RBF kernel exp(-|x - y|^2 / bw) with bw = med^2 / log(n + 1), med the
    median pairwise distance.
    """
    n = x.shape[0]
    if n > 1:
        sq = pdist(x, "sqeuclidean")
        med2 = float(np.median(sq))
        bw = max(med2 / math.log(n + 1), BANDWIDTH_FLOOR)
        kmat = np.exp(-squareform(sq) / bw)
    else:
        bw = BANDWIDTH_FLOOR
        kmat = np.ones((1, 1))
    drive = kmat @ scores
    # sum_j grad_{x_j} k(x_j, x_i) = (2 / bw) sum_j k_ij (x_i - x_j)
    repulse = (2.0 / bw) * (x * kmat.sum(axis=1, keepdims=True) - kmat @ x)
    return (drive + repulse) / n


def svgd_step(ps: ParticleSystem, target: Target, h: float) -> ParticleSystem:
    x = ps.positions
    new = x + h * svgd_direction(x, target.score(x))
    return ParticleSystem(new, ps.rng, ps.k + 1)


def svgd_run(config: SamplerConfig, target: Target, ps: ParticleSystem,
             metric_fn: Optional[MetricFn] = None):
    log = TrajectoryLog()
    t0 = time.perf_counter()
    _record(log, ps, None, None, t0, metric_fn)
    for k in range(config.outer_steps):
        ps = svgd_step(ps, target, config.step_size)
        _check_finite(ps, log, ps.k)
        if ps.k % config.checkpoint_every == 0 or k == config.outer_steps - 1:
            _record(log, ps, None, None, t0, metric_fn)
    return ps, log


def lmc_step(x: np.ndarray, score: np.ndarray, h: float, xi: np.ndarray) -> np.ndarray:
    """Unadjusted Langevin: x + h s(x) + sqrt(2h) xi."""
    return x + h * score + math.sqrt(2.0 * h) * xi


def lmc_run(ps: ParticleSystem, target: Target, h: float, steps: int,
            metric_fn: Optional[MetricFn] = None, checkpoint_every: int = 0):
    """Run ``steps`` Langevin steps; noise for step k comes from substream k."""
    if not h > 0:
        raise ValueError("Langevin step size must be positive")
    root = ps.rng.child(STREAM_LANGEVIN)
    ps = ps.copy()
    log = TrajectoryLog()
    t0 = time.perf_counter()
    if checkpoint_every:
        _record(log, ps, None, None, t0, metric_fn)
    for k in range(steps):
        xi = root.generator(ps.k).standard_normal(ps.positions.shape)
        ps.positions = lmc_step(ps.positions, target.score(ps.positions), h, xi)
        ps.k += 1
        _check_finite(ps, log, ps.k)
        if checkpoint_every and (ps.k % checkpoint_every == 0 or k == steps - 1):
            _record(log, ps, None, None, t0, metric_fn)
    return ps, log


def run_sampler(config: SamplerConfig, target: Target, ps: ParticleSystem,
                params: Optional[MlpParams] = None, metric_fn: Optional[MetricFn] = None):
    """Dispatch on ``config.method``."""
    if config.method in ("gwg", "ada_gwg"):
        if params is None:
            raise ValueError("neural samplers need initial network parameters")
        return gwg_run(config, target, ps, params, metric_fn)
    if config.method == "svgd":
        return svgd_run(config, target, ps, metric_fn)
    return lmc_run(ps, target, config.step_size, config.outer_steps, metric_fn,
                   config.checkpoint_every)
