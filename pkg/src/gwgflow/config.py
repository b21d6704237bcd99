"""Experiment configuration: dataclasses, YAML (de)serialization, presets."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml

from .core import YoungFunction
from .samplers import SamplerConfig

TARGET_KINDS = ("gaussian", "mixture", "monomial_gamma", "conditioned_diffusion")
METRICS = ("mean_norm", "cov_frob", "mean_abs", "std", "js", "mode_coverage", "kl_hist", "mmd")


class ConfigError(ValueError):
    pass


@dataclass
class TargetSpec:
    kind: str = "gaussian"
    dim: int = 2
    # mixture
    n_modes: int = 10
    radius: float = 4.0
    variance: float = 0.1
    means: Optional[List[List[float]]] = None
    # monomial gamma
    a: float = 0.3
    b: float = 0.9
    epsilon: float = 1e-4
    # conditioned diffusion
    n_steps: int = 100
    dt: float = 0.01
    stride: int = 5
    sigma: float = 0.1
    obs_seed: int = 2023

    def __post_init__(self):
        if self.kind not in TARGET_KINDS:
            raise ValueError(f"kind: unknown target {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dim: must be positive")
        if self.kind == "conditioned_diffusion" and self.n_steps % self.stride:
            raise ValueError("n_steps: must be divisible by stride")


@dataclass
class NetSpec:
    widths: List[int] = field(default_factory=lambda: [32, 32])
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ("tanh", "leaky_relu", "identity"):
            raise ValueError(f"activation: unknown activation {self.activation!r}")
        if any(w < 1 for w in self.widths):
            raise ValueError("widths: must be positive")


@dataclass
class ExperimentConfig:
    name: str
    target: TargetSpec
    sampler: SamplerConfig
    net: NetSpec = field(default_factory=NetSpec)
    n_particles: int = 1000
    seed: int = 0
    init_mean: Union[float, List[float]] = 0.0
    init_std: float = 1.0
    metrics: List[str] = field(default_factory=list)
    reference: Optional[str] = None  # path to a .npy cloud, or "auto"
    reference_size: int = 1000
    reference_seed: int = 12345
    js_bins: int = 50
    kl_bin_width: float = 0.5
    record_wall_time: bool = False
    dump_params: bool = False

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles: must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed: must be an unsigned 64-bit integer")
        for m in self.metrics:
            if m not in METRICS:
                raise ValueError(f"metrics: unknown metric {m!r}")
        if not self.init_std > 0:
            raise ValueError("init_std: must be positive")


def _young_from(data) -> YoungFunction:
    if isinstance(data, YoungFunction):
        return data
    if not isinstance(data, dict):
        raise ConfigError("sampler.young: expected a mapping")
    extra = set(data) - {"kind", "p", "h", "sigma"}
    if extra:
        raise ConfigError(f"sampler.young: unknown keys {sorted(extra)}")
    try:
        return YoungFunction(data.get("kind"), p=data.get("p"),
                             h=tuple(data["h"]) if data.get("h") is not None else None,
                             sigma=data.get("sigma"))
    except ValueError as err:
        raise ConfigError(f"sampler.young: {err}") from err


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown keys {sorted(unknown)}")
    kwargs = dict(data)
    if cls is SamplerConfig and "young" in kwargs:
        kwargs["young"] = _young_from(kwargs["young"])
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{path}.{err}" if path else str(err)) from err


def config_from_dict(data: Dict[str, Any]) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config: expected a mapping at top level")
    data = dict(data)
    for key in ("name", "target", "sampler"):
        if key not in data:
            raise ConfigError(f"{key}: missing required field")
    data["target"] = _build(TargetSpec, data["target"], "target")
    data["sampler"] = _build(SamplerConfig, data["sampler"], "sampler")
    data["net"] = _build(NetSpec, data.get("net", {}), "net")
    return _build(ExperimentConfig, data, "")


def config_to_dict(cfg: ExperimentConfig) -> Dict[str, Any]:
    out = dataclasses.asdict(cfg)
    out["sampler"]["young"] = cfg.sampler.young.to_dict()
    return out


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


def load_config(path) -> ExperimentConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as err:
        raise ConfigError(f"config: cannot parse {path}: {err}") from err
    return config_from_dict(data)


# ---------------------------------------------------------------------------
# Presets.  Values follow the published experiment recipes where they exist;
# grid-searched values are pinned to one member of the grid.
# ---------------------------------------------------------------------------

def _mixture(name, desk, **sampler):
    base = dict(step_size=0.1, inner_steps=5, outer_steps=2000 if desk else 5000,
                optimizer="sgd", lr=1e-3, momentum=0.9, nesterov=True,
                divergence="hutchinson", checkpoint_every=100, a_grad_clip=None)
    base.update(sampler)
    return ExperimentConfig(
        name=name, target=TargetSpec(kind="mixture", dim=2, n_modes=10, radius=4.0, variance=0.1),
        sampler=SamplerConfig(**base), net=NetSpec([32, 32], "tanh"), n_particles=1000,
        metrics=["js", "mode_coverage"])


def _monomial(name, desk, **sampler):
    base = dict(step_size=1e-3, inner_steps=5, outer_steps=2000 if desk else 10000,
                optimizer="adam", lr=1e-3, divergence="exact", checkpoint_every=100,
                a_grad_clip=None)
    base.update(sampler)
    return ExperimentConfig(
        name=name, target=TargetSpec(kind="monomial_gamma", dim=2, a=0.3, b=0.9, epsilon=1e-4),
        sampler=SamplerConfig(**base), net=NetSpec([32, 32], "tanh"), n_particles=1000,
        metrics=["kl_hist"])


def _cd_target(desk):
    if desk:
        return TargetSpec(kind="conditioned_diffusion", dim=20, n_steps=20, dt=0.05, stride=5,
                          sigma=0.1)
    return TargetSpec(kind="conditioned_diffusion", dim=100, n_steps=100, dt=0.01, stride=5,
                      sigma=0.1)


def _cd(name, desk, **sampler):
    base = dict(step_size=3e-3, inner_steps=5, outer_steps=500 if desk else 2000,
                optimizer="adam", lr=1e-3, divergence="hutchinson", pretrain_steps=100,
                checkpoint_every=10)
    base.update(sampler)
    return ExperimentConfig(
        name=name, target=_cd_target(desk), sampler=SamplerConfig(**base),
        net=NetSpec([200, 200], "tanh"), n_particles=200 if desk else 1000,
        metrics=["mmd"], reference="auto")


def _preset_table():
    return {
        "gaussian-sanity": lambda desk: ExperimentConfig(
            name="gaussian-sanity", target=TargetSpec(kind="gaussian", dim=2),
            sampler=SamplerConfig(method="gwg", young=YoungFunction.lp(2.0), step_size=0.1,
                                  inner_steps=5, outer_steps=1000, optimizer="adam", lr=1e-3,
                                  checkpoint_every=100),
            n_particles=500, init_mean=[5.0, 5.0], metrics=["mean_norm", "cov_frob"]),
        "gaussian-svgd": lambda desk: ExperimentConfig(
            name="gaussian-svgd", target=TargetSpec(kind="gaussian", dim=1),
            sampler=SamplerConfig(method="svgd", step_size=0.1, outer_steps=2000,
                                  checkpoint_every=100),
            n_particles=200, init_mean=2.0, init_std=0.5, metrics=["mean_abs", "std"]),
        "gaussian-lmc": lambda desk: ExperimentConfig(
            name="gaussian-lmc", target=TargetSpec(kind="gaussian", dim=1),
            sampler=SamplerConfig(method="lmc", step_size=1e-3, outer_steps=20000,
                                  checkpoint_every=1000),
            n_particles=1000, metrics=["mean_abs", "std"]),
        "mixture-l2": lambda desk: _mixture("mixture-l2", desk, method="gwg",
                                            young=YoungFunction.lp(2.0)),
        "mixture-pfg": lambda desk: _mixture("mixture-pfg", desk, method="gwg",
                                             young=YoungFunction.quadratic([1.0, 1.0]),
                                             pfg_alpha=1.0),
        "mixture-ada": lambda desk: _mixture("mixture-ada", desk, method="ada_gwg", p0=2.0,
                                             p_lr=2.5e-3),
        "mixture-ada-small-lr": lambda desk: _mixture("mixture-ada-small-lr", desk, method="ada_gwg",
                                                   p0=2.0, p_lr=2.5e-7),
        "mixture-expgf": lambda desk: _mixture("mixture-expgf", desk, method="gwg",
                                               young=YoungFunction.exp(1.0)),
        "mixture-svgd": lambda desk: _mixture("mixture-svgd", desk, method="svgd",
                                              step_size=0.01),
        "monomial-gwg": lambda desk: _monomial("monomial-gwg", desk, method="gwg",
                                               young=YoungFunction.lp(1.5)),
        "monomial-ada": lambda desk: _monomial("monomial-ada", desk, method="ada_gwg", p0=1.5,
                                               p_lr=1.0),
        "cd-ada": lambda desk: _cd("cd-ada", desk, method="ada_gwg", p0=2.2, p_lr=1e-3,
                                   a_grad_clip=0.1),
        "cd-pfg": lambda desk: _cd("cd-pfg", desk, method="gwg",
                                   young=YoungFunction.quadratic([1.0] * _cd_target(desk).dim),
                                   pfg_alpha=0.5),
        "cd-svgd": lambda desk: _cd("cd-svgd", desk, method="svgd", step_size=1e-3,
                                    pretrain_steps=0),
        "cd-truth": lambda desk: ExperimentConfig(
            name="cd-truth", target=_cd_target(desk),
            sampler=SamplerConfig(method="lmc", step_size=1e-4, outer_steps=10000,
                                  checkpoint_every=1000),
            n_particles=500 if desk else 1000, init_std=_cd_target(desk).dt ** 0.5),
    }


PRESETS = tuple(_preset_table())


def preset(name: str, desk_scale: bool = False, seed: Optional[int] = None) -> ExperimentConfig:
    table = _preset_table()
    if name not in table:
        raise ConfigError(f"preset: unknown preset {name!r}; choose from {sorted(table)}")
    cfg = table[name](desk_scale)
    if seed is not None:
        cfg.seed = seed
    return cfg
