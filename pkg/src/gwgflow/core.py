"""Young functions, their convex conjugate gradients, and the RNG contract.

A Young function ``g`` regularizes the velocity field of the flow.  Three
families are supported:

``lp``
    ``g(v) = (1/p) sum |v_i|^p`` with conjugate ``g*(y) = (1/q) sum |y_i|^q``.
``quadratic``
    ``g(v) = 1/2 v^T H v`` for a positive diagonal ``H``.
``exp``
    ``g(v) = exp(|v|^2 / (2 sigma^2)) - 1``.

All functions accept a single vector of shape ``(d,)`` or a batch of shape
``(n, d)``; reductions run over the last axis.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

log = logging.getLogger(__name__)

LOG_MAGNITUDE_CAP = 700.0

__all__ = [
    "YoungFunction",
    "RngState",
    "holder_conjugate",
    "young_value",
    "young_grad",
    "young_conjugate_grad",
    "young_conjugate_value",
]


def holder_conjugate(p: float) -> float:
    """Return q = p / (p - 1)."""
    if not p > 1.0:
        raise ValueError(f"Hoelder conjugate needs p > 1, got {p}")
    return p / (p - 1.0)


@dataclass(frozen=True)
class YoungFunction:
    kind: str
    p: Optional[float] = None
    h: Optional[Tuple[float, ...]] = None
    sigma: Optional[float] = None

    def __post_init__(self):
        if self.kind == "lp":
            if self.p is None or not self.p > 1.0:
                raise ValueError(f"lp Young function needs p > 1, got {self.p}")
        elif self.kind == "quadratic":
            if self.h is None or len(self.h) == 0:
                raise ValueError("quadratic Young function needs a diagonal H")
            if not all(math.isfinite(v) and v > 0 for v in self.h):
                raise ValueError("quadratic Young function needs H > 0 entrywise")
            object.__setattr__(self, "h", tuple(float(v) for v in self.h))
        elif self.kind == "exp":
            if self.sigma is None or not self.sigma > 0:
                raise ValueError(f"exp Young function needs sigma > 0, got {self.sigma}")
        else:
            raise ValueError(f"unknown Young function kind {self.kind!r}")

    @classmethod
    def lp(cls, p: float) -> "YoungFunction":
        return cls("lp", p=float(p))

    @classmethod
    def quadratic(cls, h) -> "YoungFunction":
        return cls("quadratic", h=tuple(np.asarray(h, dtype=float).ravel()))

    @classmethod
    def exp(cls, sigma: float) -> "YoungFunction":
        return cls("exp", sigma=float(sigma))

    @property
    def q(self) -> float:
        return holder_conjugate(self.p)

    @property
    def diag(self) -> np.ndarray:
        return np.asarray(self.h, dtype=float)

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "lp":
            out["p"] = self.p
        elif self.kind == "quadratic":
            out["h"] = list(self.h)
        else:
            out["sigma"] = self.sigma
        return out


def _check(g: YoungFunction, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("Young function argument has non-finite entries")
    if g.kind == "quadratic" and v.shape[-1] != len(g.h):
        raise ValueError(f"dimension mismatch: H has {len(g.h)} entries, vector has {v.shape[-1]}")
    return v


def young_value(g: YoungFunction, v) -> np.ndarray:
    """g(v), reduced over the last axis."""
    v = _check(g, v)
    if g.kind == "lp":
        if g.p == 2.0:
            return 0.5 * np.sum(v * v, axis=-1)
        return np.sum(np.abs(v) ** g.p, axis=-1) / g.p
    if g.kind == "quadratic":
        return 0.5 * np.sum(g.diag * v * v, axis=-1)
    sq = np.sum(v * v, axis=-1)
    return np.expm1(sq / (2.0 * g.sigma**2))


def young_grad(g: YoungFunction, v) -> np.ndarray:
    """Gradient of g at v (same shape as v)."""
    v = _check(g, v)
    if g.kind == "lp":
        if g.p == 2.0:
            return v.copy()
        return np.sign(v) * np.abs(v) ** (g.p - 1.0)
    if g.kind == "quadratic":
        return g.diag * v
    s2 = g.sigma**2
    sq = np.sum(v * v, axis=-1, keepdims=True)
    return v / s2 * np.exp(sq / (2.0 * s2))


def _signed_power(y: np.ndarray, expo: float) -> np.ndarray:
    # sign(y) |y|^expo evaluated in the log domain, magnitudes capped at exp(700)
    mag = np.abs(y)
    out = np.zeros_like(y)
    nz = mag > 0
    logmag = expo * np.log(mag[nz])
    if np.any(logmag > LOG_MAGNITUDE_CAP):
        log.warning("conjugate gradient magnitude saturated at exp(%g)", LOG_MAGNITUDE_CAP)
        logmag = np.minimum(logmag, LOG_MAGNITUDE_CAP)
    out[nz] = np.sign(y[nz]) * np.exp(logmag)
    return out


def _exp_radius(norm_y: np.ndarray, sigma: float) -> np.ndarray:
    """Solve (r / sigma^2) exp(r^2 / (2 sigma^2)) = |y| for r >= 0 by bisection."""
    s2 = sigma * sigma
    lo = np.zeros_like(norm_y)
    hi = sigma * np.sqrt(2.0 * np.log1p(sigma * norm_y)) + sigma
    target = np.log(norm_y)

    def resid(r):
        with np.errstate(divide="ignore"):
            return np.log(r) - np.log(s2) + r * r / (2.0 * s2) - target

    # converged entries are frozen, so each result is independent of its batch
    for _ in range(200):
        active = hi - lo > 4.0 * np.spacing(hi)
        if not np.any(active):
            break
        mid = 0.5 * (lo + hi)
        pos = resid(mid) > 0
        hi = np.where(active & pos, mid, hi)
        lo = np.where(active & ~pos, mid, lo)
    return 0.5 * (lo + hi)


def young_conjugate_grad(g: YoungFunction, y) -> np.ndarray:
    """Gradient of the Legendre conjugate g* at y; zero maps to zero."""
    y = _check(g, y)
    if g.kind == "lp":
        q = g.q
        if q == 2.0:
            return y.copy()
        return _signed_power(y, q - 1.0)
    if g.kind == "quadratic":
        return y / g.diag
    batch = np.atleast_2d(y)
    norm = np.linalg.norm(batch, axis=-1)
    out = np.zeros_like(batch)
    nz = norm > 0
    if np.any(nz):
        r = _exp_radius(norm[nz], g.sigma)
        out[nz] = batch[nz] * (r / norm[nz])[:, None]
    return out.reshape(y.shape)


def young_conjugate_value(g: YoungFunction, y) -> np.ndarray:
    """g*(y); closed form for lp/quadratic, Fenchel identity for exp."""
    y = _check(g, y)
    if g.kind == "lp":
        q = g.q
        return np.sum(np.abs(y) ** q, axis=-1) / q
    if g.kind == "quadratic":
        return 0.5 * np.sum(y * y / g.diag, axis=-1)
    v = young_conjugate_grad(g, y)
    return np.sum(y * v, axis=-1) - young_value(g, v)


@dataclass(frozen=True)
class RngState:
    """Seed plus stream counter for a Philox-4x64 counter-based generator.

    The generator for ``(seed, counter)`` is ``Philox(key=seed)`` started at
    the 256-bit block counter ``[0, 0, substream, counter]``.  Different
    ``(counter, substream)`` pairs address disjoint regions of the same
    keyed stream, so draws never overlap in practice.
    """

    seed: int
    counter: int = 0

    def __post_init__(self):
        if not (0 <= self.seed < 2**64 and 0 <= self.counter < 2**64):
            raise ValueError("seed and counter must be unsigned 64-bit integers")

    def generator(self, substream: int = 0) -> np.random.Generator:
        bitgen = np.random.Philox(key=self.seed, counter=[0, 0, substream, self.counter])
        return np.random.Generator(bitgen)

    def child(self, counter: int) -> "RngState":
        return RngState(self.seed, counter)
