"""Sample-quality metrics and the numerical oracles used by the verify suite."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.integrate import trapezoid
from scipy.spatial.distance import cdist, pdist

from .core import YoungFunction, young_value

__all__ = [
    "QuadratureGrid",
    "FDReport",
    "mmd_rbf",
    "median_sq_distance",
    "js_divergence_hist",
    "kl_hist_to_density",
    "mode_coverage",
    "quadrature_1d",
    "bimodal_bounds",
    "bimodal_pair",
    "discrete_wc_bruteforce",
    "radial_cost_inverse",
    "finite_diff_check",
]

MAX_BRUTEFORCE_ATOMS = 8


def _cloud(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] == 0:
        raise ValueError("empty particle cloud")
    if not np.all(np.isfinite(x)):
        raise ValueError("cloud has non-finite coordinates")
    return x


def mmd_rbf(x, y, bandwidth: float) -> float:
    """Biased MMD^2 with kernel exp(-|a - b|^2 / bandwidth)."""
    if not bandwidth > 0:
        raise ValueError("MMD bandwidth must be positive")
    x, y = _cloud(x), _cloud(y)
    if x.shape[1] != y.shape[1]:
        raise ValueError("clouds live in different dimensions")
    kxx = np.exp(-cdist(x, x, "sqeuclidean") / bandwidth).mean()
    kyy = np.exp(-cdist(y, y, "sqeuclidean") / bandwidth).mean()
    kxy = np.exp(-cdist(x, y, "sqeuclidean") / bandwidth).mean()
    return float(kxx + kyy - 2.0 * kxy)


def median_sq_distance(x) -> float:
    x = _cloud(x)
    return float(np.median(pdist(x, "sqeuclidean"))) if x.shape[0] > 1 else 1.0


def _shared_edges(x, y, bins, margin):
    lo = np.minimum(x.min(axis=0), y.min(axis=0))
    hi = np.maximum(x.max(axis=0), y.max(axis=0))
    pad = np.maximum(margin * (hi - lo), 1e-9)
    return [np.linspace(l - m, h + m, bins + 1) for l, h, m in zip(lo, hi, pad)]


def _entropy_terms(p, m):
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / m[nz])))


def js_divergence_hist(x, y, bins: int = 50, margin: float = 0.05) -> float:
    """Jensen-Shannon divergence (nats) between histograms on a shared grid."""
    x, y = _cloud(x), _cloud(y)
    edges = _shared_edges(x, y, bins, margin)
    hx = np.histogramdd(x, bins=edges)[0].ravel()
    hy = np.histogramdd(y, bins=edges)[0].ravel()
    p, q = hx / hx.sum(), hy / hy.sum()
    m = 0.5 * (p + q)
    return 0.5 * _entropy_terms(p, m) + 0.5 * _entropy_terms(q, m)


def kl_hist_to_density(x, log_density: Callable, log_normalizer: float,
                       bin_width: float = 0.5) -> float:
    """KL(particle histogram || pi) on a zero-anchored grid of square cells.

    pi's mass per cell is its density at the cell midpoint times the cell
    volume (midpoint rule), normalized by the exact ``log_normalizer``.
    """
    x = _cloud(x)
    d = x.shape[1]
    cells, counts = np.unique(np.floor(x / bin_width).astype(np.int64), axis=0,
                              return_counts=True)
    mu = counts / x.shape[0]
    mids = (cells + 0.5) * bin_width
    log_pi = np.asarray(log_density(mids)) - log_normalizer + d * math.log(bin_width)
    return float(np.sum(mu * (np.log(mu) - log_pi)))


def mode_coverage(x, means, radius: float) -> int:
    """Number of mixture means with at least one particle within ``radius``."""
    dist = cdist(_cloud(means), _cloud(x))
    return int(np.sum(dist.min(axis=1) <= radius))


@dataclass(frozen=True)
class QuadratureGrid:
    lo: float
    hi: float
    n_points: int = 20001
    rule: str = "trapezoid"

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError("quadrature grid needs hi > lo")
        if self.n_points < 64:
            raise ValueError("quadrature grid needs at least 64 points")
        if self.rule != "trapezoid":
            raise ValueError("only the trapezoid rule is supported")

    def nodes(self, n: Optional[int] = None) -> np.ndarray:
        return np.linspace(self.lo, self.hi, n or self.n_points)

    def refined(self) -> "QuadratureGrid":
        return QuadratureGrid(self.lo, self.hi, 2 * self.n_points - 1, self.rule)


def _quad_once(pi, mu, q, nodes):
    xs = nodes[:, None]
    log_pi, log_mu = pi.log_density(xs), mu.log_density(xs)
    if not (np.all(np.isfinite(log_pi)) and np.all(np.isfinite(log_mu))):
        raise ValueError("densities must be positive on the grid")
    dens_mu = np.exp(log_mu)
    score_gap = (pi.score(xs) - mu.score(xs))[:, 0]
    score_div = trapezoid(np.abs(score_gap) ** q * dens_mu, nodes)
    kl = trapezoid(dens_mu * (log_mu - log_pi), nodes)
    return float(score_div), float(kl)


def quadrature_1d(pi, mu, q: float, grid: QuadratureGrid, rtol: float = 1e-6
                  ) -> Tuple[float, float]:
    """(E_mu |d/dx log(pi/mu)|^q, KL(mu || pi)) by the trapezoid rule.

    ``pi`` and ``mu`` are one-dimensional targets with normalized
    ``log_density`` and ``score``.  The grid is doubled once; if the two
    estimates disagree by more than ``rtol`` relative a ValueError is raised.
    """
    if q < 1:
        raise ValueError("q must be >= 1")
    coarse = _quad_once(pi, mu, q, grid.nodes())
    fine = _quad_once(pi, mu, q, grid.refined().nodes())
    for c, f in zip(coarse, fine):
        if abs(c - f) > rtol * max(abs(c), abs(f)) + 1e-15:
            raise ValueError(f"quadrature grid too coarse: {c!r} vs {f!r}")
    return fine


def bimodal_pair(m: float, shift: float = 0.0):
    """(pi, mu) = (N(-m,1)/2 + N(m,1)/2, 3/4 N(-m,1) + 1/4 N(m,1)), optionally shifted."""
    from .targets import GaussianMixtureTarget

    return (GaussianMixtureTarget.two_bumps(m, 0.5, shift),
            GaussianMixtureTarget.two_bumps(m, 0.75, shift))


def bimodal_bounds(m: float, q: float) -> Tuple[float, float]:
    """Lower and upper bounds on E_mu |d/dx log(pi/mu)|^q for the two-bump pair."""
    lo = 0.08 / (q * m) * (m / 3.0) ** q * math.exp(-m * m / 2.0)
    hi = 0.2 / (q * m) * (4.0 * m) ** q * math.exp(-m * m / 2.0)
    return lo, hi


BIMODAL_KL_FLOOR = 1.0 / (10.0 * math.sqrt(2.0))


def _transport_cost_matrix(x, y, g: YoungFunction, h: float) -> np.ndarray:
    diff = (x[:, None, :] - y[None, :, :]) / h
    return young_value(g, diff) * h


def discrete_wc_bruteforce(x, y, g: YoungFunction, h: float = 1.0) -> float:
    """Optimal cost between equal-mass clouds, cost c_h(a, b) = h g((a - b) / h).

    Enumerates every assignment; with equal masses an optimal coupling is a
    permutation, so this is the exact transport cost.
    """
    x, y = _cloud(x), _cloud(y)
    n = x.shape[0]
    if y.shape[0] != n:
        raise ValueError("clouds must have the same number of atoms")
    if n > MAX_BRUTEFORCE_ATOMS:
        raise ValueError(f"brute force limited to {MAX_BRUTEFORCE_ATOMS} atoms, got {n}")
    if not h > 0:
        raise ValueError("h must be positive")
    cost = _transport_cost_matrix(x, y, g, h)
    perms = np.array(list(itertools.permutations(range(n))))
    totals = cost[np.arange(n)[None, :], perms].sum(axis=1)
    return float(totals.min() / n)


def radial_cost_inverse(g: YoungFunction, h: float, t) -> np.ndarray:
    """Invert r -> h g0(r / h), where g(v) = g0(|v|) for the matching norm.

    Lp uses the p-norm (g0(r) = r^p / p); exp uses the Euclidean norm.
    """
    t = np.asarray(t, dtype=float)
    if g.kind == "lp":
        return (g.p * t) ** (1.0 / g.p) * h ** (1.0 - 1.0 / g.p)
    if g.kind == "exp":
        return h * g.sigma * np.sqrt(2.0 * np.log1p(t / h))
    if g.kind == "quadratic" and len(set(g.h)) == 1:
        return h * np.sqrt(2.0 * t / (h * g.h[0]))
    raise ValueError("only radial Young functions can be inverted")


@dataclass
class FDReport:
    max_rel_err: float
    passed: bool
    numeric: np.ndarray
    analytic: np.ndarray


def finite_diff_check(fn: Callable, point, analytic_grad, step: float = 1e-5,
                      tol: float = 1e-5) -> FDReport:
    """Compare ``analytic_grad`` with central differences of scalar ``fn``.

    Relative error per coordinate is ``|a - n| / max(|a|, |n|, floor)`` with
    ``floor = 1e-8 * max|n|``, so exactly-zero components do not divide by zero.
    """
    if not step > 0:
        raise ValueError("finite-difference step must be positive")
    x = np.array(point, dtype=float)
    a = np.asarray(analytic_grad, dtype=float).reshape(x.shape)
    num = np.empty_like(x)
    flat, nflat = x.reshape(-1), num.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = float(fn(x))
        flat[i] = orig - step
        fm = float(fn(x))
        flat[i] = orig
        nflat[i] = (fp - fm) / (2.0 * step)
    floor = max(1e-8 * float(np.max(np.abs(num))), 1e-300)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(num)), floor)
    err = float(np.max(np.abs(a - num) / denom))
    return FDReport(err, err <= tol, num, a)
