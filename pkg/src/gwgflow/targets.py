"""Target distributions: unnormalized log-density plus score.

Every target accepts a point of shape ``(d,)`` or a batch ``(n, d)`` and
returns matching shapes (scalar/``(n,)`` for log-densities, same shape as the
input for scores).
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaincc, gammaln, logsumexp

__all__ = [
    "Target",
    "GaussianMixtureTarget",
    "MonomialGammaTarget",
    "ConditionedDiffusionTarget",
    "cd_forward",
    "cd_score",
]


class Target:
    dim: int

    def log_density(self, x) -> np.ndarray:
        raise NotImplementedError

    def score(self, x) -> np.ndarray:
        raise NotImplementedError

    def _batch(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xb = np.atleast_2d(x)
        if xb.shape[-1] != self.dim:
            raise ValueError(f"expected dimension {self.dim}, got {xb.shape[-1]}")
        if not np.all(np.isfinite(xb)):
            raise ValueError("non-finite input to target")
        return xb, single


class GaussianMixtureTarget(Target):
    """Isotropic Gaussian mixture; log_density is normalized."""

    def __init__(self, weights, means, variance: float):
        self.weights = np.asarray(weights, dtype=float)
        self.means = np.atleast_2d(np.asarray(means, dtype=float))
        self.variance = float(variance)
        if self.variance <= 0:
            raise ValueError("mixture variance must be positive")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must lie on the simplex")
        if self.means.shape[0] != self.weights.shape[0]:
            raise ValueError("one mean per weight required")
        self.dim = self.means.shape[1]

    @classmethod
    def standard_normal(cls, dim: int = 1) -> "GaussianMixtureTarget":
        return cls([1.0], np.zeros((1, dim)), 1.0)

    @classmethod
    def circle(cls, n_modes: int = 10, radius: float = 4.0, variance: float = 0.1):
        ang = 2.0 * np.pi * np.arange(n_modes) / n_modes
        means = radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        return cls(np.full(n_modes, 1.0 / n_modes), means, variance)

    @classmethod
    def two_bumps(cls, m: float, left_weight: float = 0.5, shift: float = 0.0):
        """w N(shift - m, 1) + (1 - w) N(shift + m, 1) in one dimension."""
        return cls([left_weight, 1.0 - left_weight], [[shift - m], [shift + m]], 1.0)

    def _component_logits(self, xb):
        diff = xb[:, None, :] - self.means[None, :, :]
        sq = np.sum(diff * diff, axis=-1)
        norm = -0.5 * self.dim * math.log(2.0 * math.pi * self.variance)
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        return logw[None, :] - sq / (2.0 * self.variance) + norm

    def log_density(self, x):
        xb, single = self._batch(x)
        out = logsumexp(self._component_logits(xb), axis=1)
        return out[0] if single else out

    def score(self, x):
        xb, single = self._batch(x)
        logits = self._component_logits(xb)
        resp = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
        # explicit products (no fused multiply-add) so antipodal means cancel exactly
        pull = np.sum(resp[:, :, None] * self.means[None, :, :], axis=1)
        out = (pull - xb) / self.variance
        return out[0] if single else out

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        noise = rng.standard_normal((n, self.dim))
        return self.means[comp] + math.sqrt(self.variance) * noise


class MonomialGammaTarget(Target):
    """pi(x) proportional to exp(-a sum |x_i|^b), 0 < b < 1.

    The score is singular at zero, so inside ``|x_i| < epsilon`` the
    log-density is continued linearly in ``|x_i|``; this keeps the score
    bounded and still the exact gradient of ``log_density``.
    """

    def __init__(self, a: float = 0.3, b: float = 0.9, dim: int = 2, epsilon: float = 1e-4):
        if not 0 < b < 1:
            raise ValueError("monomial gamma exponent must lie in (0, 1)")
        if epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        self.a, self.b, self.dim, self.epsilon = float(a), float(b), int(dim), float(epsilon)

    def _coord_logp(self, ax):
        a, b, eps = self.a, self.b, self.epsilon
        if eps == 0:
            return -a * ax**b
        inner = -a * eps**b - a * b * eps ** (b - 1.0) * (ax - eps)
        return np.where(ax >= eps, -a * np.maximum(ax, eps) ** b, inner)

    def log_density(self, x):
        xb, single = self._batch(x)
        out = np.sum(self._coord_logp(np.abs(xb)), axis=1)
        return out[0] if single else out

    def score(self, x):
        xb, single = self._batch(x)
        mag = np.abs(xb)
        if self.epsilon > 0:
            mag = np.maximum(mag, self.epsilon)
        with np.errstate(divide="ignore"):
            out = -self.a * self.b * np.sign(xb) * mag ** (self.b - 1.0)
        return out[0] if single else out

    def log_normalizer(self) -> float:
        """log of the integral of exp(log_density) over R^dim (exact)."""
        a, b, eps = self.a, self.b, self.epsilon
        s = 1.0 / b
        # integral of exp(-a x^b) on [eps, inf)
        tail = math.exp(gammaln(s) - s * math.log(a)) / b * gammaincc(s, a * eps**b)
        if eps > 0:
            slope = a * b * eps ** (b - 1.0)
            head = math.exp(-a * eps**b) * (math.exp(slope * eps) - 1.0) / slope
        else:
            head = 0.0
        return self.dim * math.log(2.0 * (head + tail))


class ConditionedDiffusionTarget(Target):
    """Posterior over Brownian increments of a double-well SDE given noisy observations.

    State ``x`` holds the ``K`` Euler-Maruyama increments.  The path obeys
    ``u_{j+1} = u_j + b(u_j) dt + x_{j+1}`` with ``u_0 = 0`` and
    ``b(u) = c u (1 - u^2) / (1 + u^2)`` (``c = drift_scale``, 10 by default).
    Observations are ``u`` at every ``stride``-th step plus N(0, sigma^2) noise.
    """

    def __init__(self, y, n_steps: int = 100, dt: float = 0.01, stride: int = 5,
                 sigma: float = 0.1, drift_scale: float = 10.0):
        if n_steps % stride:
            raise ValueError("n_steps must be divisible by stride")
        if sigma <= 0 or dt <= 0:
            raise ValueError("sigma and dt must be positive")
        self.n_steps, self.dt, self.stride = int(n_steps), float(dt), int(stride)
        self.sigma, self.drift_scale = float(sigma), float(drift_scale)
        self.dim = self.n_steps
        self.n_obs = self.n_steps // self.stride
        self.y = np.asarray(y, dtype=float)
        if self.y.shape != (self.n_obs,):
            raise ValueError(f"expected {self.n_obs} observations, got shape {self.y.shape}")

    @classmethod
    def generate(cls, n_steps: int = 100, dt: float = 0.01, stride: int = 5,
                 sigma: float = 0.1, seed: int = 2023, drift_scale: float = 10.0):
        """Draw a true increment path from the prior, observe it with noise."""
        rng = np.random.Generator(np.random.Philox(key=seed))
        x_true = math.sqrt(dt) * rng.standard_normal(n_steps)
        tmp = cls(np.zeros(n_steps // stride), n_steps, dt, stride, sigma, drift_scale)
        y = tmp.forward(x_true) + sigma * rng.standard_normal(tmp.n_obs)
        target = cls(y, n_steps, dt, stride, sigma, drift_scale)
        target.x_true = x_true
        return target

    def drift(self, u):
        return self.drift_scale * u * (1.0 - u * u) / (1.0 + u * u)

    def drift_prime(self, u):
        u2 = u * u
        return self.drift_scale * (1.0 - 4.0 * u2 - u2 * u2) / (1.0 + u2) ** 2

    def _path(self, xb):
        n = xb.shape[0]
        u = np.zeros((n, self.n_steps + 1))
        for j in range(self.n_steps):
            u[:, j + 1] = u[:, j] + self.drift(u[:, j]) * self.dt + xb[:, j]
        return u

    def forward(self, x):
        """Observation operator: u at steps stride, 2 stride, ..., K."""
        xb, single = self._batch(x)
        u = self._path(xb)
        obs = u[:, self.stride :: self.stride]
        return obs[0] if single else obs

    def log_density(self, x):
        xb, single = self._batch(x)
        resid = self.y[None, :] - self._path(xb)[:, self.stride :: self.stride]
        out = (-np.sum(xb * xb, axis=1) / (2.0 * self.dt)
               - np.sum(resid * resid, axis=1) / (2.0 * self.sigma**2))
        return out[0] if single else out

    def score(self, x):
        xb, single = self._batch(x)
        u = self._path(xb)
        resid = (self.y[None, :] - u[:, self.stride :: self.stride]) / self.sigma**2
        # adjoint sweep: lam holds d(resid . F)/d u_{j+1}
        grad = np.empty_like(xb)
        lam = np.zeros(xb.shape[0])
        for j in range(self.n_steps - 1, -1, -1):
            if (j + 1) % self.stride == 0:
                lam = lam + resid[:, (j + 1) // self.stride - 1]
            grad[:, j] = lam
            lam = lam * (1.0 + self.drift_prime(u[:, j]) * self.dt)
        out = grad - xb / self.dt
        return out[0] if single else out

    def prior_sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return math.sqrt(self.dt) * rng.standard_normal((n, self.dim))


def cd_forward(target: ConditionedDiffusionTarget, x):
    """Noise-free observations of the path driven by increments ``x``."""
    return target.forward(x)


def cd_score(target: ConditionedDiffusionTarget, x):
    """Posterior score via the adjoint sweep (see ``ConditionedDiffusionTarget.score``)."""
    return target.score(x)
