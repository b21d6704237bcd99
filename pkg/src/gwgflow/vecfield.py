"""MLP vector field f_w: R^d -> R^d with hand-written differentiation.

The training objective contains the divergence of f_w in x, and we need its
gradient in w.  Forward-mode tangents (directional derivatives in x) are
propagated alongside the primal pass; the reverse sweep then differentiates
through both the primal and the tangent computations.

Parameters live in one flat float64 buffer.  Layer ``l`` owns its weight
matrix ``W_l`` (shape ``(out, in)``, row-major) followed by its bias ``b_l``;
layers are stored input to output.  ``MlpParams.flat.tobytes()`` is the
snapshot dump format.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import YoungFunction, young_grad, young_value

ACTIVATIONS = ("tanh", "leaky_relu", "identity")
LEAKY_SLOPE = 0.1


class NonFiniteLoss(FloatingPointError):
    def __init__(self, index: int):
        super().__init__(f"non-finite training loss at particle {index}")
        self.index = index


@dataclass
class MlpParams:
    shapes: List[Tuple[int, int]]  # (out, in) per layer
    flat: np.ndarray
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        for (o, _), (_, i) in zip(self.shapes[:-1], self.shapes[1:]):
            if o != i:
                raise ValueError("layer shapes do not chain")
        if self.shapes[0][1] != self.shapes[-1][0]:
            raise ValueError("input and output dimensions must agree")
        if self.flat.shape != (self.size,):
            raise ValueError("flat buffer has the wrong length")

    @property
    def size(self) -> int:
        return sum(o * i + o for o, i in self.shapes)

    @property
    def dim(self) -> int:
        return self.shapes[0][1]

    def layers(self, buf: Optional[np.ndarray] = None):
        """(W, b) views into ``buf`` (defaults to this buffer)."""
        buf = self.flat if buf is None else buf
        out, pos = [], 0
        for o, i in self.shapes:
            w = buf[pos : pos + o * i].reshape(o, i)
            pos += o * i
            b = buf[pos : pos + o]
            pos += o
            out.append((w, b))
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(list(self.shapes), self.flat.copy(), self.activation)

    def zeros_like(self) -> "MlpParams":
        return MlpParams(list(self.shapes), np.zeros_like(self.flat), self.activation)

    @classmethod
    def from_layers(cls, layers: Sequence[Tuple[np.ndarray, np.ndarray]], activation="tanh"):
        shapes = [tuple(np.shape(w)) for w, _ in layers]
        flat = np.concatenate([np.concatenate([np.ravel(w), np.ravel(b)]) for w, b in layers])
        return cls(shapes, flat.astype(float), activation)


def init_mlp(dim: int, widths: Sequence[int], activation: str, rng: np.random.Generator,
             odd: bool = False) -> MlpParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init; ``odd`` zeroes the biases."""
    sizes = [dim, *widths, dim]
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = rng.uniform(-bound, bound, size=fan_out)
        if odd:
            b[:] = 0.0
        layers.append((w, b))
    return MlpParams.from_layers(layers, activation)


def _act(name, z):
    if name == "tanh":
        t = np.tanh(z)
        d1 = 1.0 - t * t
        return t, d1, -2.0 * t * d1
    if name == "leaky_relu":
        d1 = np.where(z > 0, 1.0, LEAKY_SLOPE)
        return z * d1, d1, None
    return z, None, None


def mlp_forward(params: MlpParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    a = np.atleast_2d(x)
    layers = params.layers()
    for l, (w, b) in enumerate(layers):
        z = a @ w.T + b
        a = _act(params.activation, z)[0] if l < len(layers) - 1 else z
    return a[0] if x.ndim == 1 else a


def _matmul3(t: np.ndarray, m: np.ndarray) -> np.ndarray:
    n, p, k = t.shape
    return (np.ascontiguousarray(t).reshape(n * p, k) @ m).reshape(n, p, m.shape[1])


def _tangent_pass(params: MlpParams, x: np.ndarray, probes: np.ndarray):
    """Primal pass with forward-mode tangents; probes has shape (n, P, d)."""
    layers = params.layers()
    a, t = x, probes
    cache = []
    for l, (w, b) in enumerate(layers):
        z = a @ w.T + b
        zt = _matmul3(t, w.T)
        entry = {"a_in": a, "t_in": t}
        if l < len(layers) - 1:
            a, d1, d2 = _act(params.activation, z)
            if d1 is None:
                t = zt
            else:
                t = d1[:, None, :] * zt
            entry.update(zt=zt, d1=d1, d2=d2)
        else:
            a, t = z, zt
        cache.append(entry)
    return a, t, cache


def mlp_jvp(params: MlpParams, x, direction) -> np.ndarray:
    """(df/dx)(x) @ direction via forward-mode tangent propagation."""
    x = np.asarray(x, dtype=float)
    xb = np.atleast_2d(x)
    db = np.broadcast_to(np.asarray(direction, dtype=float), xb.shape)
    _, t, _ = _tangent_pass(params, xb, db[:, None, :])
    out = t[:, 0, :]
    return out[0] if x.ndim == 1 else out


@dataclass(frozen=True)
class DivergenceMode:
    kind: str = "exact"  # "exact" | "hutchinson"
    n_probes: int = 1

    def __post_init__(self):
        if self.kind not in ("exact", "hutchinson"):
            raise ValueError(f"unknown divergence mode {self.kind!r}")
        if self.kind == "hutchinson" and self.n_probes < 1:
            raise ValueError("hutchinson mode needs at least one probe")

    @classmethod
    def hutchinson(cls, n_probes: int = 1) -> "DivergenceMode":
        return cls("hutchinson", n_probes)


def make_probes(mode: DivergenceMode, n: int, d: int,
                rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, float]:
    """Probe directions (n, P, d) and the weight each quadratic form gets."""
    if mode.kind == "exact":
        return np.broadcast_to(np.eye(d), (n, d, d)), 1.0
    if rng is None:
        raise ValueError("hutchinson probes need a random generator")
    signs = rng.integers(0, 2, size=(n, mode.n_probes, d))
    return 2.0 * signs - 1.0, 1.0 / mode.n_probes


def divergence(params: MlpParams, x, mode: DivergenceMode = DivergenceMode(),
               rng: Optional[np.random.Generator] = None, probes=None) -> np.ndarray:
    """Exact or Hutchinson divergence of f_w at x (scalar per point).

    ``probes`` of shape (P, d) or (n, P, d) overrides sampling; they are then
    averaged with equal weight.
    """
    x = np.asarray(x, dtype=float)
    xb = np.atleast_2d(x)
    n, d = xb.shape
    if probes is None:
        probes, weight = make_probes(mode, n, d, rng)
    else:
        probes = np.asarray(probes, dtype=float)
        if probes.ndim == 2:
            probes = np.broadcast_to(probes, (n, *probes.shape))
        if probes.shape[1] == 0:
            raise ValueError("need at least one probe")
        weight = 1.0 if mode.kind == "exact" else 1.0 / probes.shape[1]
    _, t, _ = _tangent_pass(params, xb, probes)
    out = weight * np.einsum("npd,npd->n", probes, t)
    return out[0] if x.ndim == 1 else out


def training_loss_grad(params: MlpParams, particles, target_scores, g: YoungFunction,
                       mode: DivergenceMode = DivergenceMode(),
                       rng: Optional[np.random.Generator] = None, probes=None):
    """Empirical objective mean_i [s_i . f(x_i) + div f(x_i) - g(f(x_i))] and its w-gradient.

    Returns ``(loss, grad)`` where ``grad`` is an ``MlpParams`` with the
    same layout as ``params``.
    """
    x = np.atleast_2d(np.asarray(particles, dtype=float))
    s = np.atleast_2d(np.asarray(target_scores, dtype=float))
    n, d = x.shape
    if n < 1 or s.shape != x.shape or d != params.dim:
        raise ValueError("particles, scores and network dimension disagree")
    if probes is None:
        probes, weight = make_probes(mode, n, d, rng)
    else:
        probes = np.asarray(probes, dtype=float)
        weight = 1.0 if mode.kind == "exact" else 1.0 / probes.shape[1]

    f, ft, cache = _tangent_pass(params, x, probes)
    bad = np.flatnonzero(~np.all(np.isfinite(f), axis=1))
    if bad.size:
        raise NonFiniteLoss(int(bad[0]))
    with np.errstate(over="ignore"):
        per = (np.sum(s * f, axis=1) + weight * np.einsum("npd,npd->n", probes, ft)
               - young_value(g, f))
    bad = np.flatnonzero(~np.isfinite(per))
    if bad.size:
        raise NonFiniteLoss(int(bad[0]))
    loss = float(np.mean(per))

    grad = params.zeros_like()
    glayers = grad.layers()
    layers = params.layers()
    zbar = (s - young_grad(g, f)) / n
    tbar = (weight / n) * probes
    for l in range(len(layers) - 1, -1, -1):
        w, _ = layers[l]
        gw, gb = glayers[l]
        c = cache[l]
        t_in = c["t_in"]
        npr = t_in.shape[1]
        gw[...] = zbar.T @ c["a_in"] + tbar.reshape(n * npr, -1).T @ t_in.reshape(n * npr, -1)
        gb[...] = zbar.sum(axis=0)
        if l == 0:
            break
        abar = zbar @ w
        tabar = _matmul3(tbar, w)
        prev = cache[l - 1]
        d1, d2 = prev["d1"], prev["d2"]
        if d1 is None:
            zbar, tbar = abar, tabar
        else:
            tbar = d1[:, None, :] * tabar
            zbar = d1 * abar
            if d2 is not None:
                zbar = zbar + d2 * np.einsum("npw,npw->nw", prev["zt"], tabar)
    return loss, grad


@dataclass
class OptimizerState:
    """SGD with (Nesterov) momentum or Adam, PyTorch conventions."""

    kind: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    nesterov: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    buf1: Optional[np.ndarray] = None
    buf2: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")


def optimizer_step(state: OptimizerState, params: MlpParams, grad: MlpParams,
                   ascent: bool = True) -> MlpParams:
    """Update ``params`` in place (and return it); ascent flips the sign."""
    gvec = grad.flat if ascent else -grad.flat
    if state.buf1 is None:
        state.buf1 = np.zeros_like(params.flat)
        state.buf2 = np.zeros_like(params.flat)
    state.step_count += 1
    if state.kind == "sgd":
        if state.momentum == 0:
            upd = gvec
        else:
            if state.step_count == 1:
                state.buf1[...] = gvec
            else:
                state.buf1 *= state.momentum
                state.buf1 += gvec
            upd = gvec + state.momentum * state.buf1 if state.nesterov else state.buf1
        params.flat += state.lr * upd
        return params
    state.buf1 *= state.beta1
    state.buf1 += (1.0 - state.beta1) * gvec
    state.buf2 *= state.beta2
    state.buf2 += (1.0 - state.beta2) * gvec * gvec
    mhat = state.buf1 / (1.0 - state.beta1**state.step_count)
    vhat = state.buf2 / (1.0 - state.beta2**state.step_count)
    params.flat += state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return params
