"""Dense numeric primitives shared by the pipeline.

Everything here is a pure function of its inputs. Randomness only enters
through :meth:`Perceptron.init`, which takes an explicit seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: Additive attention-mask value for blocked entries.
NEG_INF = -np.inf

LOGIT_CLAMP = 50.0


def sigmoid(x):
    x = np.clip(np.asarray(x, dtype=np.float64), -LOGIT_CLAMP, LOGIT_CLAMP)
    return 1.0 / (1.0 + np.exp(-x))


def masked_softmax(logits, mask):
    """Row-wise softmax of ``logits + mask``.

    ``mask`` holds 0 for allowed entries and ``-inf`` for blocked ones.
    Rows in which every entry is blocked fall back to a plain softmax over
    the raw logits, so the output never contains NaN.
    """
    logits = np.asarray(logits, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if logits.shape != mask.shape:
        raise ValueError(f"logits shape {logits.shape} != mask shape {mask.shape}")
    if logits.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {logits.shape}")
    if logits.shape[1] == 0:
        return np.zeros_like(logits)

    blocked = np.isneginf(mask)
    dead = blocked.all(axis=1)
    z = np.where(blocked, NEG_INF, logits + mask)
    z[dead] = logits[dead]

    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class PEConfig:
    dims_per_axis: int = 128
    temperature: float = 20.0

    def __post_init__(self):
        if self.dims_per_axis <= 0 or self.dims_per_axis % 2:
            raise ValueError(f"dims_per_axis must be even and positive, got {self.dims_per_axis}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")


def sinusoidal_pe(x, cfg: PEConfig = PEConfig()):
    """Sine/cosine encoding of a scalar (or array of scalars).

    Output has a trailing axis of length ``cfg.dims_per_axis`` with
    ``out[..., 2i] = sin(x / T**(2i/C'))`` and ``out[..., 2i+1]`` the cosine.
    """
    x = np.asarray(x, dtype=np.float64)
    half = cfg.dims_per_axis // 2
    freq = cfg.temperature ** (-2.0 * np.arange(half) / cfg.dims_per_axis)
    angle = x[..., None] * freq
    out = np.empty(x.shape + (cfg.dims_per_axis,), dtype=np.float64)
    out[..., 0::2] = np.sin(angle)
    out[..., 1::2] = np.cos(angle)
    return out


def bilinear_sample(grid, u, v):
    """Sample ``grid`` (h x w or h x w x C) at column ``u`` and row ``v``.

    Grid cells sit at integer coordinates. ``u`` and ``v`` may be scalars or
    equal-shape arrays; valid range is ``0 <= u < w`` and ``0 <= v < h``.
    The last row/column is clamped, so sampling in ``[w-1, w)`` reads the edge.
    """
    grid = np.asarray(grid)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    h, w = grid.shape[:2]
    if np.any(~np.isfinite(u)) or np.any(~np.isfinite(v)):
        raise ValueError("sample coordinates must be finite")
    if np.any((u < 0) | (u >= w) | (v < 0) | (v >= h)):
        raise ValueError(f"sample coordinates outside grid of size {w}x{h}")

    x0 = np.floor(u).astype(np.intp)
    y0 = np.floor(v).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = u - x0
    fy = v - y0
    if grid.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]

    g = grid.astype(np.float64, copy=False)
    top = g[y0, x0] * (1.0 - fx) + g[y0, x1] * fx
    bottom = g[y1, x0] * (1.0 - fx) + g[y1, x1] * fx
    return top * (1.0 - fy) + bottom * fy


@dataclass
class Perceptron:
    """Two affine layers with a tanh in between."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    activation: bool = True

    @classmethod
    def init(cls, input_dim, output_dim, hidden_dim=None, seed=0):
        hidden_dim = input_dim if hidden_dim is None else hidden_dim
        rng = np.random.default_rng(seed)
        lim1 = 1.0 / np.sqrt(input_dim)
        lim2 = 1.0 / np.sqrt(hidden_dim)
        return cls(
            w1=rng.uniform(-lim1, lim1, (input_dim, hidden_dim)),
            b1=rng.uniform(-lim1, lim1, hidden_dim),
            w2=rng.uniform(-lim2, lim2, (hidden_dim, output_dim)),
            b2=rng.uniform(-lim2, lim2, output_dim),
        )

    @classmethod
    def zeros(cls, input_dim, output_dim, hidden_dim=None):
        hidden_dim = input_dim if hidden_dim is None else hidden_dim
        return cls(
            w1=np.zeros((input_dim, hidden_dim)),
            b1=np.zeros(hidden_dim),
            w2=np.zeros((hidden_dim, output_dim)),
            b2=np.zeros(output_dim),
        )

    @classmethod
    def identity(cls, dim):
        return cls(
            w1=np.eye(dim), b1=np.zeros(dim), w2=np.eye(dim), b2=np.zeros(dim), activation=False
        )

    @property
    def input_dim(self):
        return self.w1.shape[0]

    @property
    def output_dim(self):
        return self.w2.shape[1]

    def __call__(self, x):
        return perceptron_forward(self, x)


def perceptron_forward(p: Perceptron, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != p.input_dim:
        raise ValueError(f"expected input with {p.input_dim} columns, got shape {x.shape}")
    hidden = x @ p.w1 + p.b1
    if p.activation:
        hidden = np.tanh(hidden)
    return hidden @ p.w2 + p.b2
