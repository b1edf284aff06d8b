"""CBAM: channel attention followed by spatial attention, numpy forward/backward."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np


def sigmoid(x):
    # split by sign so large magnitudes never overflow exp
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass
class CbamParams:
    """Shared channel MLP ``C -> C/r -> C`` and a ``2 x k x k`` spatial kernel."""

    w1: np.ndarray  # [C/r, C]
    b1: np.ndarray
    w2: np.ndarray  # [C, C/r]
    b2: np.ndarray
    conv: np.ndarray  # [2, k, k]; channel 0 sees the mean map, 1 the max map
    conv_b: np.ndarray  # [1]

    def __post_init__(self):
        hid, c = self.w1.shape
        if self.w2.shape != (c, hid) or self.b1.shape != (hid,) or self.b2.shape != (c,):
            raise ValueError("channel MLP weights are not dimension-consistent")
        k = self.conv.shape[-1]
        if self.conv.shape != (2, k, k) or k % 2 == 0:
            raise ValueError(f"spatial kernel must be 2 x k x k with odd k, got {self.conv.shape}")

    @property
    def channels(self) -> int:
        return self.w1.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.conv.shape[-1]

    def arrays(self) -> Dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2,
                "conv": self.conv, "conv_b": self.conv_b}

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]) -> "CbamParams":
        return cls(**{k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()})

    @classmethod
    def init(cls, channels: int, rng: np.random.Generator, reduction: int = 16,
             kernel_size: int = 7) -> "CbamParams":
        if channels % reduction:
            raise ValueError(f"reduction {reduction} does not divide {channels} channels")
        hid = channels // reduction
        return cls(
            w1=rng.normal(0, 1 / math.sqrt(channels), (hid, channels)),
            b1=rng.normal(0, 0.1, hid),
            w2=rng.normal(0, 1 / math.sqrt(hid), (channels, hid)),
            b2=rng.normal(0, 0.1, channels),
            conv=rng.normal(0, 1 / kernel_size, (2, kernel_size, kernel_size)),
            conv_b=rng.normal(0, 0.1, 1),
        )

    @classmethod
    def zeros(cls, channels: int, reduction: int = 16, kernel_size: int = 7) -> "CbamParams":
        hid = max(channels // reduction, 1)
        return cls(np.zeros((hid, channels)), np.zeros(hid), np.zeros((channels, hid)),
                   np.zeros(channels), np.zeros((2, kernel_size, kernel_size)), np.zeros(1))


def _mlp(z, p):
    h = p.w1 @ z + p.b1
    r = np.maximum(h, 0.0)
    return p.w2 @ r + p.b2, (z, h, r)


def _mlp_backward(dout, cache, p, g):
    z, h, r = cache
    g["w2"] += np.outer(dout, r)
    g["b2"] += dout
    dh = (p.w2.T @ dout) * (h > 0)
    g["w1"] += np.outer(dh, z)
    g["b1"] += dh
    return p.w1.T @ dh


def _conv_same(x, kernel, bias):
    """Cross-correlate a ``[2, H, W]`` map with ``[2, k, k]``, zero padding."""
    _, h, w = x.shape
    k = kernel.shape[-1]
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    out = np.full((h, w), bias[0], dtype=np.float64)
    for a in range(k):
        for b in range(k):
            out += np.tensordot(kernel[:, a, b], xp[:, a:a + h, b:b + w], axes=1)
    return out, xp


def _conv_backward(dout, xp, kernel):
    k = kernel.shape[-1]
    h, w = dout.shape
    dk = np.empty_like(kernel)
    dxp = np.zeros_like(xp)
    for a in range(k):
        for b in range(k):
            dk[:, a, b] = (xp[:, a:a + h, b:b + w] * dout).sum(axis=(1, 2))
            dxp[:, a:a + h, b:b + w] += kernel[:, a, b][:, None, None] * dout
    pad = k // 2
    return dxp[:, pad:pad + h, pad:pad + w], dk, np.array([dout.sum()])


def _check(f, p: CbamParams):
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 3 or f.shape[0] != p.channels:
        raise ValueError(f"expected a [{p.channels}, H, W] map, got {f.shape}")
    return f


def channel_attention(f, p: CbamParams) -> np.ndarray:
    f = _check(f, p)
    avg = f.mean(axis=(1, 2))
    mx = f.max(axis=(1, 2))
    return sigmoid(_mlp(avg, p)[0] + _mlp(mx, p)[0])


def cbam_forward_cached(f, p: CbamParams):
    f = _check(f, p)
    c, h, w = f.shape
    flat = f.reshape(c, -1)
    avg = flat.mean(axis=1)
    arg_c = flat.argmax(axis=1)
    mx = flat[np.arange(c), arg_c]
    ma, ca = _mlp(avg, p)
    mm, cm = _mlp(mx, p)
    mc = sigmoid(ma + mm)
    f1 = mc[:, None, None] * f
    sa = f1.mean(axis=0)
    arg_s = f1.argmax(axis=0)
    sm = np.take_along_axis(f1, arg_s[None], axis=0)[0]
    z, xp = _conv_same(np.stack([sa, sm]), p.conv, p.conv_b)
    ms = sigmoid(z)
    out = ms[None] * f1
    return out, (f, arg_c, ca, cm, mc, f1, arg_s, xp, ms)


def cbam_backward(dout, cache, p: CbamParams) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    f, arg_c, ca, cm, mc, f1, arg_s, xp, ms = cache
    c, h, w = f.shape
    g = {k: np.zeros_like(v) for k, v in p.arrays().items()}

    # out = ms * f1
    dms = (dout * f1).sum(axis=0)
    df1 = dout * ms[None]
    dz = dms * ms * (1.0 - ms)
    dpooled, g["conv"], g["conv_b"] = _conv_backward(dz, xp, p.conv)
    df1 += dpooled[0][None] / c
    np.put_along_axis(df1, arg_s[None],
                      np.take_along_axis(df1, arg_s[None], axis=0) + dpooled[1][None], axis=0)

    # f1 = mc * f
    dmc = (df1 * f).sum(axis=(1, 2))
    df = df1 * mc[:, None, None]
    dlogit = dmc * mc * (1.0 - mc)
    davg = _mlp_backward(dlogit, ca, p, g)
    dmx = _mlp_backward(dlogit, cm, p, g)
    df += davg[:, None, None] / (h * w)
    flat = df.reshape(c, -1)
    flat[np.arange(c), arg_c] += dmx
    return flat.reshape(c, h, w), g


def cbam_forward(f, p: CbamParams) -> np.ndarray:
    """Refine a ``[C, H, W]`` map: ``Ms * (Mc * f)``.

    ``Mc = sigmoid(MLP(avgpool f) + MLP(maxpool f))`` per channel, then
    ``Ms = sigmoid(conv_k([mean_c; max_c]))`` per position.
    """
    return cbam_forward_cached(f, p)[0]
