"""Transformer encoder block (multi-head self-attention + MLP) in numpy.

Forward and hand-written backward passes, float64 throughout. Feature maps
enter as ``N = H * W`` tokens of width ``C``; there is no positional encoding,
so the block is equivariant to token permutations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Dict, Optional, Tuple

import numpy as np

LN_EPS = 1e-5
GELU_K = math.sqrt(2.0 / math.pi)


@dataclass
class EncoderParams:
    """Weights of one encoder block.

    Projection matrices act on row vectors (``y = x @ W + b``). Head ``h``
    owns columns ``h*d:(h+1)*d`` of the query/key/value projections.
    """

    heads: int
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray

    def __post_init__(self):
        c = self.wq.shape[0]
        if self.heads < 1 or c % self.heads:
            raise ValueError(f"width {c} is not divisible by {self.heads} heads")
        for name in ("wq", "wk", "wv", "wo"):
            if getattr(self, name).shape != (c, c):
                raise ValueError(f"{name} must be {c}x{c}, got {getattr(self, name).shape}")
        hidden = self.w1.shape[1]
        if self.w1.shape != (c, hidden) or self.w2.shape != (hidden, c):
            raise ValueError("MLP weights are not dimension-consistent")

    @property
    def width(self) -> int:
        return self.wq.shape[0]

    @property
    def head_dim(self) -> int:
        return self.width // self.heads

    def arrays(self) -> Dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "heads"}

    @classmethod
    def from_arrays(cls, heads: int, arrays: Dict[str, np.ndarray]) -> "EncoderParams":
        return cls(heads=heads, **{k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()})

    @classmethod
    def init(cls, width: int, heads: int, rng: np.random.Generator, expansion: int = 4,
             scale: float = 0.3) -> "EncoderParams":
        c, hid = width, width * expansion

        def mat(a, b):
            return rng.normal(0.0, scale / math.sqrt(a), size=(a, b))

        def vec(n):
            return rng.normal(0.0, 0.1, size=n)

        return cls(
            heads=heads,
            wq=mat(c, c), bq=vec(c), wk=mat(c, c), bk=vec(c), wv=mat(c, c), bv=vec(c),
            wo=mat(c, c), bo=vec(c), w1=mat(c, hid), b1=vec(hid), w2=mat(hid, c), b2=vec(c),
            ln1_g=1.0 + vec(c), ln1_b=vec(c), ln2_g=1.0 + vec(c), ln2_b=vec(c),
        )

    @classmethod
    def zeros_like_block(cls, width: int, heads: int, expansion: int = 4) -> "EncoderParams":
        """All projections zero, layer norms at identity: the block is a pass-through."""
        c, hid = width, width * expansion
        z = np.zeros
        return cls(
            heads=heads, wq=z((c, c)), bq=z(c), wk=z((c, c)), bk=z(c), wv=z((c, c)), bv=z(c),
            wo=z((c, c)), bo=z(c), w1=z((c, hid)), b1=z(hid), w2=z((hid, c)), b2=z(c),
            ln1_g=np.ones(c), ln1_b=z(c), ln2_g=np.ones(c), ln2_b=z(c),
        )


# -- layer norm ---------------------------------------------------------------

def _ln_forward(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * rstd
    return g * xhat + b, (xhat, rstd, g)


def _ln_backward(dout, cache):
    xhat, rstd, g = cache
    dg = (dout * xhat).sum(axis=0)
    db = dout.sum(axis=0)
    dxhat = dout * g
    dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                 - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dg, db


# -- gelu (tanh form) -----------------------------------------------------------

def _gelu(x):
    t = np.tanh(GELU_K * (x + 0.044715 * x ** 3))
    return 0.5 * x * (1.0 + t), t


def _gelu_grad(x, t):
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3 * 0.044715 * x * x)


def _softmax(s):
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def _dropout(x, rate, train_mode, rng):
    if not train_mode or rate <= 0.0:
        return x, None
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def _check_input(x, p: EncoderParams):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"expected tokens of shape [N, C], got {x.shape}")
    if x.shape[1] != p.width:
        raise ValueError(f"token width {x.shape[1]} does not match params width {p.width}")
    return x


# -- attention ------------------------------------------------------------------

def _split(t, heads):
    n, c = t.shape
    return t.reshape(n, heads, c // heads).transpose(1, 0, 2)  # [h, N, d]


def _merge(t):
    h, n, d = t.shape
    return t.transpose(1, 0, 2).reshape(n, h * d)


def _mha_forward(a, p: EncoderParams):
    q = a @ p.wq + p.bq
    k = a @ p.wk + p.bk
    v = a @ p.wv + p.bv
    qh, kh, vh = _split(q, p.heads), _split(k, p.heads), _split(v, p.heads)
    scale = 1.0 / math.sqrt(p.head_dim)
    probs = _softmax(qh @ kh.transpose(0, 2, 1) * scale)
    o = _merge(probs @ vh)
    out = o @ p.wo + p.bo
    return out, (a, qh, kh, vh, probs, o, scale)


def _mha_backward(dout, cache, p: EncoderParams):
    a, qh, kh, vh, probs, o, scale = cache
    g = {"wo": o.T @ dout, "bo": dout.sum(axis=0)}
    do = _split(dout @ p.wo.T, p.heads)
    dprobs = do @ vh.transpose(0, 2, 1)
    dvh = probs.transpose(0, 2, 1) @ do
    ds = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True)) * scale
    dqh = ds @ kh
    dkh = ds.transpose(0, 2, 1) @ qh
    dq, dk, dv = _merge(dqh), _merge(dkh), _merge(dvh)
    g["wq"], g["bq"] = a.T @ dq, dq.sum(axis=0)
    g["wk"], g["bk"] = a.T @ dk, dk.sum(axis=0)
    g["wv"], g["bv"] = a.T @ dv, dv.sum(axis=0)
    da = dq @ p.wq.T + dk @ p.wk.T + dv @ p.wv.T
    return da, g


def attention_weights(x, p: EncoderParams) -> np.ndarray:
    """Softmax attention maps, shape ``[heads, N, N]``, rows sum to 1."""
    x = _check_input(x, p)
    _, cache = _mha_forward(x, p)
    return cache[4]


def multi_head_attention(x, p: EncoderParams) -> np.ndarray:
    """Scaled dot-product self-attention over tokens ``x`` of shape ``[N, C]``."""
    x = _check_input(x, p)
    return _mha_forward(x, p)[0]


# -- MLP --------------------------------------------------------------------------

def _mlp_forward(c, p: EncoderParams):
    m1 = c @ p.w1 + p.b1
    act, t = _gelu(m1)
    return act @ p.w2 + p.b2, (c, m1, t, act)


def _mlp_backward(dout, cache, p: EncoderParams):
    c, m1, t, act = cache
    g = {"w2": act.T @ dout, "b2": dout.sum(axis=0)}
    dm1 = (dout @ p.w2.T) * _gelu_grad(m1, t)
    g["w1"], g["b1"] = c.T @ dm1, dm1.sum(axis=0)
    return dm1 @ p.w1.T, g


# -- encoder block ------------------------------------------------------------------

def encoder_forward_cached(
    x,
    p: EncoderParams,
    train_mode: bool = False,
    dropout: float = 0.0,
    rng: Optional[np.random.Generator] = None,
    pre_norm: bool = True,
):
    x = _check_input(x, p)
    if pre_norm:
        a, ln1 = _ln_forward(x, p.ln1_g, p.ln1_b)
        att, mha = _mha_forward(a, p)
        att, m_att = _dropout(att, dropout, train_mode, rng)
        y = x + att
        c, ln2 = _ln_forward(y, p.ln2_g, p.ln2_b)
        mlp, mlpc = _mlp_forward(c, p)
        mlp, m_mlp = _dropout(mlp, dropout, train_mode, rng)
        out = y + mlp
    else:
        att, mha = _mha_forward(x, p)
        att, m_att = _dropout(att, dropout, train_mode, rng)
        y, ln1 = _ln_forward(x + att, p.ln1_g, p.ln1_b)
        mlp, mlpc = _mlp_forward(y, p)
        mlp, m_mlp = _dropout(mlp, dropout, train_mode, rng)
        out, ln2 = _ln_forward(y + mlp, p.ln2_g, p.ln2_b)
    return out, (pre_norm, ln1, mha, m_att, ln2, mlpc, m_mlp)


def encoder_backward(dout, cache, p: EncoderParams) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """Gradients of a scalar loss w.r.t. the block input and every parameter."""
    pre_norm, ln1, mha, m_att, ln2, mlpc, m_mlp = cache
    grads: Dict[str, np.ndarray] = {}
    if pre_norm:
        dy = dout.copy()
        dmlp = dout if m_mlp is None else dout * m_mlp
        dc, g = _mlp_backward(dmlp, mlpc, p)
        grads.update(g)
        dy_ln, grads["ln2_g"], grads["ln2_b"] = _ln_backward(dc, ln2)
        dy += dy_ln
        dx = dy.copy()
        datt = dy if m_att is None else dy * m_att
        da, g = _mha_backward(datt, mha, p)
        grads.update(g)
        dx_ln, grads["ln1_g"], grads["ln1_b"] = _ln_backward(da, ln1)
        dx += dx_ln
    else:
        dsum, grads["ln2_g"], grads["ln2_b"] = _ln_backward(dout, ln2)
        dy = dsum.copy()
        dmlp = dsum if m_mlp is None else dsum * m_mlp
        dy_mlp, g = _mlp_backward(dmlp, mlpc, p)
        grads.update(g)
        dy += dy_mlp
        dsum1, grads["ln1_g"], grads["ln1_b"] = _ln_backward(dy, ln1)
        dx = dsum1.copy()
        datt = dsum1 if m_att is None else dsum1 * m_att
        dx_att, g = _mha_backward(datt, mha, p)
        grads.update(g)
        dx += dx_att
    return dx, grads


def transformer_encoder_forward(
    x,
    p: EncoderParams,
    train_mode: bool = False,
    dropout: float = 0.0,
    rng: Optional[np.random.Generator] = None,
    pre_norm: bool = True,
) -> np.ndarray:
    """One encoder block: ``y = x + MHA(LN(x))``, ``out = y + MLP(LN(y))``.

    With ``pre_norm=False`` the post-norm ordering is used instead. Dropout is
    inverted dropout and only active when ``train_mode`` is set.
    """
    return encoder_forward_cached(x, p, train_mode, dropout, rng, pre_norm)[0]


def encode_feature_map(f, p: EncoderParams, pre_norm: bool = True) -> np.ndarray:
    """Run the block over a ``[C, H, W]`` map as ``H*W`` tokens and fold back."""
    f = np.asarray(f, dtype=np.float64)
    c, h, w = f.shape
    tokens = f.reshape(c, h * w).T
    out = transformer_encoder_forward(tokens, p, pre_norm=pre_norm)
    return out.T.reshape(c, h, w)
