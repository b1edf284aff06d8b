"""Central finite-difference verification of hand-written backward passes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Mapping, Optional

import numpy as np

from .cbam import CbamParams, cbam_backward, cbam_forward_cached
from .encoder import EncoderParams, encoder_backward, encoder_forward_cached
from .heads import HeadSpec, decode_dense_backward, decode_dense_cached

# relative errors are taken against max(|analytic|, |numeric|, REL_FLOOR)
REL_FLOOR = 1e-6


@dataclass
class Differentiable:
    """A forward/backward pair closed over live parameter arrays.

    ``forward(x) -> (out, cache)``; ``backward(dout, cache) -> (dx, grads)``
    where ``grads`` maps every name in ``params`` to its gradient.
    """

    forward: Callable
    backward: Callable
    params: Mapping[str, np.ndarray]


def linear_block(w: np.ndarray, b: np.ndarray) -> Differentiable:
    def fwd(x):
        return x @ w + b, x

    def bwd(dout, x):
        return dout @ w.T, {"w": x.T @ dout, "b": dout.sum(axis=0)}

    return Differentiable(fwd, bwd, {"w": w, "b": b})


def encoder_block(p: EncoderParams, pre_norm: bool = True) -> Differentiable:
    return Differentiable(
        lambda x: encoder_forward_cached(x, p, pre_norm=pre_norm),
        lambda dout, cache: encoder_backward(dout, cache, p),
        p.arrays(),
    )


def cbam_block(p: CbamParams) -> Differentiable:
    return Differentiable(
        lambda f: cbam_forward_cached(f, p),
        lambda dout, cache: cbam_backward(dout, cache, p),
        p.arrays(),
    )


def decode_block(spec: HeadSpec) -> Differentiable:
    return Differentiable(
        lambda raw: decode_dense_cached(raw, spec),
        lambda dout, cache: (decode_dense_backward(dout, cache), {}),
        {},
    )


def _loss(op: Differentiable, x, weights) -> float:
    out, _ = op.forward(x)
    return float(np.sum(out if weights is None else out * weights))


def _numeric_grad(op, arr: np.ndarray, x, eps, weights) -> np.ndarray:
    grad = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = _loss(op, x, weights)
        flat[i] = orig - eps
        down = _loss(op, x, weights)
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * eps)
    return grad


def _rel_error(a: np.ndarray, n: np.ndarray) -> float:
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(n))):
        raise FloatingPointError("non-finite gradient encountered")
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), REL_FLOOR)
    return float(np.max(np.abs(a - n) / denom))


def grad_check_report(
    op: Differentiable,
    x,
    eps: float = 1e-5,
    loss_weights: Optional[np.ndarray] = None,
) -> Dict[str, float]:
    """Max relative error per parameter (and ``"input"``) for loss = sum(out [* weights])."""
    x = np.array(x, dtype=np.float64)
    out, cache = op.forward(x)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite forward output")
    dout = np.ones_like(out) if loss_weights is None else np.asarray(loss_weights, dtype=np.float64)
    dx, grads = op.backward(dout, cache)
    report = {}
    for name, arr in op.params.items():
        report[name] = _rel_error(grads[name], _numeric_grad(op, arr, x, eps, loss_weights))
    report["input"] = _rel_error(dx, _numeric_grad(op, x, x, eps, loss_weights))
    return report


def grad_check(op: Differentiable, x, eps: float = 1e-5,
               loss_weights: Optional[np.ndarray] = None) -> float:
    """Largest relative error between analytic and central-difference gradients."""
    return max(grad_check_report(op, x, eps, loss_weights).values())
