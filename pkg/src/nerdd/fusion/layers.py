"""Forward/backward primitives for the fusion network.

Each forward returns (output, cache); the matching backward consumes the
upstream gradient plus the cache, writes parameter gradients into the
ParamStore, and returns gradients for its tensor inputs. Everything is
float64 and single-threaded, so results are bit-reproducible.
"""

from __future__ import annotations

import numpy as np

from .params import ParamStore

LN_EPS = 1e-6


def linear_fwd(x, w, b=None):
    y = x @ w
    if b is not None:
        y = y + b
    return y, (x, w, b is not None)


def linear_bwd(dy, cache):
    x, w, has_b = cache
    dx = dy @ w.T
    dw = x.T @ dy
    db = dy.sum(axis=0) if has_b else None
    return dx, dw, db


def softmax_rows(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows_bwd(dp, p):
    return p * (dp - (dp * p).sum(axis=-1, keepdims=True))


def relu_fwd(x):
    return np.maximum(x, 0.0), x > 0


def relu_bwd(dy, mask):
    return dy * mask


def sigmoid_fwd(x):
    y = 1.0 / (1.0 + np.exp(-x))
    return y, y


def sigmoid_bwd(dy, y):
    return dy * y * (1.0 - y)


def layernorm_fwd(x, gain, shift):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return gain * xhat + shift, (xhat, inv, gain)


def layernorm_bwd(dy, cache):
    xhat, inv, gain = cache
    dgain = (dy * xhat).sum(axis=0)
    dshift = dy.sum(axis=0)
    dxhat = dy * gain
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgain, dshift


def _heads(x, n_heads):
    n, d = x.shape
    return x.reshape(n, n_heads, d // n_heads)


def attention_block_fwd(x_q, x_kv, store: ParamStore, prefix: str, n_heads: int,
                        layer_norm: bool = False):
    """Multi-head scaled-dot-product attention with a residual connection.

    Q comes from x_q, K and V from x_kv (self-attention when they are the
    same tensor). Output = x_q + concat_heads(softmax(QK^T/sqrt(dh)) V) Wo,
    optionally layer-normalized. Zeroing Wv (or Wo) makes the block the
    exact identity on x_q when layer norm is off.
    """
    wq, wk, wv, wo = (store[f"{prefix}.{m}"] for m in ("Wq", "Wk", "Wv", "Wo"))
    q, k, v = x_q @ wq, x_kv @ wk, x_kv @ wv
    dh = q.shape[1] // n_heads
    scale = 1.0 / np.sqrt(dh)
    qh, kh, vh = _heads(q, n_heads), _heads(k, n_heads), _heads(v, n_heads)
    attn = []
    concat = np.empty_like(q)
    for h in range(n_heads):
        s = qh[:, h] @ kh[:, h].T * scale
        a = softmax_rows(s)
        concat[:, h * dh:(h + 1) * dh] = a @ vh[:, h]
        attn.append(a)
    proj = concat @ wo
    out = x_q + proj
    ln_cache = None
    if layer_norm:
        out, ln_cache = layernorm_fwd(out, store[f"{prefix}.ln_g"], store[f"{prefix}.ln_b"])
    cache = (x_q, x_kv, q, k, v, attn, concat, prefix, n_heads, scale, ln_cache)
    return out, cache


def attention_block_bwd(dout, cache, store: ParamStore):
    """Backward for attention_block_fwd; returns (dx_q, dx_kv)."""
    x_q, x_kv, q, k, v, attn, concat, prefix, n_heads, scale, ln_cache = cache
    if ln_cache is not None:
        dout, dgain, dshift = layernorm_bwd(dout, ln_cache)
        store.add_grad(f"{prefix}.ln_g", dgain)
        store.add_grad(f"{prefix}.ln_b", dshift)
    wq, wk, wv, wo = (store[f"{prefix}.{m}"] for m in ("Wq", "Wk", "Wv", "Wo"))
    dx_q = dout.copy()  # residual branch
    dproj = dout
    store.add_grad(f"{prefix}.Wo", concat.T @ dproj)
    dconcat = dproj @ wo.T
    dh = q.shape[1] // n_heads
    qh, kh, vh = _heads(q, n_heads), _heads(k, n_heads), _heads(v, n_heads)
    dq = np.empty_like(q)
    dk = np.empty_like(k)
    dv = np.empty_like(v)
    for h in range(n_heads):
        a = attn[h]
        do_h = dconcat[:, h * dh:(h + 1) * dh]
        da = do_h @ vh[:, h].T
        dv[:, h * dh:(h + 1) * dh] = a.T @ do_h
        ds = softmax_rows_bwd(da, a)
        dq[:, h * dh:(h + 1) * dh] = ds @ kh[:, h] * scale
        dk[:, h * dh:(h + 1) * dh] = ds.T @ qh[:, h] * scale
    store.add_grad(f"{prefix}.Wq", x_q.T @ dq)
    store.add_grad(f"{prefix}.Wk", x_kv.T @ dk)
    store.add_grad(f"{prefix}.Wv", x_kv.T @ dv)
    dx_q += dq @ wq.T
    dx_kv = dk @ wk.T + dv @ wv.T
    return dx_q, dx_kv
