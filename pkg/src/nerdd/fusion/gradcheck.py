"""Central-difference verification of every analytic gradient.

Each op builds a tiny seeded instance (N <= 6, d = 8, N_q <= 5), reduces its
output to a scalar through a fixed random projection, and compares the
hand-written backward pass against central finite differences component by
component. Relative error is |a - n| / max(1, |a|, |n|).

Ops whose loss touches ReLU or L1 kinks (predict_heads, end_to_end) use a
1e-5 step so the probe stays inside one smooth piece; the smooth attention
ops use the standard 1e-3 step.
"""

from __future__ import annotations

from typing import Dict, Optional

import numpy as np

from .config import FusionConfig
from .layers import attention_block_bwd, attention_block_fwd
from .model import (
    backward_detect,
    decode_bwd,
    decode_fwd,
    encode_bwd,
    encode_fwd,
    forward_detect_with_cache,
    fuse_bwd,
    heads_bwd,
    heads_fwd,
    tokenize_bwd,
    tokenize_fwd,
    touched_prefixes,
)
from .params import init_params

GRAD_CHECK_OPS = (
    "pool_fuse",
    "asymmetric_inject",
    "symmetric_fuse",
    "decode_queries",
    "predict_heads",
    "self_attention_encode",
    "tokenize",
    "end_to_end",
)

_SMOOTH_STEP = 1e-3
_KINKED_STEP = 1e-5


def _rel_err(a: np.ndarray, n: np.ndarray) -> float:
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    return float((np.abs(a - n) / denom).max())


def _tiny_cfg(**overrides) -> FusionConfig:
    base = dict(d=8, heads=2, patch=4, n_queries=3, ev_channels=2, rgb_channels=3)
    base.update(overrides)
    return FusionConfig(**base)


def grad_check(op: str = "end_to_end", seed: int = 0, step: Optional[float] = None,
               cfg: Optional[FusionConfig] = None) -> float:
    """Worst relative error between analytic and numeric gradients for `op`."""
    if op not in GRAD_CHECK_OPS:
        raise ValueError(f"unknown grad-check op {op!r}; choose from {GRAD_CHECK_OPS}")
    tensors, forward, analytic, default_step = _build(op, seed, cfg)
    h = step if step is not None else default_step
    exact = analytic()
    worst = 0.0
    for name, arr in tensors.items():
        a_grad = exact[name]
        numeric = np.zeros_like(arr)
        flat = arr.reshape(-1)
        num_flat = numeric.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            f_plus = forward()
            flat[idx] = orig - h
            f_minus = forward()
            flat[idx] = orig
            num_flat[idx] = (f_plus - f_minus) / (2.0 * h)
        worst = max(worst, _rel_err(a_grad, numeric))
    return worst


def _build(op: str, seed: int, cfg: Optional[FusionConfig]):
    """Returns (tensors to perturb, scalar forward, analytic grads, step)."""
    cfg = cfg or _tiny_cfg()
    store = init_params(cfg, seed)
    rng = np.random.default_rng(seed + 1)
    n, d = 4, cfg.d

    def params_of(prefixes) -> Dict[str, np.ndarray]:
        return {
            name: store.values[name]
            for name in store.names()
            if any(name == p or name.startswith(p + ".") for p in prefixes)
        }

    def grads_of(prefixes) -> Dict[str, np.ndarray]:
        return {
            name: store.grads[name].copy()
            for name in store.names()
            if any(name == p or name.startswith(p + ".") for p in prefixes)
        }

    if op == "pool_fuse":
        tensors = {"a": rng.normal(size=(n, d)), "b": rng.normal(size=(n, d))}
        r = rng.normal(size=(n, d))

        def forward():
            return float((((tensors["a"] + tensors["b"]) / 2.0) * r).sum())

        def analytic():
            da, db = fuse_bwd(r, ("pool", None), store)
            return {"a": da, "b": db}

        return tensors, forward, analytic, _SMOOTH_STEP

    if op == "asymmetric_inject":
        tensors = {"main": rng.normal(size=(n, d)), "comp": rng.normal(size=(n, d))}
        tensors.update(params_of(["inj_a"]))
        r = rng.normal(size=(n, d))

        def forward():
            out, _ = attention_block_fwd(tensors["main"], tensors["comp"], store,
                                         "inj_a", cfg.heads, cfg.layer_norm)
            return float((out * r).sum())

        def analytic():
            store.zero_grads()
            _, cache = attention_block_fwd(tensors["main"], tensors["comp"], store,
                                           "inj_a", cfg.heads, cfg.layer_norm)
            dmain, dcomp = attention_block_bwd(r, cache, store)
            out = grads_of(["inj_a"])
            out.update({"main": dmain, "comp": dcomp})
            return out

        return tensors, forward, analytic, _SMOOTH_STEP

    if op == "symmetric_fuse":
        from .model import fuse_fwd

        tensors = {"a": rng.normal(size=(n, d)), "b": rng.normal(size=(n, d))}
        tensors.update(params_of(["inj_a", "inj_b"]))
        r = rng.normal(size=(n, d))

        def forward():
            out, _ = fuse_fwd("sym", tensors["a"], tensors["b"], store, cfg)
            return float((out * r).sum())

        def analytic():
            store.zero_grads()
            _, cache = fuse_fwd("sym", tensors["a"], tensors["b"], store, cfg)
            da, db = fuse_bwd(r, cache, store)
            out = grads_of(["inj_a", "inj_b"])
            out.update({"a": da, "b": db})
            return out

        return tensors, forward, analytic, _SMOOTH_STEP

    if op == "decode_queries":
        tensors = {"fused": rng.normal(size=(n, d))}
        tensors.update(params_of(["dec_a", "queries"]))
        r = rng.normal(size=(cfg.n_queries, d))

        def forward():
            out, _ = decode_fwd(tensors["fused"], store, "dec_a", cfg)
            return float((out * r).sum())

        def analytic():
            store.zero_grads()
            _, caches = decode_fwd(tensors["fused"], store, "dec_a", cfg)
            dfused, _ = decode_bwd(r, caches, store)
            out = grads_of(["dec_a", "queries"])
            out["fused"] = dfused
            return out

        return tensors, forward, analytic, _SMOOTH_STEP

    if op == "predict_heads":
        tensors = {"emb": rng.normal(size=(cfg.n_queries, d))}
        tensors.update(params_of(["cls", "box"]))
        r_p = rng.normal(size=(cfg.n_queries, 2))
        r_b = rng.normal(size=(cfg.n_queries, 4))

        def forward():
            det, _ = heads_fwd(tensors["emb"], store)
            return float((det.probs * r_p).sum() + (det.boxes * r_b).sum())

        def analytic():
            store.zero_grads()
            _, cache = heads_fwd(tensors["emb"], store)
            demb = heads_bwd(r_p, r_b, cache, store)
            out = grads_of(["cls", "box"])
            out["emb"] = demb
            return out

        return tensors, forward, analytic, _KINKED_STEP

    if op == "self_attention_encode":
        tensors = {"x": rng.normal(size=(n, d))}
        tensors.update(params_of(["enc_ev"]))
        r = rng.normal(size=(n, d))

        def forward():
            out, _ = encode_fwd(tensors["x"], store, "enc_ev", cfg)
            return float((out * r).sum())

        def analytic():
            store.zero_grads()
            _, caches = encode_fwd(tensors["x"], store, "enc_ev", cfg)
            dx = encode_bwd(r, caches, store)
            out = grads_of(["enc_ev"])
            out["x"] = dx
            return out

        return tensors, forward, analytic, _SMOOTH_STEP

    if op == "tokenize":
        img = rng.normal(size=(2 * cfg.patch, 2 * cfg.patch, cfg.ev_channels))
        tensors = params_of(["tok_ev"])
        n_tokens = 4
        r = rng.normal(size=(n_tokens, d))

        def forward():
            tokens, _ = tokenize_fwd(img, store, "tok_ev", cfg)
            return float((tokens * r).sum())

        def analytic():
            store.zero_grads()
            _, cache = tokenize_fwd(img, store, "tok_ev", cfg)
            tokenize_bwd(r, cache, store)
            return grads_of(["tok_ev"])

        return tensors, forward, analytic, _SMOOTH_STEP

    # end_to_end: forward_detect + Hungarian-matched set loss, fixed assignment.
    from .. import matching

    e2e_cfg = cfg or _tiny_cfg(strategy="symmetric", cutoff="encoder")
    store = init_params(e2e_cfg, seed)
    rng = np.random.default_rng(seed + 1)
    ev_img = rng.normal(size=(2 * e2e_cfg.patch, 2 * e2e_cfg.patch, e2e_cfg.ev_channels))
    rgb_img = rng.normal(size=(2 * e2e_cfg.patch, 2 * e2e_cfg.patch, e2e_cfg.rgb_channels))
    gt = np.array([[0.3, 0.4, 0.2, 0.25], [0.7, 0.6, 0.15, 0.2]])
    det0, _ = forward_detect_with_cache(ev_img, rgb_img, e2e_cfg, store)
    assignment = matching.hungarian(matching.match_cost(det0, gt))
    tensors = {
        name: store.values[name]
        for name in store.names()
        if any(name == p or name.startswith(p + ".") for p in touched_prefixes(e2e_cfg))
    }

    def forward():
        det, _ = forward_detect_with_cache(ev_img, rgb_img, e2e_cfg, store)
        return matching.set_loss(det, gt, assignment).loss

    def analytic():
        store.zero_grads()
        det, cache = forward_detect_with_cache(ev_img, rgb_img, e2e_cfg, store)
        res = matching.set_loss(det, gt, assignment)
        backward_detect(res.d_probs, res.d_boxes, cache, store)
        return {name: store.grads[name].copy() for name in tensors}

    return tensors, forward, analytic, _KINKED_STEP
