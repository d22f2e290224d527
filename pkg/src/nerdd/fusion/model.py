"""The detection network: tokenizer, encoder, fusion stages, decoder, heads.

A linear patch embedding stands in for the CNN backbone: each patch is
projected to d dims and given a fixed sinusoidal positional term, which
preserves the token-grid interface the fusion blocks need at desk scale.

Fusion wiring by (strategy, cutoff):
  single_*              one stream, no fusion (cutoff ignored)
  * @ backbone          fuse the raw token sets, shared encoder + decoder
  * @ encoder           per-modality encoders, fuse, shared decoder
  * @ decoder           per-modality encoders and decoders (shared query
                        embeddings), fuse the query embeddings, then heads
where the fuse step is elementwise average (pool), a single cross-modality
injection (asym_*, main stream keeps a skip connection), or two parallel
injections averaged (symmetric).
"""

from __future__ import annotations

import numpy as np

from .config import CUTOFFS, STRATEGIES, ConfigurationError, FusionConfig
from .layers import (
    attention_block_bwd,
    attention_block_fwd,
    linear_bwd,
    linear_fwd,
    relu_bwd,
    relu_fwd,
    sigmoid_bwd,
    sigmoid_fwd,
    softmax_rows,
    softmax_rows_bwd,
)
from .params import ParamStore
from .types import DetectionSet, TokenSet


class ShapeError(ValueError):
    pass


def positional_encoding(n: int, d: int) -> np.ndarray:
    """Fixed sinusoidal position term over the flattened token index."""
    pos = np.arange(n, dtype=np.float64)[:, None]
    dim = np.arange(d, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * (dim // 2) / d)
    out = np.empty((n, d))
    out[:, 0::2] = np.sin(angle[:, 0::2])
    out[:, 1::2] = np.cos(angle[:, 1::2])
    return out


def pad_to_patch(img: np.ndarray, patch: int) -> np.ndarray:
    h, w = img.shape[:2]
    ph = (-h) % patch
    pw = (-w) % patch
    if ph == 0 and pw == 0:
        return img
    pad = ((0, ph), (0, pw)) + ((0, 0),) * (img.ndim - 2)
    return np.pad(img, pad)


def image_to_patches(img: np.ndarray, patch: int) -> np.ndarray:
    """(H, W, C) image to (N, patch*patch*C) rows, row-major patch order."""
    if img.ndim == 2:
        img = img[:, :, None]
    img = pad_to_patch(np.asarray(img, dtype=np.float64), patch)
    h, w, c = img.shape
    gh, gw = h // patch, w // patch
    return (
        img.reshape(gh, patch, gw, patch, c)
        .transpose(0, 2, 1, 3, 4)
        .reshape(gh * gw, patch * patch * c)
    )


def tokenize_fwd(img, store: ParamStore, prefix: str, cfg: FusionConfig):
    patches = image_to_patches(img, cfg.patch)
    w = store[f"{prefix}.W"]
    if patches.shape[1] != w.shape[0]:
        raise ShapeError(
            f"patch vectors have {patches.shape[1]} values but {prefix}.W "
            f"expects {w.shape[0]} (channel mismatch?)"
        )
    lin, lin_cache = linear_fwd(patches, w, store[f"{prefix}.b"])
    tokens = lin + positional_encoding(lin.shape[0], lin.shape[1])
    return tokens, (lin_cache, prefix)


def tokenize_bwd(dout, cache, store: ParamStore) -> None:
    lin_cache, prefix = cache
    _, dw, db = linear_bwd(dout, lin_cache)
    store.add_grad(f"{prefix}.W", dw)
    store.add_grad(f"{prefix}.b", db)


def encode_fwd(x, store: ParamStore, base: str, cfg: FusionConfig):
    caches = []
    for i in range(cfg.encoder_layers):
        x, c = attention_block_fwd(x, x, store, f"{base}.l{i}", cfg.heads, cfg.layer_norm)
        caches.append(c)
    return x, caches


def encode_bwd(dout, caches, store: ParamStore):
    for c in reversed(caches):
        dq, dkv = attention_block_bwd(dout, c, store)
        dout = dq + dkv  # self-attention feeds x to both sides
    return dout


def decode_fwd(fused, store: ParamStore, base: str, cfg: FusionConfig, queries=None):
    x = store["queries"] if queries is None else queries
    caches = []
    for i in range(cfg.decoder_layers):
        x, c = attention_block_fwd(x, fused, store, f"{base}.l{i}", cfg.heads, cfg.layer_norm)
        caches.append(c)
    return x, caches


def decode_bwd(dout, caches, store: ParamStore, into_queries: bool = True):
    dfused = 0.0
    for c in reversed(caches):
        dout, dkv = attention_block_bwd(dout, c, store)
        dfused = dfused + dkv
    if into_queries:
        store.add_grad("queries", dout)
    return dfused, dout


_FUSE_KIND = {
    "pool": "pool",
    "asym_rgb_to_ev": "inj_a",  # complementary rgb injected into the event stream
    "asym_ev_to_rgb": "inj_b",
    "symmetric": "sym",
}

_FUSE_PARAMS = {
    "pool": [],
    "asym_rgb_to_ev": ["inj_a"],
    "asym_ev_to_rgb": ["inj_b"],
    "symmetric": ["inj_a", "inj_b"],
}


def touched_prefixes(cfg: FusionConfig) -> list:
    """Parameter name prefixes the configured forward path actually reads."""
    if cfg.strategy == "single_event":
        return ["tok_ev", "enc_ev", "dec_a", "queries", "cls", "box"]
    if cfg.strategy == "single_rgb":
        return ["tok_rgb", "enc_rgb", "dec_a", "queries", "cls", "box"]
    base = ["tok_ev", "tok_rgb", "queries", "cls", "box"] + _FUSE_PARAMS[cfg.strategy]
    if cfg.cutoff == "backbone":
        return base + ["enc_shared", "dec_a"]
    if cfg.cutoff == "encoder":
        return base + ["enc_ev", "enc_rgb", "dec_a"]
    return base + ["enc_ev", "enc_rgb", "dec_a", "dec_b"]


def fuse_fwd(kind: str, a, b, store: ParamStore, cfg: FusionConfig):
    """Merge event-branch tensor a and rgb-branch tensor b."""
    if a.shape != b.shape:
        raise ShapeError(f"fusion requires equal shapes, got {a.shape} vs {b.shape}")
    if kind == "pool":
        return (a + b) / 2.0, ("pool", None)
    if kind == "inj_a":
        out, c = attention_block_fwd(a, b, store, "inj_a", cfg.heads, cfg.layer_norm)
        return out, ("inj_a", c)
    if kind == "inj_b":
        out, c = attention_block_fwd(b, a, store, "inj_b", cfg.heads, cfg.layer_norm)
        return out, ("inj_b", c)
    c1, cc1 = attention_block_fwd(a, b, store, "inj_a", cfg.heads, cfg.layer_norm)
    c2, cc2 = attention_block_fwd(b, a, store, "inj_b", cfg.heads, cfg.layer_norm)
    return (c1 + c2) / 2.0, ("sym", (cc1, cc2))


def fuse_bwd(dout, cache, store: ParamStore):
    kind, c = cache
    if kind == "pool":
        half = dout * 0.5
        return half, half.copy()
    if kind == "inj_a":
        return attention_block_bwd(dout, c, store)
    if kind == "inj_b":
        db, da = attention_block_bwd(dout, c, store)
        return da, db
    cc1, cc2 = c
    half = dout * 0.5
    da1, db1 = attention_block_bwd(half, cc1, store)
    db2, da2 = attention_block_bwd(half, cc2, store)
    return da1 + da2, db1 + db2


def heads_fwd(emb, store: ParamStore):
    logits, c_cls = linear_fwd(emb, store["cls.W"], store["cls.b"])
    probs = softmax_rows(logits)
    h1, c1 = linear_fwd(emb, store["box.W1"], store["box.b1"])
    r1, m1 = relu_fwd(h1)
    h2, c2 = linear_fwd(r1, store["box.W2"], store["box.b2"])
    r2, m2 = relu_fwd(h2)
    h3, c3 = linear_fwd(r2, store["box.W3"], store["box.b3"])
    boxes, sig = sigmoid_fwd(h3)
    cache = (probs, c_cls, c1, m1, c2, m2, c3, sig)
    return DetectionSet(probs, boxes), cache


def heads_bwd(d_probs, d_boxes, cache, store: ParamStore):
    probs, c_cls, c1, m1, c2, m2, c3, sig = cache
    dlogits = softmax_rows_bwd(d_probs, probs)
    demb, dw, db = linear_bwd(dlogits, c_cls)
    store.add_grad("cls.W", dw)
    store.add_grad("cls.b", db)
    dh3 = sigmoid_bwd(d_boxes, sig)
    dr2, dw, db = linear_bwd(dh3, c3)
    store.add_grad("box.W3", dw)
    store.add_grad("box.b3", db)
    dh2 = relu_bwd(dr2, m2)
    dr1, dw, db = linear_bwd(dh2, c2)
    store.add_grad("box.W2", dw)
    store.add_grad("box.b2", db)
    dh1 = relu_bwd(dr1, m1)
    demb2, dw, db = linear_bwd(dh1, c1)
    store.add_grad("box.W1", dw)
    store.add_grad("box.b1", db)
    return demb + demb2


def forward_detect_with_cache(ev_img, rgb_img, cfg: FusionConfig, store: ParamStore):
    """Full forward pass; returns (DetectionSet, cache) for backward_detect."""
    if cfg.strategy not in STRATEGIES or cfg.cutoff not in CUTOFFS:
        raise ConfigurationError(
            f"unknown strategy/cutoff ({cfg.strategy!r}, {cfg.cutoff!r}); "
            f"valid strategies: {', '.join(STRATEGIES)}; valid cutoffs: {', '.join(CUTOFFS)}"
        )
    if cfg.strategy in ("single_event", "single_rgb"):
        tok_p, enc_p = (("tok_ev", "enc_ev") if cfg.strategy == "single_event"
                        else ("tok_rgb", "enc_rgb"))
        img = ev_img if cfg.strategy == "single_event" else rgb_img
        t, tc = tokenize_fwd(img, store, tok_p, cfg)
        e, ec = encode_fwd(t, store, enc_p, cfg)
        q, qc = decode_fwd(e, store, "dec_a", cfg)
        det, hc = heads_fwd(q, store)
        return det, ("single", (tc, ec, qc, hc))

    kind = _FUSE_KIND[cfg.strategy]
    te, tce = tokenize_fwd(ev_img, store, "tok_ev", cfg)
    tr, tcr = tokenize_fwd(rgb_img, store, "tok_rgb", cfg)
    if cfg.cutoff == "backbone":
        f, fc = fuse_fwd(kind, te, tr, store, cfg)
        e, ec = encode_fwd(f, store, "enc_shared", cfg)
        q, qc = decode_fwd(e, store, "dec_a", cfg)
        det, hc = heads_fwd(q, store)
        return det, ("fuse_backbone", (tce, tcr, fc, ec, qc, hc))
    if cfg.cutoff == "encoder":
        ee, ece = encode_fwd(te, store, "enc_ev", cfg)
        er, ecr = encode_fwd(tr, store, "enc_rgb", cfg)
        f, fc = fuse_fwd(kind, ee, er, store, cfg)
        q, qc = decode_fwd(f, store, "dec_a", cfg)
        det, hc = heads_fwd(q, store)
        return det, ("fuse_encoder", (tce, tcr, ece, ecr, fc, qc, hc))
    ee, ece = encode_fwd(te, store, "enc_ev", cfg)
    er, ecr = encode_fwd(tr, store, "enc_rgb", cfg)
    qe, qce = decode_fwd(ee, store, "dec_a", cfg)
    qr, qcr = decode_fwd(er, store, "dec_b", cfg)
    f, fc = fuse_fwd(kind, qe, qr, store, cfg)
    det, hc = heads_fwd(f, store)
    return det, ("fuse_decoder", (tce, tcr, ece, ecr, qce, qcr, fc, hc))


def backward_detect(d_probs, d_boxes, cache, store: ParamStore) -> None:
    """Push head-output gradients back into every parameter's grad buffer."""
    topology, parts = cache
    if topology == "single":
        tc, ec, qc, hc = parts
        dq = heads_bwd(d_probs, d_boxes, hc, store)
        dfused, _ = decode_bwd(dq, qc, store)
        dt = encode_bwd(dfused, ec, store)
        tokenize_bwd(dt, tc, store)
        return
    if topology == "fuse_backbone":
        tce, tcr, fc, ec, qc, hc = parts
        dq = heads_bwd(d_probs, d_boxes, hc, store)
        dfused, _ = decode_bwd(dq, qc, store)
        df = encode_bwd(dfused, ec, store)
        da, db = fuse_bwd(df, fc, store)
        tokenize_bwd(da, tce, store)
        tokenize_bwd(db, tcr, store)
        return
    if topology == "fuse_encoder":
        tce, tcr, ece, ecr, fc, qc, hc = parts
        dq = heads_bwd(d_probs, d_boxes, hc, store)
        df, _ = decode_bwd(dq, qc, store)
        da, db = fuse_bwd(df, fc, store)
        dte = encode_bwd(da, ece, store)
        dtr = encode_bwd(db, ecr, store)
        tokenize_bwd(dte, tce, store)
        tokenize_bwd(dtr, tcr, store)
        return
    tce, tcr, ece, ecr, qce, qcr, fc, hc = parts
    df = heads_bwd(d_probs, d_boxes, hc, store)
    dqe, dqr = fuse_bwd(df, fc, store)
    dee, _ = decode_bwd(dqe, qce, store)
    der, _ = decode_bwd(dqr, qcr, store)
    dte = encode_bwd(dee, ece, store)
    dtr = encode_bwd(der, ecr, store)
    tokenize_bwd(dte, tce, store)
    tokenize_bwd(dtr, tcr, store)


# Public single-op wrappers over TokenSet, the library-facing surface.

def tokenize(img, cfg: FusionConfig, store: ParamStore, modality: str = "event") -> TokenSet:
    """Patch-embed an image into a TokenSet (positional term included)."""
    prefix = {"event": "tok_ev", "rgb": "tok_rgb"}.get(modality)
    if prefix is None:
        raise ConfigurationError(f"unknown modality {modality!r}")
    tokens, _ = tokenize_fwd(img, store, prefix, cfg)
    return TokenSet(tokens)


def self_attention_encode(t: TokenSet, store: ParamStore, cfg: FusionConfig,
                          prefix: str = "enc_ev") -> TokenSet:
    out, _ = encode_fwd(t.tokens, store, prefix, cfg)
    return TokenSet(out)


def pool_fuse(a: TokenSet, b: TokenSet) -> TokenSet:
    """Elementwise mean of two same-shape token sets."""
    if a.tokens.shape != b.tokens.shape:
        raise ShapeError(f"pool_fuse shape mismatch: {a.tokens.shape} vs {b.tokens.shape}")
    return TokenSet((a.tokens + b.tokens) / 2.0)


def asymmetric_inject(main: TokenSet, comp: TokenSet, store: ParamStore,
                      cfg: FusionConfig, prefix: str = "inj_a") -> TokenSet:
    """Cross-attend main (queries) into comp (keys/values), added via skip."""
    if main.tokens.shape != comp.tokens.shape:
        raise ShapeError("asymmetric_inject requires equal token shapes")
    out, _ = attention_block_fwd(main.tokens, comp.tokens, store, prefix,
                                 cfg.heads, cfg.layer_norm)
    return TokenSet(out)


def symmetric_fuse(a: TokenSet, b: TokenSet, store: ParamStore, cfg: FusionConfig) -> TokenSet:
    """Two parallel injections with swapped roles, pooled."""
    out, _ = fuse_fwd("sym", a.tokens, b.tokens, store, cfg)
    return TokenSet(out)


def decode_queries(queries: np.ndarray, fused: TokenSet, store: ParamStore,
                   cfg: FusionConfig, prefix: str = "dec_a") -> np.ndarray:
    """Refine query embeddings against fused tokens (cross-attention + skip)."""
    if queries.shape[1] != fused.tokens.shape[1]:
        raise ShapeError("query width must match token width")
    out, _ = decode_fwd(fused.tokens, store, prefix, cfg, queries=queries)
    return out


def predict_heads(embeddings: np.ndarray, store: ParamStore) -> DetectionSet:
    """Class softmax and sigmoid box MLP per query; no NMS is ever applied."""
    det, _ = heads_fwd(embeddings, store)
    return det


def forward_detect(ev_img, rgb_img, cfg: FusionConfig, store: ParamStore) -> DetectionSet:
    det, _ = forward_detect_with_cache(ev_img, rgb_img, cfg, store)
    return det
