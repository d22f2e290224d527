"""Fusion network: tokenization, attention blocks, fusion topologies,
heads, gradient checks, determinism, and the weights container."""

import numpy as np
import pytest

from nerdd.fusion import (
    CUTOFFS,
    STRATEGIES,
    ConfigurationError,
    DetectionSet,
    FusionConfig,
    ParamStore,
    ShapeError,
    TokenSet,
    asymmetric_inject,
    decode_queries,
    forward_detect,
    grad_check,
    init_params,
    pool_fuse,
    positional_encoding,
    predict_heads,
    self_attention_encode,
    symmetric_fuse,
    tokenize,
)
from nerdd.fusion.layers import attention_block_fwd, softmax_rows
from nerdd.fusion.model import fuse_fwd

CFG = FusionConfig(d=8, heads=2, patch=4, n_queries=3, ev_channels=2, rgb_channels=3)


def small_store(seed=0, cfg=CFG):
    return init_params(cfg, seed)


def zero_params(store, prefix, mats):
    for m in mats:
        store.values[f"{prefix}.{m}"][...] = 0.0


# ---------------------------------------------------------------- tokenize

def test_tokenize_zero_image_zero_bias_gives_positional_term():
    store = small_store()
    store.values["tok_ev.b"][...] = 0.0
    img = np.zeros((8, 8, 2))
    tokens = tokenize(img, CFG, store, "event")
    assert np.array_equal(tokens.tokens, positional_encoding(4, CFG.d))


def test_tokenize_count_32x32_patch16():
    cfg = FusionConfig(d=16, patch=16, ev_channels=1)
    store = init_params(cfg, 0)
    tokens = tokenize(np.zeros((32, 32, 1)), cfg, store, "event")
    assert tokens.n == 4


def test_tokenize_linearity(rng):
    store = small_store()
    img = rng.normal(size=(8, 8, 2))
    pos = positional_encoding(4, CFG.d)
    store.values["tok_ev.b"][...] = 0.0
    t1 = tokenize(img, CFG, store, "event").tokens - pos
    t2 = tokenize(2.0 * img, CFG, store, "event").tokens - pos
    assert np.allclose(t2, 2.0 * t1, atol=1e-12)


def test_tokenize_pads_non_multiple_dims():
    store = small_store()
    tokens = tokenize(np.ones((6, 10, 2)), CFG, store, "event")
    assert tokens.n == 2 * 3  # padded to 8x12 with patch 4


def test_tokenize_channel_mismatch_raises():
    store = small_store()
    with pytest.raises(ShapeError):
        tokenize(np.zeros((8, 8, 3)), CFG, store, "event")  # event proj wants 2ch


# ------------------------------------------------------------- attention

def test_softmax_rows_sum_to_one(rng):
    z = rng.normal(size=(5, 7)) * 10
    assert np.abs(softmax_rows(z).sum(axis=1) - 1.0).max() < 1e-9


def test_attention_rows_sum_to_one_and_convex_hull(rng):
    store = small_store()
    x = rng.normal(size=(5, CFG.d))
    _, cache = attention_block_fwd(x, x, store, "enc_ev.l0", CFG.heads)
    attn = cache[5]
    v = cache[4]
    dh = CFG.d // CFG.heads
    for h, a in enumerate(attn):
        assert np.abs(a.sum(axis=1) - 1.0).max() < 1e-9
        # each output row lies in the per-dimension hull of the value rows
        vh = v[:, h * dh:(h + 1) * dh]
        out = a @ vh
        assert (out <= vh.max(axis=0) + 1e-12).all()
        assert (out >= vh.min(axis=0) - 1e-12).all()


def test_encoder_zero_output_projection_is_identity(rng):
    store = small_store()
    zero_params(store, "enc_ev.l0", ["Wo"])
    x = TokenSet(rng.normal(size=(5, CFG.d)))
    out = self_attention_encode(x, store, CFG, "enc_ev")
    assert np.array_equal(out.tokens, x.tokens)  # bit equality


def test_single_token_attention_closed_form(rng):
    store = small_store(3)
    x = rng.normal(size=(1, CFG.d))
    out, cache = attention_block_fwd(x, x, store, "enc_ev.l0", CFG.heads)
    for a in cache[5]:
        assert (a == 1.0).all()  # softmax over one key is exactly 1
    v = x @ store["enc_ev.l0.Wv"]
    expected = x + v @ store["enc_ev.l0.Wo"]
    assert np.allclose(out, expected, atol=1e-12)


# ------------------------------------------------------------------- pool

def test_pool_identity_symmetry_cancellation(rng):
    a = TokenSet(rng.normal(size=(4, 8)))
    b = TokenSet(rng.normal(size=(4, 8)))
    assert np.array_equal(pool_fuse(a, a).tokens, a.tokens)
    assert np.array_equal(pool_fuse(a, b).tokens, pool_fuse(b, a).tokens)
    neg = TokenSet(-a.tokens)
    assert (pool_fuse(a, neg).tokens == 0).all()
    with pytest.raises(ShapeError):
        pool_fuse(a, TokenSet(rng.normal(size=(5, 8))))


# -------------------------------------------------------------- injection

def test_inject_zero_value_projection_is_main_exactly(rng):
    store = small_store()
    zero_params(store, "inj_a", ["Wv"])
    main = TokenSet(rng.normal(size=(4, CFG.d)))
    comp = TokenSet(rng.normal(size=(4, CFG.d)))
    out = asymmetric_inject(main, comp, store, CFG)
    assert np.array_equal(out.tokens, main.tokens)


def test_inject_single_comp_token_closed_form(rng):
    cfg = FusionConfig(d=8, heads=1, patch=4, n_queries=3)
    store = init_params(cfg, 1)
    main = rng.normal(size=(1, cfg.d))
    comp = rng.normal(size=(1, cfg.d))
    # N=1 comp: each query attends the single key with weight exactly 1
    out, cache = attention_block_fwd(main, comp, store, "inj_a", 1)
    assert (cache[5][0] == 1.0).all()
    v1 = comp @ store["inj_a.Wv"]
    expected = main + v1 @ store["inj_a.Wo"]
    assert np.allclose(out, expected, atol=1e-12)


def test_inject_gradcheck():
    assert grad_check("asymmetric_inject", seed=0) < 1e-4


# -------------------------------------------------------------- symmetric

def test_symmetric_swap_equivariance(rng):
    store = small_store()
    a = TokenSet(rng.normal(size=(4, CFG.d)))
    b = TokenSet(rng.normal(size=(4, CFG.d)))
    base = symmetric_fuse(a, b, store, CFG)
    # swap inputs AND swap branch parameters -> identical output
    swapped_store = store.copy()
    for m in ("Wq", "Wk", "Wv", "Wo"):
        swapped_store.values[f"inj_a.{m}"] = store.values[f"inj_b.{m}"].copy()
        swapped_store.values[f"inj_b.{m}"] = store.values[f"inj_a.{m}"].copy()
    swapped = symmetric_fuse(b, a, swapped_store, CFG)
    assert np.array_equal(base.tokens, swapped.tokens)


def test_symmetric_double_skip_reduces_to_pool(rng):
    store = small_store()
    zero_params(store, "inj_a", ["Wv"])
    zero_params(store, "inj_b", ["Wv"])
    a = TokenSet(rng.normal(size=(4, CFG.d)))
    b = TokenSet(rng.normal(size=(4, CFG.d)))
    out = symmetric_fuse(a, b, store, CFG)
    assert np.array_equal(out.tokens, pool_fuse(a, b).tokens)


def test_symmetric_composition_equals_explicit_calls(rng):
    store = small_store()
    a = TokenSet(rng.normal(size=(4, CFG.d)))
    b = TokenSet(rng.normal(size=(4, CFG.d)))
    composed = symmetric_fuse(a, b, store, CFG)
    c1 = asymmetric_inject(a, b, store, CFG, prefix="inj_a")
    c2 = asymmetric_inject(b, a, store, CFG, prefix="inj_b")
    explicit = pool_fuse(c1, c2)
    assert np.array_equal(composed.tokens, explicit.tokens)


def test_symmetric_gradcheck():
    assert grad_check("symmetric_fuse", seed=0) < 1e-4


# ---------------------------------------------------------------- decoder

def test_decode_zero_value_projection_returns_queries(rng):
    store = small_store()
    zero_params(store, "dec_a.l0", ["Wv"])
    fused = TokenSet(rng.normal(size=(6, CFG.d)))
    queries = rng.normal(size=(CFG.n_queries, CFG.d))
    out = decode_queries(queries, fused, store, CFG)
    assert np.array_equal(out, queries)


def test_decode_single_fused_token_closed_form(rng):
    cfg = FusionConfig(d=8, heads=1, patch=4, n_queries=3)
    store = init_params(cfg, 2)
    fused = rng.normal(size=(1, cfg.d))
    queries = rng.normal(size=(cfg.n_queries, cfg.d))
    out = decode_queries(queries, TokenSet(fused), store, cfg)
    # one key: every query attends it with weight exactly 1
    v1 = fused @ store["dec_a.l0.Wv"]
    expected = queries + np.repeat(v1 @ store["dec_a.l0.Wo"], cfg.n_queries, axis=0)
    assert np.allclose(out, expected, atol=1e-12)


def test_decode_gradcheck():
    assert grad_check("decode_queries", seed=0) < 1e-4


# ------------------------------------------------------------------ heads

def test_heads_probabilities_and_box_ranges(rng):
    store = small_store()
    det = predict_heads(rng.normal(size=(CFG.n_queries, CFG.d)) * 3, store)
    assert np.abs(det.probs.sum(axis=1) - 1.0).max() < 1e-9
    assert (det.probs >= 0).all()
    assert ((det.boxes > 0) & (det.boxes < 1)).all()


def test_heads_zero_weights_give_uniform_outputs(rng):
    store = small_store()
    for name in ("cls.W", "cls.b", "box.W1", "box.b1", "box.W2", "box.b2",
                 "box.W3", "box.b3"):
        store.values[name][...] = 0.0
    det = predict_heads(rng.normal(size=(2, CFG.d)), store)
    assert (det.probs == 0.5).all()
    assert (det.boxes == 0.5).all()


def test_heads_gradcheck():
    assert grad_check("predict_heads", seed=0) < 1e-4


# ----------------------------------------------------------- full forward

def ev_rgb_pair(rng, cfg=CFG):
    return (rng.normal(size=(8, 8, cfg.ev_channels)),
            rng.normal(size=(8, 8, cfg.rgb_channels)))


def test_single_event_ignores_rgb(rng):
    cfg = FusionConfig(d=8, heads=2, patch=4, n_queries=3, strategy="single_event")
    store = init_params(cfg, 0)
    ev_img, rgb_img = ev_rgb_pair(rng, cfg)
    out1 = forward_detect(ev_img, rgb_img, cfg, store)
    out2 = forward_detect(ev_img, rng.normal(size=(8, 8, 3)) * 100, cfg, store)
    assert np.array_equal(out1.probs, out2.probs)
    assert np.array_equal(out1.boxes, out2.boxes)


def test_pool_of_identical_streams_equals_single_path(rng):
    # same channel count for both tokenizers, copied branch weights,
    # identical images: pooling (t + t)/2 must reproduce the single path
    cfg = FusionConfig(d=8, heads=2, patch=4, n_queries=3,
                       strategy="pool", cutoff="encoder",
                       ev_channels=1, rgb_channels=1)
    store = init_params(cfg, 0)
    for m in ("W", "b"):
        store.values[f"tok_rgb.{m}"] = store.values[f"tok_ev.{m}"].copy()
    for m in ("Wq", "Wk", "Wv", "Wo"):
        store.values[f"enc_rgb.l0.{m}"] = store.values[f"enc_ev.l0.{m}"].copy()
    img = rng.normal(size=(8, 8, 1))
    fused = forward_detect(img, img, cfg, store)
    single_cfg = FusionConfig(d=8, heads=2, patch=4, n_queries=3,
                              strategy="single_event", ev_channels=1, rgb_channels=1)
    single = forward_detect(img, img, single_cfg, store)
    assert np.allclose(fused.probs, single.probs, atol=1e-12)
    assert np.allclose(fused.boxes, single.boxes, atol=1e-12)


def test_default_query_count_is_five():
    cfg = FusionConfig()  # defaults: 5 queries, d 64, patch 16
    store = init_params(cfg, 0)
    rng = np.random.default_rng(0)
    det = forward_detect(rng.normal(size=(32, 32, 2)), rng.normal(size=(32, 32, 3)),
                         cfg, store)
    assert det.n_queries == 5
    assert det.probs.shape == (5, 2)


def test_all_strategy_cutoff_combinations_run(rng):
    ev_img, rgb_img = ev_rgb_pair(rng)
    for strategy in STRATEGIES:
        for cutoff in CUTOFFS:
            cfg = FusionConfig(d=8, heads=2, patch=4, n_queries=3,
                               strategy=strategy, cutoff=cutoff)
            store = init_params(cfg, 0)
            det = forward_detect(ev_img, rgb_img, cfg, store)
            assert det.n_queries == 3


def test_unknown_strategy_rejected_with_valid_list():
    with pytest.raises(ConfigurationError, match="valid strategies"):
        FusionConfig(strategy="mixture")
    with pytest.raises(ConfigurationError, match="valid cutoffs"):
        FusionConfig(cutoff="head")


def test_determinism_bit_identical(rng):
    cfg = FusionConfig(d=8, heads=2, patch=4, n_queries=3,
                       strategy="symmetric", cutoff="encoder")
    ev_img, rgb_img = ev_rgb_pair(rng, cfg)
    a = forward_detect(ev_img, rgb_img, cfg, init_params(cfg, 42))
    b = forward_detect(ev_img, rgb_img, cfg, init_params(cfg, 42))
    assert np.array_equal(a.probs, b.probs)
    assert np.array_equal(a.boxes, b.boxes)


def test_scaling_images_keeps_probabilities_normalized(rng):
    cfg = FusionConfig(d=8, heads=2, patch=4, n_queries=3, strategy="pool",
                       cutoff="encoder")
    store = init_params(cfg, 0)
    ev_img, rgb_img = ev_rgb_pair(rng, cfg)
    for scale in (0.1, 1.0, 17.0):
        det = forward_detect(scale * ev_img, scale * rgb_img, cfg, store)
        assert np.abs(det.probs.sum(axis=1) - 1.0).max() < 1e-9


def test_skip_connection_identities_all_attention_ops(rng):
    """Zeroed V and output projections make every attention-bearing op the
    exact identity on its main operand."""
    store = small_store()
    x = TokenSet(rng.normal(size=(4, CFG.d)))
    y = TokenSet(rng.normal(size=(4, CFG.d)))
    for prefix in ("enc_ev.l0", "enc_rgb.l0", "enc_shared.l0",
                   "inj_a", "inj_b", "dec_a.l0", "dec_b.l0"):
        zero_params(store, prefix, ["Wv", "Wo"])
    assert np.array_equal(
        self_attention_encode(x, store, CFG, "enc_ev").tokens, x.tokens)
    assert np.array_equal(asymmetric_inject(x, y, store, CFG).tokens, x.tokens)
    out, _ = fuse_fwd("sym", x.tokens, y.tokens, store, CFG)
    assert np.array_equal(out, pool_fuse(x, y).tokens)
    q = rng.normal(size=(CFG.n_queries, CFG.d))
    assert np.array_equal(decode_queries(q, x, store, CFG), q)


# --------------------------------------------------------- variants + io

def test_gradcheck_with_layer_norm():
    cfg = FusionConfig(d=8, heads=2, patch=4, n_queries=3, layer_norm=True)
    assert grad_check("asymmetric_inject", seed=0, cfg=cfg) < 1e-4


def test_gradcheck_multilayer_encoder():
    cfg = FusionConfig(d=8, heads=1, patch=4, n_queries=3, encoder_layers=2)
    assert grad_check("self_attention_encode", seed=0, cfg=cfg) < 1e-4


def test_gradcheck_end_to_end_other_strategies():
    for strategy, cutoff in (("pool", "backbone"), ("asym_rgb_to_ev", "encoder"),
                             ("symmetric", "decoder")):
        cfg = FusionConfig(d=8, heads=2, patch=4, n_queries=3,
                           strategy=strategy, cutoff=cutoff)
        assert grad_check("end_to_end", seed=0, cfg=cfg) < 1e-3


def test_weights_round_trip(tmp_path):
    store = small_store(7)
    path = tmp_path / "weights.nwt"
    store.save(path)
    back = ParamStore.load(path)
    assert sorted(back.names()) == sorted(store.names())
    for name in store.names():
        assert np.array_equal(back[name], store[name])
    # header magic is as documented
    assert path.read_bytes()[:4] == b"NWT1"


def test_init_params_deterministic():
    a, b = init_params(CFG, 11), init_params(CFG, 11)
    for name in a.names():
        assert np.array_equal(a[name], b[name])
    c = init_params(CFG, 12)
    assert any(not np.array_equal(a[n], c[n]) for n in a.names())


def test_detection_set_validation():
    with pytest.raises(ValueError):
        DetectionSet(np.zeros((3, 3)), np.zeros((3, 4)))
    with pytest.raises(ValueError):
        DetectionSet(np.zeros((3, 2)), np.zeros((2, 4)))
    with pytest.raises(ValueError):
        TokenSet(np.array([[np.nan, 1.0]]))
