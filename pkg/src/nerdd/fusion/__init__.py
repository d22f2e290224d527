"""Detection network: tokenizer, fusion strategies, decoder, heads, and the
gradient-check harness. The toy-training loop lives in nerdd.fusion.toy."""

from .config import CUTOFFS, STRATEGIES, ConfigurationError, FusionConfig
from .gradcheck import GRAD_CHECK_OPS, grad_check
from .model import (
    ShapeError,
    asymmetric_inject,
    backward_detect,
    decode_queries,
    forward_detect,
    forward_detect_with_cache,
    pool_fuse,
    positional_encoding,
    predict_heads,
    self_attention_encode,
    symmetric_fuse,
    tokenize,
    touched_prefixes,
)
from .params import ParamStore, WeightsFormatError, init_params
from .types import CLASS_DRONE, CLASS_NO_OBJECT, DetectionSet, TokenSet

__all__ = [
    "CUTOFFS",
    "STRATEGIES",
    "CLASS_DRONE",
    "CLASS_NO_OBJECT",
    "ConfigurationError",
    "DetectionSet",
    "FusionConfig",
    "GRAD_CHECK_OPS",
    "ParamStore",
    "ShapeError",
    "TokenSet",
    "WeightsFormatError",
    "asymmetric_inject",
    "backward_detect",
    "decode_queries",
    "forward_detect",
    "forward_detect_with_cache",
    "grad_check",
    "init_params",
    "pool_fuse",
    "positional_encoding",
    "predict_heads",
    "self_attention_encode",
    "symmetric_fuse",
    "tokenize",
    "touched_prefixes",
]
