"""Named parameter store with gradient buffers and a binary weights format.

Every layer's matrices live under dotted names ("enc_ev.l0.Wq", "cls.W").
Initialization draws uniform(-1/sqrt(d), 1/sqrt(d)) from one seeded
generator in a fixed creation order, so identical seeds give bit-identical
stores. Layer-norm gains start at 1 and shifts at 0 when enabled.

Weights file (NWT1): magic "NWT1" | u32 LE count | per entry:
u16 LE name length | name utf-8 | u8 ndim | u64 LE dims | f64 LE values
(row-major).
"""

from __future__ import annotations

import struct
from typing import Dict, Iterator, Tuple

import numpy as np

from .config import FusionConfig

WEIGHTS_MAGIC = b"NWT1"

# Attention block prefixes, expanded with per-layer suffixes where stacked.
ENCODERS = ("enc_ev", "enc_rgb", "enc_shared")
INJECTIONS = ("inj_a", "inj_b")
DECODERS = ("dec_a", "dec_b")
ATTN_MATS = ("Wq", "Wk", "Wv", "Wo")


class WeightsFormatError(ValueError):
    pass


class ParamStore:
    """Mutable mapping of named float64 arrays plus parallel gradient buffers."""

    def __init__(self):
        self.values: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self.values[name] = np.asarray(value, dtype=np.float64)
        self.grads[name] = np.zeros_like(self.values[name])

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def names(self) -> list:
        return list(self.values)

    def items(self) -> Iterator[Tuple[str, np.ndarray]]:
        return iter(self.values.items())

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def add_grad(self, name: str, grad: np.ndarray) -> None:
        self.grads[name] += grad

    def n_params(self) -> int:
        return sum(v.size for v in self.values.values())

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name, value in self.values.items():
            out[name] = value.copy()
        return out

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(WEIGHTS_MAGIC)
            fh.write(struct.pack("<I", len(self.values)))
            for name, value in self.values.items():
                encoded = name.encode("utf-8")
                fh.write(struct.pack("<H", len(encoded)))
                fh.write(encoded)
                fh.write(struct.pack("<B", value.ndim))
                fh.write(struct.pack(f"<{value.ndim}Q", *value.shape))
                fh.write(value.astype("<f8").tobytes())

    @staticmethod
    def load(path) -> "ParamStore":
        store = ParamStore()
        with open(path, "rb") as fh:
            if fh.read(4) != WEIGHTS_MAGIC:
                raise WeightsFormatError("not a weights file (bad magic)")
            (count,) = struct.unpack("<I", fh.read(4))
            for _ in range(count):
                (name_len,) = struct.unpack("<H", fh.read(2))
                name = fh.read(name_len).decode("utf-8")
                (ndim,) = struct.unpack("<B", fh.read(1))
                shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
                n = int(np.prod(shape)) if ndim else 1
                data = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape)
                store[name] = data.copy()
        return store


def attention_prefixes(cfg: FusionConfig) -> list:
    """All attention block prefixes the configuration can touch."""
    out = []
    for enc in ENCODERS:
        out += [f"{enc}.l{i}" for i in range(cfg.encoder_layers)]
    out += list(INJECTIONS)
    for dec in DECODERS:
        out += [f"{dec}.l{i}" for i in range(cfg.decoder_layers)]
    return out


def init_params(cfg: FusionConfig, seed: int = 0) -> ParamStore:
    """Seeded store covering every strategy and cutoff of this configuration."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(cfg.d)
    store = ParamStore()

    def draw(name, *shape):
        store[name] = rng.uniform(-bound, bound, size=shape)

    draw("tok_ev.W", cfg.patch * cfg.patch * cfg.ev_channels, cfg.d)
    draw("tok_ev.b", cfg.d)
    draw("tok_rgb.W", cfg.patch * cfg.patch * cfg.rgb_channels, cfg.d)
    draw("tok_rgb.b", cfg.d)
    for prefix in attention_prefixes(cfg):
        for mat in ATTN_MATS:
            draw(f"{prefix}.{mat}", cfg.d, cfg.d)
        if cfg.layer_norm:
            store[f"{prefix}.ln_g"] = np.ones(cfg.d)
            store[f"{prefix}.ln_b"] = np.zeros(cfg.d)
    draw("queries", cfg.n_queries, cfg.d)
    draw("cls.W", cfg.d, 2)
    draw("cls.b", 2)
    draw("box.W1", cfg.d, cfg.d)
    draw("box.b1", cfg.d)
    draw("box.W2", cfg.d, cfg.d)
    draw("box.b2", cfg.d)
    draw("box.W3", cfg.d, 4)
    draw("box.b3", 4)
    return store
