"""Configuration for the detection network and its fusion variants."""

from __future__ import annotations

from dataclasses import dataclass

STRATEGIES = (
    "single_event",
    "single_rgb",
    "pool",
    "asym_rgb_to_ev",
    "asym_ev_to_rgb",
    "symmetric",
)
CUTOFFS = ("backbone", "encoder", "decoder")


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class FusionConfig:
    """Model shape and fusion wiring.

    strategy picks which streams exist and how they merge; cutoff picks the
    depth of the merge (after tokenization, after the encoder, or between
    the two decoders' query embeddings). Single-modality strategies ignore
    the cutoff. d=64 is the desk-scale default (the reference detector uses
    256); one encoder and one decoder layer by default, both knobs.
    """

    d: int = 64
    heads: int = 1
    patch: int = 16
    n_queries: int = 5
    strategy: str = "pool"
    cutoff: str = "encoder"
    ev_channels: int = 2
    rgb_channels: int = 3
    encoder_layers: int = 1
    decoder_layers: int = 1
    layer_norm: bool = False

    def __post_init__(self):
        if self.strategy not in STRATEGIES or self.cutoff not in CUTOFFS:
            raise ConfigurationError(
                f"unknown strategy/cutoff ({self.strategy!r}, {self.cutoff!r}); "
                f"valid strategies: {', '.join(STRATEGIES)}; "
                f"valid cutoffs: {', '.join(CUTOFFS)}"
            )
        if self.d < 1 or self.d % self.heads != 0:
            raise ConfigurationError("d must be positive and divisible by heads")
        if self.n_queries < 1:
            raise ConfigurationError("n_queries must be >= 1")
        if self.patch < 1:
            raise ConfigurationError("patch must be >= 1")
        if min(self.ev_channels, self.rgb_channels) < 1:
            raise ConfigurationError("channel counts must be >= 1")
        if min(self.encoder_layers, self.decoder_layers) < 1:
            raise ConfigurationError("layer counts must be >= 1")

    @property
    def head_dim(self) -> int:
        return self.d // self.heads
