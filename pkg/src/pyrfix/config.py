"""Model configuration shared by builders, checkpoints, and the CLI."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

FAMILIES = ("gru", "transformer")
ATTENTION_KINDS = ("bahdanau", "luong_dot", "luong_general", "luong_concat",
                   "luong_local", "multihead")
GLOBAL_SCORERS = ("dot", "general", "concat")
RESIDUAL_MODES = ("ave", "aff")


@dataclass
class ModelConfig:
    family: str = "gru"
    attention: str = "bahdanau"
    encoder_layers: int = 2
    decoder_layers: int = 2
    d_model: int = 64
    d_ff: int = 256
    heads: int = 4
    pyramid: bool = True
    window: int = 2
    residual_mode: str = "ave"
    vocab_size: int = 0
    local_sigma: float | None = None
    # scorer producing the pre-Gaussian weights of local attention
    local_base: str = "general"
    # post-norm after each residual add; off = literal-equation mode
    layer_norm: bool = True

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.attention not in ATTENTION_KINDS:
            raise ValueError(f"unknown attention {self.attention!r}")
        if self.family == "transformer" and self.attention != "multihead":
            raise ValueError("transformer family requires attention='multihead'")
        if self.family == "gru" and self.attention == "multihead":
            raise ValueError("attention='multihead' requires family='transformer'")
        if self.encoder_layers < 1 or self.decoder_layers < 1:
            raise ValueError("encoder_layers and decoder_layers must be >= 1")
        if self.d_model <= 0:
            raise ValueError("d_model must be positive")
        if self.family == "transformer" and self.d_model % self.heads != 0:
            raise ValueError("heads must divide d_model")
        if self.window < 2:
            raise ValueError("pyramid window must be >= 2")
        if self.residual_mode not in RESIDUAL_MODES:
            raise ValueError(f"residual_mode must be one of {RESIDUAL_MODES}")
        if self.local_base not in GLOBAL_SCORERS:
            raise ValueError(f"local_base must be one of {GLOBAL_SCORERS}")
        if self.local_sigma is not None and self.local_sigma <= 0:
            raise ValueError("local_sigma must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        return cls(**data)
