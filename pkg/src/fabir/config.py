"""Model hyperparameters and architecture switches."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from fabir.errors import ConfigError

REFERENCE_PARAMETER_COUNT = 1_385_198
DEFAULT_BUCKET_EDGES = (60, 100, 140, 180, 220, 260)


@dataclass(frozen=True)
class ModelConfig:
    # embeddings
    word_dim: int = 100
    char_dim: int = 8
    char_filters: int = 100
    char_kernel_width: int = 5
    highway_layers: int = 2
    # body
    d_model: int = 100
    n_heads: int = 4
    ff_hidden_processing: int = 200
    ff_hidden_reduction: int = 400
    attn_kernel: tuple[int, int] | None = None
    n_processing_layers: int = 3
    scale_logits: bool = False
    ln_eps: float = 1e-6
    kernel_init_noise: float = 0.01
    # answer selector
    selector_kind: str = "conv"
    selector_hidden: int = 32
    selector_kernel: int = 9
    max_answer_len: int = 15
    # dropout, as keep probabilities
    keep_processing: float = 0.9
    keep_reduction: float = 0.8
    keep_char: float = 0.75
    keep_selector: float = 0.8
    # ablation switches
    use_char_embed: bool = True
    use_conv_attention: bool = True
    use_reduction_layer: bool = True
    cross_softmax_axis: str = "column"
    bidirectional_cross: bool = False
    # optimization
    warmup_steps: int = 4000
    lr_scale: float = 0.5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-9
    batch_size: int = 75
    bucket_edges: tuple[int, ...] = field(default=DEFAULT_BUCKET_EDGES)
    precision: int = 32

    def __post_init__(self):
        if self.attn_kernel is not None:
            object.__setattr__(self, "attn_kernel", tuple(int(v) for v in self.attn_kernel))
        object.__setattr__(self, "bucket_edges", tuple(int(v) for v in self.bucket_edges))
        self.validate()

    @property
    def kernel_shape(self) -> tuple[int, int] | None:
        """Spatial size of the attention convolution, or None when it is disabled."""
        if not self.use_conv_attention:
            return None
        return self.attn_kernel if self.attn_kernel is not None else (1, 5)

    @property
    def d_input(self) -> int:
        return self.word_dim + (self.char_filters if self.use_char_embed else 0)

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def validate(self) -> None:
        positive = ["word_dim", "char_dim", "char_filters", "char_kernel_width", "d_model",
                    "n_heads", "ff_hidden_processing", "ff_hidden_reduction",
                    "selector_hidden", "selector_kernel", "max_answer_len", "batch_size"]
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.n_processing_layers < 0 or self.highway_layers < 0:
            raise ConfigError("layer counts must be non-negative")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.d_model % 2:
            raise ConfigError(f"d_model must be even for position encoding, got {self.d_model}")
        if self.use_reduction_layer:
            if self.d_input % 2:
                raise ConfigError(f"d_input must be even, got {self.d_input}")
            if self.d_input % self.n_heads:
                raise ConfigError(f"d_input={self.d_input} not divisible by n_heads={self.n_heads}")
        if not self.use_conv_attention and self.attn_kernel is not None:
            raise ConfigError("attn_kernel is set but convolutional attention is disabled")
        ks = self.kernel_shape
        if ks is not None and (len(ks) != 2 or any(k < 1 or k % 2 == 0 for k in ks)):
            raise ConfigError(f"attention kernel sizes must be odd and positive, got {ks}")
        if self.selector_kernel % 2 == 0:
            raise ConfigError("selector_kernel must be odd")
        for name in ("keep_processing", "keep_reduction", "keep_char", "keep_selector"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"{name} must lie in (0, 1], got {v}")
        if self.cross_softmax_axis not in ("row", "column"):
            raise ConfigError(f"cross_softmax_axis must be 'row' or 'column', got {self.cross_softmax_axis!r}")
        if self.selector_kind not in ("conv", "linear"):
            raise ConfigError(f"selector_kind must be 'conv' or 'linear', got {self.selector_kind!r}")
        if self.precision not in (32, 64):
            raise ConfigError(f"precision must be 32 or 64, got {self.precision}")
        if self.warmup_steps < 1:
            raise ConfigError("warmup_steps must be positive")
        if list(self.bucket_edges) != sorted(set(self.bucket_edges)):
            raise ConfigError("bucket_edges must be strictly increasing")

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["attn_kernel"] = list(self.attn_kernel) if self.attn_kernel is not None else None
        d["bucket_edges"] = list(self.bucket_edges)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def toy_config(**changes) -> ModelConfig:
    """Small widths used by gradient checks and the synthetic task."""
    base = dict(word_dim=6, char_dim=3, char_filters=4, char_kernel_width=3, d_model=8, n_heads=2,
                ff_hidden_processing=12, ff_hidden_reduction=14, n_processing_layers=1,
                selector_hidden=5, selector_kernel=3, precision=64)
    base.update(changes)
    return ModelConfig(**base)


def synthetic_config(**changes) -> ModelConfig:
    """The desk-scale model for the synthetic task: reduction + one processing layer at width 32.

    Dropout is off and the learning-rate scale halved: the task is noise-free,
    and with dropout the model settles on answer-shaped spans without learning
    which marker the question names.
    """
    base = dict(word_dim=32, char_filters=32, d_model=32, n_heads=2, n_processing_layers=1,
                ff_hidden_processing=64, ff_hidden_reduction=128, batch_size=32,
                warmup_steps=300, lr_scale=0.25, keep_processing=1.0, keep_reduction=1.0,
                keep_char=1.0, keep_selector=1.0, precision=32)
    base.update(changes)
    return ModelConfig(**base)
