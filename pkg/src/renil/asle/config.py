from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields


@dataclass
class AsleConfig:
    """Network shape. Defaults reproduce the published ASLE configuration."""

    patch_length: int = 100
    embed_channels: int = 32
    compressor_kernel: int = 3
    compressor_stride: int = 3
    compressor_layers: int = 2
    gn_groups: int = 4
    extractor_channels: tuple = (64, 128, 256, 512)
    kernel_size: int = 3
    context_blocks: int = 2
    avg_pools: tuple = ((1, 1), (2, 1), (3, 1))
    max_pools: tuple = ((3, 1),)
    head_hidden: int = 1024
    dropout: float = 0.2
    out_features: int = 4

    def __post_init__(self):
        self.extractor_channels = tuple(int(c) for c in self.extractor_channels)
        self.avg_pools = tuple(tuple(int(v) for v in p) for p in self.avg_pools)
        self.max_pools = tuple(tuple(int(v) for v in p) for p in self.max_pools)
        ints = ("patch_length", "embed_channels", "compressor_kernel", "compressor_stride",
                "compressor_layers", "gn_groups", "kernel_size", "head_hidden", "out_features")
        for name in ints:
            if int(getattr(self, name)) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.context_blocks < 0:
            raise ValueError("context_blocks must be non-negative")
        if not self.extractor_channels:
            raise ValueError("at least one extractor stage is required")
        for c in (self.embed_channels, *self.extractor_channels):
            if c % self.gn_groups:
                raise ValueError(f"channel count {c} not divisible by gn_groups={self.gn_groups}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.out_features != 4:
            raise ValueError("the head predicts (v_x, v_y, log b_x, log b_y)")
        if self.patch_length < self.compressor_stride:
            raise ValueError("patch length shorter than the compressor stride")

    @property
    def channels(self) -> int:
        return self.extractor_channels[-1]

    @property
    def compressed_length(self) -> int:
        n = self.patch_length
        for _ in range(self.compressor_layers):
            n = math.ceil(n / self.compressor_stride)
        return n

    @property
    def pooled_features(self) -> int:
        bins = sum(h * w for h, w in self.avg_pools) + sum(h * w for h, w in self.max_pools)
        return self.channels * (1 + bins)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["extractor_channels"] = list(self.extractor_channels)
        d["avg_pools"] = [list(p) for p in self.avg_pools]
        d["max_pools"] = [list(p) for p in self.max_pools]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AsleConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown AsleConfig keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainConfig:
    """Optimization settings; defaults follow the published training setup."""

    epochs: int = 200
    batch_size: int = 128
    batches_per_epoch: int = 20
    lr: float = 1e-4
    plateau_factor: float = 0.1
    plateau_patience: int = 10
    min_lr: float = 1e-12
    fm_weight: float = 1.0
    include_log_t: bool = False
    scale_low: float = 1.0  # s, log-uniform training durations
    scale_high: float = 60.0
    val_seconds: float = 5.0
    val_windows: int = 256
    seed: int = 0
    augment: dict = field(default_factory=dict)  # AugmentationSpec overrides

    def __post_init__(self):
        for name in ("epochs", "batch_size", "batches_per_epoch", "val_windows"):
            if int(getattr(self, name)) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0 or not 0 < self.plateau_factor < 1:
            raise ValueError("invalid learning-rate schedule")
        if not 0 < self.scale_low <= self.scale_high:
            raise ValueError("training scale range must satisfy 0 < low <= high")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)
