"""Parameter tally and analytic multiply-add count."""

from __future__ import annotations

import math

from torch import nn

from .config import AsleConfig


def param_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def flop_estimate(config: AsleConfig, seconds: float, sample_rate: float = 200.0) -> int:
    """Multiply-adds of every convolution and linear layer for one window.

    GroupNorm, activations, pooling and bias additions are not counted.
    """
    T = int(round(seconds * sample_rate))
    P = math.ceil(T / config.patch_length)
    macs = 0
    n, cin = config.patch_length, 6
    for _ in range(config.compressor_layers):
        n = math.ceil(n / config.compressor_stride)
        macs += P * n * config.embed_channels * cin * config.compressor_kernel
        cin = config.embed_channels
    W = n
    k = config.kernel_size
    for cout in config.extractor_channels:
        macs += P * W * (cout * cin * k + cout * cout * k)
        if cin != cout:
            macs += P * W * cout * cin
        cin = cout
    C = config.channels
    macs += config.context_blocks * 2 * P * W * C * C * k * k
    macs += config.pooled_features * config.head_hidden + config.head_hidden * config.out_features
    return macs
