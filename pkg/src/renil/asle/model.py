"""Any-scale Laplace estimator network.

Input ``(B, P, 6, L)`` patches; every patch is embedded and passed through a 1D
residual extractor independently, then a stack of 2D residual blocks mixes
neighbouring patches. Adaptive pooling over (patch, width) gives a feature
vector whose size does not depend on ``P``, and the head regresses mean speed
and log Laplace scale per planar axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .config import AsleConfig


class ModelDivergedError(RuntimeError):
    """Non-finite activations or losses."""


def same_padding(n: int, kernel: int, stride: int) -> tuple[int, int]:
    out = -(-n // stride)
    total = max((out - 1) * stride + kernel - n, 0)
    return total // 2, total - total // 2


class StridedConv1d(nn.Conv1d):
    """Conv1d with zero "same" padding computed for the actual input length."""

    def forward(self, x):
        pad = same_padding(x.shape[-1], self.kernel_size[0], self.stride[0])
        return super().forward(F.pad(x, pad))


class ResBlock1d(nn.Module):
    def __init__(self, cin: int, cout: int, kernel: int, groups: int):
        super().__init__()
        self.conv1 = nn.Conv1d(cin, cout, kernel, padding=kernel // 2)
        self.gn1 = nn.GroupNorm(groups, cout)
        self.conv2 = nn.Conv1d(cout, cout, kernel, padding=kernel // 2)
        self.gn2 = nn.GroupNorm(groups, cout)
        self.proj = nn.Conv1d(cin, cout, 1) if cin != cout else None

    def forward(self, x):
        y = F.relu(self.gn1(self.conv1(x)))
        y = self.gn2(self.conv2(y))
        return y + (x if self.proj is None else self.proj(x))


class ResBlock2d(nn.Module):
    def __init__(self, channels: int, kernel: int, groups: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, kernel, padding=kernel // 2)
        self.gn1 = nn.GroupNorm(groups, channels)
        self.conv2 = nn.Conv2d(channels, channels, kernel, padding=kernel // 2)
        self.gn2 = nn.GroupNorm(groups, channels)

    def forward(self, x):
        y = F.relu(self.gn1(self.conv1(x)))
        return x + self.gn2(self.conv2(y))


@dataclass
class Prediction:
    """Mean speed and log speed scale per planar axis, plus the window duration."""

    speed: torch.Tensor  # (B, 2) m/s
    log_scale: torch.Tensor  # (B, 2) log of the speed Laplace scale
    t: torch.Tensor  # (B,) s

    @property
    def displacement(self) -> torch.Tensor:
        return self.t[:, None] * self.speed

    @property
    def scale(self) -> torch.Tensor:
        """Laplace scale of the displacement, ``t * exp(log_scale)``."""
        return self.t[:, None] * torch.exp(self.log_scale)


class AsleNet(nn.Module):
    def __init__(self, config: AsleConfig | None = None):
        super().__init__()
        self.config = cfg = config or AsleConfig()
        layers = []
        cin = 6
        for _ in range(cfg.compressor_layers):
            layers.append(StridedConv1d(cin, cfg.embed_channels, cfg.compressor_kernel,
                                        stride=cfg.compressor_stride))
            cin = cfg.embed_channels
        self.compressor = nn.Sequential(*layers)
        self.embed_norm = nn.GroupNorm(cfg.gn_groups, cfg.embed_channels)

        blocks = []
        cin = cfg.embed_channels
        for cout in cfg.extractor_channels:
            blocks.append(ResBlock1d(cin, cout, cfg.kernel_size, cfg.gn_groups))
            cin = cout
        self.extractor = nn.Sequential(*blocks)
        self.context = nn.Sequential(
            *[ResBlock2d(cfg.channels, cfg.kernel_size, cfg.gn_groups)
              for _ in range(cfg.context_blocks)]
        )
        self.head = nn.Sequential(
            nn.Linear(cfg.pooled_features, cfg.head_hidden),
            nn.ReLU(),
            nn.Dropout(cfg.dropout),
            nn.Linear(cfg.head_hidden, cfg.out_features),
        )
        self.reset_parameters()

    def reset_parameters(self):
        for m in self.modules():
            if isinstance(m, (nn.Conv1d, nn.Conv2d, nn.Linear)):
                nn.init.kaiming_uniform_(m.weight, nonlinearity="relu")
                nn.init.zeros_(m.bias)
            elif isinstance(m, nn.GroupNorm):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)
        # start near v=0, log b=0 so the first Laplace terms stay O(1)
        with torch.no_grad():
            self.head[-1].weight.mul_(0.01)

    # -- stages ---------------------------------------------------------------

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        """``(B, P, 6, L)`` -> ``(B, P, e, L')``."""
        if x.ndim != 4 or x.shape[2] != 6:
            raise ValueError(f"expected (B, P, 6, L) input, got {tuple(x.shape)}")
        if x.shape[3] < self.config.compressor_stride:
            raise ValueError("patch length shorter than the compressor stride")
        B, P, C, L = x.shape
        y = self.compressor(x.reshape(B * P, C, L))
        y = self.embed_norm(F.relu(y))
        return y.reshape(B, P, y.shape[1], y.shape[2])

    def extract_features(self, xe: torch.Tensor) -> torch.Tensor:
        """``(B, P, e, W)`` -> ``(B, P, C, W)``; patches are processed independently."""
        B, P, C, W = xe.shape
        y = self.extractor(xe.reshape(B * P, C, W))
        return y.reshape(B, P, y.shape[1], W)

    def build_context(self, xf: torch.Tensor) -> torch.Tensor:
        """``(B, P, C, W)`` -> ``(B, C, P, W)`` after mixing neighbouring patches."""
        return self.context(xf.transpose(1, 2))

    def pool(self, xf: torch.Tensor, ctx: torch.Tensor) -> torch.Tensor:
        """Scale pooling: fixed-width ``(B, pooled_features)`` for any patch count."""
        f1 = xf.mean(dim=(1, 3))
        parts = [f1]
        for size in self.config.avg_pools:
            parts.append(F.adaptive_avg_pool2d(ctx, size).flatten(1))
        for size in self.config.max_pools:
            parts.append(F.adaptive_max_pool2d(ctx, size).flatten(1))
        return torch.cat(parts, dim=1)

    def pco(self, xf: torch.Tensor, ctx: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        out = self.head(self.pool(xf, ctx))
        return out[:, :2], out[:, 2:]

    def features(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        xf = self.extract_features(self.embed(x))
        return xf, self.build_context(xf)

    def forward(self, x: torch.Tensor, t, return_context: bool = False):
        t = torch.as_tensor(t, dtype=x.dtype, device=x.device).reshape(-1)
        if t.numel() == 1 and x.shape[0] > 1:
            t = t.expand(x.shape[0])
        if torch.any(t <= 0):
            raise ValueError("window duration must be positive")
        xf, ctx = self.features(x)
        speed, log_scale = self.pco(xf, ctx)
        if not (torch.isfinite(speed).all() and torch.isfinite(log_scale).all()):
            raise ModelDivergedError("non-finite network output")
        pred = Prediction(speed, log_scale, t)
        if return_context:
            return pred, ctx
        return pred


def build_model(config: AsleConfig | None = None, seed: int = 0,
                dtype: torch.dtype = torch.float32) -> AsleNet:
    """Deterministically initialized network."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = AsleNet(config)
    return model.to(dtype)
