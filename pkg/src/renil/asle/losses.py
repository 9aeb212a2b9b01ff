"""Training objectives: Laplace negative log-likelihood on mean speed and feature matching."""

from __future__ import annotations

import numpy as np
import torch

from .model import Prediction


def nll_loss(pred: Prediction, speed: torch.Tensor, include_log_t: bool = False) -> torch.Tensor:
    """Mean over batch and axes of ``|v - v_hat| * exp(-log_b) + log_b``.

    The additive constant is dropped. ``include_log_t`` adds the
    parameter-free ``log t`` term so loss values match the displacement-space
    likelihood up to that constant.
    """
    speed = torch.as_tensor(speed, dtype=pred.speed.dtype)
    if speed.shape != pred.speed.shape:
        raise ValueError(f"label shape {tuple(speed.shape)} != prediction {tuple(pred.speed.shape)}")
    per = torch.abs(speed - pred.speed) * torch.exp(-pred.log_scale) + pred.log_scale
    if include_log_t:
        per = per + torch.log(pred.t)[:, None]
    return per.mean()


def nll_terms(speed_hat, log_scale, speed) -> np.ndarray:
    """Per-element loss terms, numpy version of :func:`nll_loss`."""
    return np.abs(speed - speed_hat) * np.exp(-log_scale) + log_scale


def nll_gradients(speed_hat, log_scale, speed) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form derivatives of one loss term w.r.t. ``speed_hat`` and ``log_scale``."""
    r = speed - speed_hat
    inv_b = np.exp(-log_scale)
    return -np.sign(r) * inv_b, 1.0 - np.abs(r) * inv_b


def feature_match_loss(clean: torch.Tensor, augmented: torch.Tensor) -> torch.Tensor:
    """Mean squared difference between context maps; the clean map is a fixed target."""
    if clean.shape != augmented.shape:
        raise ValueError(f"feature maps differ in shape: {tuple(clean.shape)} vs {tuple(augmented.shape)}")
    return torch.mean((augmented - clean.detach()) ** 2)
