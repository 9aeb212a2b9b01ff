"""Joint supervised / self-supervised training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch

from .. import data
from ..sequence import ImuSequence
from .config import TrainConfig
from .losses import feature_match_loss, nll_loss
from .model import AsleNet, ModelDivergedError

log = logging.getLogger(__name__)


@dataclass
class Batch:
    x: data.PatchTensor
    t: np.ndarray  # (B,) s
    displacement: np.ndarray  # (B, 2) m

    @property
    def speed(self) -> np.ndarray:
        return self.displacement / self.t[:, None]


@dataclass
class LossBreakdown:
    total: float
    nll: float
    fm: float


def make_batch(dataset: Sequence[ImuSequence], windows: Sequence[data.SampleWindow],
               patch_length: int) -> Batch:
    xs = [data.window_data(dataset[w.seq_index], w) for w in windows]
    return Batch(
        x=data.patch_batch(xs, patch_length),
        t=np.array([w.duration for w in windows]),
        displacement=np.array([w.displacement for w in windows]),
    )


def to_tensor(x: data.PatchTensor, model: AsleNet) -> torch.Tensor:
    dtype = next(model.parameters()).dtype
    return torch.as_tensor(x.data, dtype=dtype)


def train_step(model: AsleNet, optimizer: torch.optim.Optimizer, batch: Batch,
               aug_spec: data.AugmentationSpec, seed: int, fm_weight: float = 1.0,
               include_log_t: bool = False) -> LossBreakdown:
    """One optimizer update on ``L_nll(augmented) + fm_weight * L_fm``.

    The batch is expected to carry any label-changing (heading) rotation
    already; ``aug_spec`` drives the label-preserving disturbances. Dropout
    draws from the global torch generator, reseeded from ``seed``.
    """
    model.train()
    torch.manual_seed(seed)
    dtype = next(model.parameters()).dtype
    x_clean = to_tensor(batch.x, model)
    x_aug = to_tensor(data.augment(batch.x, aug_spec, seed), model)
    t = torch.as_tensor(batch.t, dtype=dtype)
    speed = torch.as_tensor(batch.speed, dtype=dtype)

    with torch.no_grad():
        _, ctx_clean = model.features(x_clean)
    pred, ctx_aug = model(x_aug, t, return_context=True)
    l_nll = nll_loss(pred, speed, include_log_t=include_log_t)
    l_fm = feature_match_loss(ctx_clean, ctx_aug)
    total = l_nll + fm_weight * l_fm
    if not torch.isfinite(total):
        raise ModelDivergedError(
            f"non-finite loss (nll={l_nll.item()}, fm={l_fm.item()}) at seed {seed}"
        )
    optimizer.zero_grad(set_to_none=True)
    total.backward()
    optimizer.step()
    return LossBreakdown(total.item(), l_nll.item(), l_fm.item())


@torch.no_grad()
def predict_batch(model: AsleNet, x: data.PatchTensor, t) -> tuple[np.ndarray, np.ndarray]:
    """Displacement and Laplace scale, both ``(B, 2)``, in eval mode."""
    model.eval()
    pred = model(to_tensor(x, model), torch.as_tensor(np.asarray(t, dtype=float)))
    return pred.displacement.double().numpy(), pred.scale.double().numpy()


def evaluate(model: AsleNet, dataset: Sequence[ImuSequence], windows, patch_length: int,
             batch_size: int = 64) -> dict:
    """Mean displacement error, zero-displacement baseline and mean NLL over ``windows``."""
    dp_hat, b_hat, dp = [], [], []
    for i in range(0, len(windows), batch_size):
        chunk = windows[i : i + batch_size]
        by_len: dict[int, list] = {}
        for w in chunk:
            by_len.setdefault(-(-w.n_samples // patch_length), []).append(w)
        for group in by_len.values():
            batch = make_batch(dataset, group, patch_length)
            d, b = predict_batch(model, batch.x, batch.t)
            dp_hat.append(d)
            b_hat.append(b)
            dp.append(batch.displacement)
    dp_hat, b_hat, dp = map(np.concatenate, (dp_hat, b_hat, dp))
    err = np.linalg.norm(dp_hat - dp, axis=1)
    nll = np.mean(np.abs(dp - dp_hat) / b_hat + np.log(2 * b_hat))
    return {
        "mae": float(err.mean()),
        "baseline_mae": float(np.linalg.norm(dp, axis=1).mean()),
        "nll": float(nll),
        "pred": dp_hat,
        "scale": b_hat,
        "truth": dp,
    }


def _augmentation(cfg: TrainConfig) -> data.AugmentationSpec:
    return data.AugmentationSpec(**cfg.augment)


def training_batches(dataset: Sequence[ImuSequence], cfg: TrainConfig, epoch: int,
                     patch_length: int):
    """Yield ``(seed, Batch)`` pairs; each batch shares one duration drawn log-uniformly."""
    aug = _augmentation(cfg)
    scale = data.LogUniformScale(cfg.scale_low, cfg.scale_high)
    ss = np.random.SeedSequence([cfg.seed, epoch])
    for k, child in enumerate(ss.spawn(cfg.batches_per_epoch)):
        rng = np.random.default_rng(child)
        seconds = float(scale.sample(rng, 1)[0])
        seed = int(rng.integers(2**31))
        windows = data.sample_windows(dataset, data.FixedScale(seconds), cfg.batch_size, seed)
        batch = make_batch(dataset, windows, patch_length)
        if rng.random() < aug.apply.get("heading", 0.0):
            x, dp = data.augment_heading(batch.x, batch.displacement, aug, seed + 1)
            batch = Batch(x, batch.t, dp)
        yield seed, batch


def fit(model: AsleNet, train_set: Sequence[ImuSequence], val_set: Sequence[ImuSequence] | None,
        cfg: TrainConfig, callback: Callable[[dict], None] | None = None) -> list[dict]:
    """Train for ``cfg.epochs`` epochs; returns one record per epoch."""
    L = model.config.patch_length
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
        optimizer, factor=cfg.plateau_factor, patience=cfg.plateau_patience, min_lr=cfg.min_lr
    )
    val_windows = None
    if val_set:
        val_windows = data.sample_windows(
            val_set, data.FixedScale(cfg.val_seconds), cfg.val_windows, cfg.seed + 7919
        )
    aug = _augmentation(cfg)
    history = []
    for epoch in range(cfg.epochs):
        losses = [
            train_step(model, optimizer, batch, aug, seed, cfg.fm_weight, cfg.include_log_t)
            for seed, batch in training_batches(train_set, cfg, epoch, L)
        ]
        rec = {
            "epoch": epoch + 1,
            "loss": float(np.mean([l.total for l in losses])),
            "nll": float(np.mean([l.nll for l in losses])),
            "fm": float(np.mean([l.fm for l in losses])),
            "lr": optimizer.param_groups[0]["lr"],
        }
        monitor = rec["loss"]
        if val_windows is not None:
            ev = evaluate(model, val_set, val_windows, L)
            rec.update(val_mae=ev["mae"], val_baseline=ev["baseline_mae"], val_nll=ev["nll"])
            monitor = ev["nll"]
        if not math.isfinite(monitor):
            raise ModelDivergedError(f"non-finite monitor value at epoch {epoch + 1}")
        scheduler.step(monitor)
        history.append(rec)
        log.info("epoch %d %s", epoch + 1, {k: round(v, 4) for k, v in rec.items() if k != "epoch"})
        if callback is not None:
            callback(rec)
    return history
