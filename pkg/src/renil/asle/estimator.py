"""scikit-learn style wrapper around the network and its training loop."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .. import data
from ..sequence import ImuSequence
from . import train as _train
from .config import AsleConfig, TrainConfig
from .model import build_model


def check_windows(X, sample_rate: float) -> list[np.ndarray]:
    """Validate a list of ``(6, T)`` aligned windows."""
    if isinstance(X, np.ndarray) and X.ndim == 2:
        X = [X]
    out = []
    for w in X:
        w = np.asarray(w, dtype=float)
        if w.ndim != 2 or w.shape[0] != data.N_CHANNELS or w.shape[1] < 1:
            raise ValueError(f"each window must be (6, T) with T >= 1, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("windows contain non-finite samples")
        out.append(w)
    if not out:
        raise ValueError("no windows given")
    if sample_rate <= 0:
        raise ValueError("sample_rate must be positive")
    return out


def check_sequences(X) -> list[ImuSequence]:
    X = list(X)
    if not X:
        raise ValueError("no training sequences given")
    for s in X:
        if not isinstance(s, ImuSequence):
            raise TypeError("training data must be ImuSequence objects")
        if s.frame != "nav" or s.positions is None:
            raise ValueError(f"sequence {s.seq_id!r} must be nav-frame with truth positions")
    return X


class AsleRegressor(RegressorMixin, BaseEstimator):
    """Displacement and Laplace scale regressor for aligned IMU windows.

    ``fit`` takes navigation-frame sequences with truth; ``predict`` takes a
    list of ``(6, T)`` windows of any length and returns ``(n, 2)``
    displacements. ``predict_dist`` also returns the Laplace scales.
    """

    def __init__(self, config=None, train_config=None, seed=0, sample_rate=200.0, dtype="float32"):
        self.config = config
        self.train_config = train_config
        self.seed = seed
        self.sample_rate = sample_rate
        self.dtype = dtype

    def _configs(self):
        acfg = self.config if isinstance(self.config, AsleConfig) else AsleConfig.from_dict(self.config or {})
        tcfg = self.train_config
        if not isinstance(tcfg, TrainConfig):
            tcfg = TrainConfig.from_dict({"seed": self.seed, **(tcfg or {})})
        return acfg, tcfg

    def fit(self, X, y=None, val=None, callback=None):
        import torch

        train_set = check_sequences(X)
        val_set = check_sequences(val) if val else None
        acfg, tcfg = self._configs()
        self.model_ = build_model(acfg, self.seed, getattr(torch, self.dtype))
        self.history_ = _train.fit(self.model_, train_set, val_set, tcfg, callback)
        return self

    def predict_dist(self, X) -> tuple[np.ndarray, np.ndarray]:
        check_is_fitted(self, "model_")
        windows = check_windows(X, self.sample_rate)
        L = self.model_.config.patch_length
        dp = np.zeros((len(windows), 2))
        b = np.zeros((len(windows), 2))
        groups: dict[int, list[int]] = {}
        for i, w in enumerate(windows):
            groups.setdefault(-(-w.shape[1] // L), []).append(i)
        for idx in groups.values():
            x = data.patch_batch([windows[i] for i in idx], L)
            t = np.array([windows[i].shape[1] / self.sample_rate for i in idx])
            dp[idx], b[idx] = _train.predict_batch(self.model_, x, t)
        return dp, b

    def predict(self, X) -> np.ndarray:
        return self.predict_dist(X)[0]

    def score(self, X, y, sample_weight=None):
        """Negative mean Euclidean displacement error (higher is better)."""
        err = np.linalg.norm(self.predict(X) - np.asarray(y, dtype=float), axis=1)
        return -float(np.average(err, weights=sample_weight))
