"""Timestamped IMU sequences shared by the simulator, the filter and the datasets."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

DT_TOL = 1e-6


@dataclass
class ImuSequence:
    """Uniformly sampled accelerometer, gyroscope and (optional) magnetometer data.

    ``frame`` is ``"device"`` for raw measurements and ``"nav"`` once aligned.
    ``positions``/``quats`` carry ground truth when known (one row per sample).
    """

    t: np.ndarray
    accel: np.ndarray
    gyro: np.ndarray
    mag: np.ndarray | None = None
    frame: str = "device"
    positions: np.ndarray | None = None
    quats: np.ndarray | None = None
    seq_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.accel = np.asarray(self.accel, dtype=float)
        self.gyro = np.asarray(self.gyro, dtype=float)
        n = len(self.t)
        if n < 1:
            raise ValueError("an IMU sequence needs at least one sample")
        for name in ("accel", "gyro", "mag", "positions"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=float)
            if arr.shape != (n, 3):
                raise ValueError(f"{name} must have shape ({n}, 3), got {arr.shape}")
            setattr(self, name, arr)
        if self.quats is not None:
            self.quats = np.asarray(self.quats, dtype=float)
            if self.quats.shape != (n, 4):
                raise ValueError(f"quats must have shape ({n}, 4), got {self.quats.shape}")
        if self.frame not in ("device", "nav"):
            raise ValueError(f"unknown frame {self.frame!r}")
        if n > 1:
            dt = np.diff(self.t)
            if np.any(dt <= 0) or np.ptp(dt) > DT_TOL:
                raise ValueError("timestamps must be strictly increasing and uniform")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def dt(self) -> float:
        if len(self.t) < 2:
            raise ValueError("sample interval undefined for a single sample")
        return float((self.t[-1] - self.t[0]) / (len(self.t) - 1))

    @property
    def sample_rate(self) -> float:
        return 1.0 / self.dt

    @property
    def has_truth(self) -> bool:
        return self.positions is not None

    def channels(self) -> np.ndarray:
        """Accel and gyro stacked as a ``(6, N)`` array ``(ax, ay, az, gx, gy, gz)``."""
        return np.concatenate([self.accel, self.gyro], axis=1).T

    def copy(self, **changes) -> "ImuSequence":
        out = replace(self, **changes)
        for name in ("t", "accel", "gyro", "mag", "positions", "quats"):
            arr = getattr(out, name)
            if arr is not None and name not in changes:
                setattr(out, name, arr.copy())
        out.meta = dict(self.meta)
        return out
