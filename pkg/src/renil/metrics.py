"""Trajectory, orientation and calibration metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MIN_STEP = 0.01  # m; shorter steps carry no usable heading


@dataclass
class TrajectoryEstimate:
    t: np.ndarray
    positions: np.ndarray  # (N, 2) or (N, 3); only x, y are scored
    quats: np.ndarray | None = None
    scales: np.ndarray | None = None  # (N, 2) per-point Laplace scale

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.positions = np.asarray(self.positions, dtype=float)
        if self.positions.ndim != 2 or self.positions.shape[0] != self.t.size:
            raise ValueError("positions must be (N, d) with one row per timestamp")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if self.quats is not None:
            self.quats = np.asarray(self.quats, dtype=float).reshape(self.t.size, 4)
        if self.scales is not None:
            self.scales = np.asarray(self.scales, dtype=float).reshape(self.t.size, -1)

    @property
    def xy(self) -> np.ndarray:
        return self.positions[:, :2]


def match(est: TrajectoryEstimate, truth: TrajectoryEstimate, tol: float | None = None):
    """Index pairs ``(i_est, i_truth)`` of nearest timestamps within ``tol``.

    ``tol`` defaults to half the median truth sampling interval.
    """
    if tol is None:
        tol = 0.5 * float(np.median(np.diff(truth.t))) if truth.t.size > 1 else 1e-9
    j = np.clip(np.searchsorted(truth.t, est.t), 1, max(truth.t.size - 1, 1))
    left = np.clip(j - 1, 0, truth.t.size - 1)
    right = np.clip(j, 0, truth.t.size - 1)
    pick = np.where(np.abs(truth.t[left] - est.t) <= np.abs(truth.t[right] - est.t), left, right)
    ok = np.abs(truth.t[pick] - est.t) <= tol + 1e-12
    if not ok.any():
        raise ValueError("estimate and truth share no timestamps")
    return np.flatnonzero(ok), pick[ok]


def _pair(est, truth):
    i, j = match(est, truth)
    return est.xy[i], truth.xy[j], truth.t[j]


def mae(est: TrajectoryEstimate, truth: TrajectoryEstimate) -> float:
    """Mean Euclidean position error, m."""
    p_hat, p, _ = _pair(est, truth)
    return float(np.linalg.norm(p_hat - p, axis=1).mean())


def ade(est: TrajectoryEstimate, truth: TrajectoryEstimate) -> float:
    """Mean displacement error per unit time between consecutive matched points, m/s."""
    p_hat, p, t = _pair(est, truth)
    if t.size < 2:
        raise ValueError("need at least two matched points")
    err = np.linalg.norm(np.diff(p_hat, axis=0) - np.diff(p, axis=0), axis=1)
    return float(np.mean(err / np.diff(t)))


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def he(est: TrajectoryEstimate, truth: TrajectoryEstimate) -> float:
    """Mean absolute heading error of the per-step displacement direction, rad."""
    p_hat, p, _ = _pair(est, truth)
    d_hat, d = np.diff(p_hat, axis=0), np.diff(p, axis=0)
    keep = (np.linalg.norm(d, axis=1) >= MIN_STEP) & (np.linalg.norm(d_hat, axis=1) >= MIN_STEP)
    if not keep.any():
        raise ValueError("no step long enough to define a heading")
    th_hat = np.arctan2(d_hat[keep, 1], d_hat[keep, 0])
    th = np.arctan2(d[keep, 1], d[keep, 0])
    return float(np.mean(np.abs(wrap_angle(th_hat - th))))


def _quat_dots(q_hat, q):
    q_hat = np.atleast_2d(np.asarray(q_hat, dtype=float))
    q = np.atleast_2d(np.asarray(q, dtype=float))
    if q_hat.shape != q.shape or q.shape[-1] != 4:
        raise ValueError("quaternion streams must both be (N, 4)")
    return np.sum(q_hat * q, axis=1) / (np.linalg.norm(q_hat, axis=1) * np.linalg.norm(q, axis=1))


def qae(q_hat, q) -> float:
    """Mean rotation angle between quaternion streams, rad."""
    c = np.clip(np.abs(_quat_dots(q_hat, q)), 0.0, 1.0)
    return float(np.mean(2.0 * np.arccos(c)))


def cs(q_hat, q) -> float:
    """Mean cosine similarity after hemisphere alignment."""
    return float(np.mean(np.abs(_quat_dots(q_hat, q))))


def laplace_interval(scale, level):
    """Half-width of the central Laplace interval holding mass ``level``."""
    level = np.asarray(level, dtype=float)
    if np.any((level <= 0) | (level >= 1)):
        raise ValueError("levels must lie in (0, 1)")
    return np.asarray(scale, dtype=float) * np.log(1.0 / (1.0 - level))


def coverage(pred, scale, truth, levels=(0.683, 0.95, 0.997)) -> dict[float, float]:
    """Fraction of per-axis residuals inside the central Laplace interval at each level.

    ``pred``, ``scale`` and ``truth`` are ``(N, 2)`` displacement, Laplace
    scale and true displacement; all axes are pooled.
    """
    pred, scale, truth = (np.asarray(a, dtype=float) for a in (pred, scale, truth))
    if np.any(scale <= 0):
        raise ValueError("Laplace scales must be positive")
    r = np.abs(truth - pred)
    return {float(lv): float(np.mean(r <= laplace_interval(scale, lv))) for lv in levels}


def report(values: dict) -> str:
    """``key=value`` lines, sorted by key."""
    return "".join(f"{k}={v:.10g}\n" if isinstance(v, float) else f"{k}={v}\n"
                   for k, v in sorted(values.items()))


def parse_report(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if line.strip():
            k, v = line.split("=", 1)
            try:
                out[k] = float(v)
            except ValueError:
                out[k] = v
    return out
