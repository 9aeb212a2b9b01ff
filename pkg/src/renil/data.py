"""Window sampling between positioning demand points, patching and augmentations.

Channel layout everywhere is ``(ax, ay, az, gx, gy, gz)`` in the navigation
frame, z vertical. A window of ``T`` samples becomes ``P = ceil(T / L)``
patches of length ``L``; the tail of the last patch is zero-filled, and masked
patches use the same zero fill.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .sequence import ImuSequence

N_CHANNELS = 6
HEADING_PAIRS = ((0, 1), (3, 4))


@dataclass
class PatchTensor:
    """``data`` has shape ``(B, P, 6, L)``; ``lengths[b]`` is the valid sample count."""

    data: np.ndarray
    lengths: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        self.lengths = np.asarray(self.lengths, dtype=int)
        if self.data.ndim != 4 or self.data.shape[2] != N_CHANNELS:
            raise ValueError(f"patch tensor must be (B, P, 6, L), got {self.data.shape}")
        B, P, _, L = self.data.shape
        if self.lengths.shape != (B,):
            raise ValueError("one valid length per batch element is required")
        expected = -(-self.lengths // L)
        if np.any(expected != P):
            raise ValueError("every batch element must fill exactly P = ceil(T/L) patches")

    @property
    def shape(self):
        return self.data.shape

    @property
    def patch_length(self) -> int:
        return self.data.shape[3]

    def copy(self) -> "PatchTensor":
        return PatchTensor(self.data.copy(), self.lengths.copy())

    def series(self, b: int) -> np.ndarray:
        """View element ``b`` back as a ``(6, P*L)`` array (padding included)."""
        P, L = self.data.shape[1], self.data.shape[3]
        return self.data[b].transpose(1, 0, 2).reshape(N_CHANNELS, P * L)


def patch(X, L: int) -> PatchTensor:
    """Split a ``(6, T)`` window into non-overlapping patches of length ``L``."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != N_CHANNELS:
        raise ValueError(f"window must have shape (6, T), got {X.shape}")
    T = X.shape[1]
    if T < 1:
        raise ValueError("cannot patch an empty window")
    if L < 1:
        raise ValueError("patch length must be at least 1")
    P = math.ceil(T / L)
    padded = np.zeros((N_CHANNELS, P * L))
    padded[:, :T] = X
    return PatchTensor(padded.reshape(N_CHANNELS, P, L).transpose(1, 0, 2)[None], np.array([T]))


def patch_batch(windows: Sequence[np.ndarray], L: int) -> PatchTensor:
    """Patch several windows that share the same patch count into one batch."""
    parts = [patch(w, L) for w in windows]
    counts = {p.data.shape[1] for p in parts}
    if len(counts) != 1:
        raise ValueError(f"windows yield different patch counts {sorted(counts)}")
    return PatchTensor(
        np.concatenate([p.data for p in parts]), np.concatenate([p.lengths for p in parts])
    )


def unpatch(x: PatchTensor) -> list[np.ndarray]:
    """Inverse of :func:`patch`: trimmed ``(6, T_b)`` windows."""
    return [x.series(b)[:, : x.lengths[b]].copy() for b in range(x.data.shape[0])]


# -- demand-point windows ---------------------------------------------------


@dataclass
class FixedScale:
    seconds: float

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.full(n, float(self.seconds))


@dataclass
class LogUniformScale:
    low: float = 1.0
    high: float = 60.0

    def __post_init__(self):
        if not 0 < self.low <= self.high:
            raise ValueError("log-uniform scale needs 0 < low <= high")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.exp(rng.uniform(np.log(self.low), np.log(self.high), n))

    def cdf(self, x):
        x = np.clip(np.asarray(x, dtype=float), self.low, self.high)
        return np.log(x / self.low) / np.log(self.high / self.low)


@dataclass
class SampleWindow:
    """Span between two demand points of one sequence, with its displacement label."""

    seq_index: int
    start: int
    end: int  # exclusive sample index; also the index of the closing demand point
    duration: float
    displacement: np.ndarray
    seq_id: str = ""

    @property
    def n_samples(self) -> int:
        return self.end - self.start

    @property
    def speed(self) -> np.ndarray:
        return self.displacement / self.duration


def make_window(seq: ImuSequence, start: int, end: int, seq_index: int = 0) -> SampleWindow:
    if seq.positions is None:
        raise ValueError("labels need ground-truth positions")
    if not 0 <= start < end < len(seq):
        raise ValueError(f"window [{start}, {end}] exceeds sequence of {len(seq)} samples")
    dp = seq.positions[end, :2] - seq.positions[start, :2]
    return SampleWindow(seq_index, start, end, (end - start) * seq.dt, dp, seq.seq_id)


def sample_windows(dataset: Sequence[ImuSequence], scale, count: int, seed: int) -> list[SampleWindow]:
    """Draw ``count`` labelled windows with durations from ``scale``.

    A window of ``T`` samples starts at demand point ``i0`` and closes at
    ``i0 + T``; its label is the planar ground-truth displacement between them.
    """
    if not dataset:
        raise ValueError("empty dataset")
    for seq in dataset:
        if seq.positions is None:
            raise ValueError(f"sequence {seq.seq_id!r} has no ground truth")
    rng = np.random.default_rng(seed)
    lengths = np.array([len(s) for s in dataset])
    out = []
    for dur in scale.sample(rng, count):
        rate = dataset[0].sample_rate
        T = max(1, int(round(dur * rate)))
        ok = np.flatnonzero(lengths >= T + 1)
        if ok.size == 0:
            raise ValueError(f"a {dur:.2f} s window exceeds every sequence")
        i = int(rng.choice(ok))
        start = int(rng.integers(0, lengths[i] - T))
        out.append(make_window(dataset[i], start, start + T, i))
    return out


def window_data(seq: ImuSequence, w: SampleWindow) -> np.ndarray:
    """The ``(6, T)`` aligned accel/gyro samples of a window."""
    if seq.frame != "nav":
        raise ValueError("windows are cut from navigation-frame (aligned) sequences")
    return seq.channels()[:, w.start : w.end]


# -- augmentations ----------------------------------------------------------


@dataclass
class AugmentationSpec:
    mask_prob: float = 0.1  # per patch
    quat_bias_max_angle: float = math.radians(5.0)
    accel_sigma: float = 0.1
    gyro_sigma: float = 0.01
    heading_range: float = math.pi
    protrusion_count: int = 2
    protrusion_amplitude: float = 0.5
    protrusion_width: float = 10.0  # samples
    # probability that each augmentation is applied to a given window
    apply: dict = field(
        default_factory=lambda: {
            "mask": 0.5,
            "quat_bias": 0.5,
            "gaussian": 0.5,
            "protrusions": 0.5,
            "heading": 1.0,
        }
    )

    def __post_init__(self):
        if not 0.0 <= self.mask_prob <= 1.0:
            raise ValueError("mask_prob must lie in [0, 1]")
        for key, p in self.apply.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"apply probability for {key} must lie in [0, 1]")
        for name in ("quat_bias_max_angle", "accel_sigma", "gyro_sigma", "heading_range",
                     "protrusion_count", "protrusion_amplitude", "protrusion_width"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def _valid_mask(x: PatchTensor) -> np.ndarray:
    """Boolean ``(B, P, 1, L)`` mask of non-padding positions."""
    B, P, _, L = x.data.shape
    idx = np.arange(P)[:, None] * L + np.arange(L)[None, :]
    return (idx[None] < x.lengths[:, None, None])[:, :, None, :]


def augment_mask(x: PatchTensor, spec: AugmentationSpec, seed) -> PatchTensor:
    """Zero whole patches, each independently with probability ``spec.mask_prob``."""
    rng = np.random.default_rng(seed)
    out = x.copy()
    hit = rng.random(x.data.shape[:2]) < spec.mask_prob
    out.data[hit] = 0.0
    return out


def random_rotation(rng: np.random.Generator, max_angle: float) -> np.ndarray:
    """Rotation matrix about a uniformly random axis, angle uniform in ``[0, max_angle]``."""
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, max_angle)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K


def rotate_channels(x: PatchTensor, R: np.ndarray) -> PatchTensor:
    """Apply ``R`` (``(3, 3)`` or per element ``(B, 3, 3)``) to accel and gyro triples."""
    R = np.broadcast_to(np.asarray(R, dtype=float), (x.data.shape[0], 3, 3))
    out = x.copy()
    for sl in (slice(0, 3), slice(3, 6)):
        out.data[:, :, sl, :] = np.einsum("bij,bpjl->bpil", R, x.data[:, :, sl, :])
    return out


def augment_quat_bias(x: PatchTensor, spec: AugmentationSpec, seed) -> PatchTensor:
    """One small random 3D rotation per window, applied to every sample of it."""
    rng = np.random.default_rng(seed)
    R = np.stack([random_rotation(rng, spec.quat_bias_max_angle) for _ in range(x.data.shape[0])])
    return rotate_channels(x, R)


def augment_gaussian(x: PatchTensor, spec: AugmentationSpec, seed) -> PatchTensor:
    """Zero-mean white noise on the valid accel/gyro samples; padding stays zero."""
    rng = np.random.default_rng(seed)
    sigma = np.array([spec.accel_sigma] * 3 + [spec.gyro_sigma] * 3)[None, None, :, None]
    noise = rng.standard_normal(x.data.shape) * sigma * _valid_mask(x)
    return PatchTensor(x.data + noise, x.lengths.copy())


def rotate_heading(x: PatchTensor, labels, theta) -> tuple[PatchTensor, np.ndarray]:
    """Rotate the horizontal accel/gyro components and the planar labels by ``theta``."""
    theta = np.broadcast_to(np.asarray(theta, dtype=float), (x.data.shape[0],))
    c, s = np.cos(theta)[:, None, None], np.sin(theta)[:, None, None]
    out = x.copy()
    for i, j in HEADING_PAIRS:
        xi, xj = x.data[:, :, i, :], x.data[:, :, j, :]
        out.data[:, :, i, :] = c * xi - s * xj
        out.data[:, :, j, :] = s * xi + c * xj
    labels = np.asarray(labels, dtype=float).reshape(-1, 2)
    c1, s1 = np.cos(theta), np.sin(theta)
    rotated = np.stack([c1 * labels[:, 0] - s1 * labels[:, 1],
                        s1 * labels[:, 0] + c1 * labels[:, 1]], axis=1)
    return out, rotated


def augment_heading(x: PatchTensor, labels, spec: AugmentationSpec, seed):
    """Random planar rotation of inputs and labels, angle uniform in ``±heading_range``."""
    rng = np.random.default_rng(seed)
    theta = rng.uniform(-spec.heading_range, spec.heading_range, x.data.shape[0])
    return rotate_heading(x, labels, theta)


def gaussian_bump(n: int, center: float, amplitude: float, width: float) -> np.ndarray:
    """Gaussian protrusion sampled on ``range(n)``, truncated beyond four widths."""
    k = np.arange(n)
    d = k - center
    bump = amplitude * np.exp(-0.5 * (d / width) ** 2)
    bump[np.abs(d) > 4 * width] = 0.0
    return bump


def augment_protrusions(x: PatchTensor, spec: AugmentationSpec, seed) -> PatchTensor:
    """Add ``protrusion_count`` smooth bumps of random sign to every channel of every window."""
    rng = np.random.default_rng(seed)
    out = x.copy()
    if spec.protrusion_count == 0 or spec.protrusion_amplitude == 0:
        return out
    w = spec.protrusion_width
    for b in range(x.data.shape[0]):
        T = int(x.lengths[b])
        series = out.series(b).copy()
        lo, hi = (4 * w, T - 1 - 4 * w) if T - 1 > 8 * w else (0.0, T - 1.0)
        for ch in range(N_CHANNELS):
            for _ in range(spec.protrusion_count):
                amp = spec.protrusion_amplitude * rng.choice([-1.0, 1.0])
                series[ch, :T] += gaussian_bump(T, rng.uniform(lo, hi), amp, w)
        P, L = x.data.shape[1], x.data.shape[3]
        out.data[b] = series.reshape(N_CHANNELS, P, L).transpose(1, 0, 2)
    return out


def window_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    """Independent per-window seeds from one batch seed."""
    return np.random.SeedSequence(seed).spawn(n)


def augment(x: PatchTensor, spec: AugmentationSpec, seed: int) -> PatchTensor:
    """Disturbance augmentations for the self-supervised branch (labels unchanged).

    Each of masking, rotation bias, noise and protrusions is applied to each
    window independently with its ``spec.apply`` probability; the ones drawn
    compose in that order.
    """
    out = x.copy()
    ops = (("quat_bias", augment_quat_bias), ("gaussian", augment_gaussian),
           ("protrusions", augment_protrusions), ("mask", augment_mask))
    for b, ss in enumerate(window_seeds(seed, x.data.shape[0])):
        rng = np.random.default_rng(ss)
        one = PatchTensor(out.data[b : b + 1], out.lengths[b : b + 1])
        for name, fn in ops:
            sub = int(rng.integers(2**63))
            if rng.random() < spec.apply.get(name, 0.0):
                one = fn(one, spec, sub)
        out.data[b] = one.data[0]
    return out
