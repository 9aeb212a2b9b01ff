"""Motion-aware orientation filter.

The gyroscope propagates the attitude every sample. The accelerometer and the
magnetometer each fill their own window of navigation-frame samples; when a
window closes, the corresponding tilt (accelerometer) or heading (magnetometer)
correction is blended in with an adaptive weight.

The accelerometer window spans one gait cycle (``t_step`` seconds). The
magnetometer window closes once the walker has moved ``delta`` metres from the
point where it opened, which needs an external position estimate.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, TransformerMixin

from . import geom
from .sequence import ImuSequence


class DegenerateWindowError(ValueError):
    """A sensor window carries no usable direction (free fall, vertical field)."""


@dataclass
class FilterParams:
    u: float = 1.0
    v: float = 1000.0
    h: float = 8.0
    gravity: float = 9.81
    t_step: float = 1.0  # s, accelerometer window length
    delta: float = 10.0  # m, magnetometer window trigger distance
    use_accel: bool = True
    use_mag: bool = True
    # pair the magnetometer correction with 1 - W_m instead of W_m
    mag_weight_inverted: bool = False
    # known navigation-frame field; None learns it from the first window
    mag_reference: tuple | None = None

    def __post_init__(self):
        for name in ("u", "v", "h", "gravity", "t_step", "delta"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def accel_weight(window, params: FilterParams) -> float:
    """Adaptive accelerometer weight from motion intensity and per-axis spread.

    ``2*sigmoid(u * mean|‖a‖ - g| + v * sum_j Var(a_j)) - 1``, using the
    population variance. 0 for a perfectly static window, approaching 1 under
    motion, where the gyroscope is trusted instead.
    """
    a = np.asarray(window, dtype=float)
    if a.ndim != 2 or a.shape[1] != 3 or len(a) == 0:
        raise ValueError("accelerometer window must be a non-empty (n, 3) array")
    intensity = params.u / len(a) * np.sum(np.abs(np.linalg.norm(a, axis=1) - params.gravity))
    spread = params.v * np.sum(np.var(a, axis=0))
    return float(2.0 * expit(intensity + spread) - 1.0)


def mag_weight(window, history_mean, params: FilterParams) -> float:
    """Adaptive magnetometer weight ``2*sigmoid(h / ‖m_hist - mean(window)‖) - 1``.

    Equals 1 when the window mean coincides with the history mean.
    """
    m = np.asarray(window, dtype=float)
    if m.ndim != 2 or m.shape[1] != 3 or len(m) == 0:
        raise ValueError("magnetometer window must be a non-empty (n, 3) array")
    dev = float(np.linalg.norm(np.asarray(history_mean, dtype=float) - m.mean(axis=0)))
    if dev == 0.0:
        return 1.0
    return float(2.0 * expit(params.h / dev) - 1.0)


def heading_and_tilt(q) -> tuple[float, np.ndarray]:
    """Split attitude ``q`` into a heading angle and a tilt quaternion.

    With ``Q = conj(q)`` (the Hamilton device-to-nav quaternion),
    ``Q = Rz(heading) ⊗ tilt`` where ``tilt`` rotates about a horizontal axis
    (zero z component). The tilt alone fixes where gravity points in the
    device frame.
    """
    big = geom.quat_conjugate(geom.as_quat(q))
    w, z = big[0], big[3]
    r = np.hypot(w, z)
    if r < 1e-12:
        return 0.0, big
    twist = np.array([w / r, 0.0, 0.0, z / r])
    tilt = geom.quat_multiply(geom.quat_conjugate(twist), big)
    return float(2.0 * np.arctan2(z, w)), tilt


def _from_heading_tilt(heading: float, tilt: np.ndarray) -> np.ndarray:
    twist = np.array([np.cos(heading / 2), 0.0, 0.0, np.sin(heading / 2)])
    return geom.quat_conjugate(geom.quat_normalize(geom.quat_multiply(twist, tilt)))


def _tilt_from_gravity(g_dev: np.ndarray) -> np.ndarray:
    """Minimal rotation taking the device-frame gravity direction onto +z."""
    g = g_dev / np.linalg.norm(g_dev)
    axis = np.cross(g, [0.0, 0.0, 1.0])
    s = np.linalg.norm(axis)
    c = g[2]
    if s < 1e-12:
        if c > 0:
            return geom.IDENTITY.copy()
        return np.array([0.0, 1.0, 0.0, 0.0])
    angle = np.arctan2(s, c)
    return geom.quat_from_axis_angle(axis / s, angle)


def accel_orientation(window, q, gravity: float) -> np.ndarray:
    """Tilt-corrected attitude: gravity estimate from the window, heading kept from ``q``.

    ``window`` holds navigation-frame accelerations rotated with the running
    attitude. Their mean is taken back to the device frame with ``q`` and the
    tilt that maps it onto +z replaces the tilt of ``q``.
    """
    a = np.asarray(window, dtype=float)
    mean = a.mean(axis=0)
    if np.linalg.norm(mean) <= 0.1 * gravity:
        raise DegenerateWindowError("accelerometer window mean too small (free fall?)")
    g_dev = geom.rotate_to_device(q, mean)
    heading, _ = heading_and_tilt(q)
    return _from_heading_tilt(heading, _tilt_from_gravity(g_dev))


def mag_orientation(window, q, ref_field) -> np.ndarray:
    """Heading-corrected attitude aligning the measured horizontal field with ``ref_field``."""
    m = np.asarray(window, dtype=float).mean(axis=0)
    ref = np.asarray(ref_field, dtype=float)
    if np.hypot(m[0], m[1]) <= 1.0 or np.hypot(ref[0], ref[1]) <= 1.0:
        raise DegenerateWindowError("horizontal magnetic field too weak to fix heading")
    err = np.arctan2(ref[1], ref[0]) - np.arctan2(m[1], m[0])
    heading, tilt = heading_and_tilt(q)
    return _from_heading_tilt(heading + err, tilt)


@dataclass
class FilterState:
    q: np.ndarray
    accel_window_size: int
    accel_window: list = field(default_factory=list)
    mag_window: list = field(default_factory=list)
    mag_anchor: np.ndarray | None = None
    mag_history_mean: np.ndarray | None = None
    mag_history_count: int = 0
    mag_reference: np.ndarray | None = None
    position: np.ndarray | None = None
    skipped: Counter = field(default_factory=Counter)

    @classmethod
    def initial(cls, q, sample_rate: float, params: FilterParams) -> "FilterState":
        size = int(np.ceil(params.t_step * sample_rate - 1e-9))
        ref = None if params.mag_reference is None else np.asarray(params.mag_reference, float)
        return cls(q=geom.quat_normalize(q), accel_window_size=max(size, 1), mag_reference=ref)


@dataclass
class StepOutput:
    q_new: np.ndarray
    w_a: float | None
    w_m: float | None
    aligned: np.ndarray  # rows: accel, gyro, mag in the navigation frame


def filter_step(state: FilterState, sample, dt: float, params: FilterParams,
                position=None) -> StepOutput:
    """Advance the filter by one IMU sample.

    ``sample`` is a ``(3, 3)`` array of device-frame accel, gyro and mag rows
    (the mag row may be NaN when unavailable). ``position`` is the walker's
    current navigation-frame position, used only to trigger the magnetometer
    window. The aligned output uses the attitude held before this update.
    """
    sample = np.asarray(sample, dtype=float)
    q_pre = state.q
    aligned = geom.rotate_to_nav(q_pre, sample)
    q = geom.integrate_gyro(q_pre, sample[1], dt)
    w_a = w_m = None

    if params.use_accel:
        state.accel_window.append(aligned[0])
        if len(state.accel_window) >= state.accel_window_size:
            window = np.array(state.accel_window)
            state.accel_window.clear()
            try:
                q_a = accel_orientation(window, q, params.gravity)
                w_a = accel_weight(window, params)
                q = geom.blend(q, q_a, w_a)
            except ValueError:
                state.skipped["accel"] += 1
                w_a = None

    has_mag = params.use_mag and np.all(np.isfinite(sample[2]))
    if has_mag:
        state.mag_window.append(aligned[2])
    if position is not None:
        position = np.asarray(position, dtype=float)
        state.position = position
        if state.mag_anchor is None:
            state.mag_anchor = position.copy()
        elif np.linalg.norm(position - state.mag_anchor) >= params.delta:
            if has_mag and state.mag_window:
                q, w_m = _close_mag_window(state, q, params)
            state.mag_window.clear()
            state.mag_anchor = position.copy()

    state.q = q
    return StepOutput(q_new=q, w_a=w_a, w_m=w_m, aligned=aligned)


def _close_mag_window(state: FilterState, q, params: FilterParams):
    window = np.array(state.mag_window)
    mean = window.mean(axis=0)
    w_m = None
    if state.mag_history_count == 0:
        state.mag_history_mean = mean
        state.mag_history_count = 1
        if state.mag_reference is None:
            state.mag_reference = mean
        return q, w_m
    try:
        q_m = mag_orientation(window, q, state.mag_reference)
        w_m = mag_weight(window, state.mag_history_mean, params)
        if params.mag_weight_inverted:
            w_m = 1.0 - w_m
        q = geom.blend(q, q_m, w_m)
    except ValueError:
        state.skipped["mag"] += 1
        w_m = None
    n = state.mag_history_count
    state.mag_history_mean = (state.mag_history_mean * n + mean) / (n + 1)
    state.mag_history_count = n + 1
    return q, w_m


def initial_attitude(accel) -> np.ndarray:
    """Level attitude (zero heading) from one device-frame accelerometer reading."""
    return _from_heading_tilt(0.0, _tilt_from_gravity(np.asarray(accel, dtype=float)))


@dataclass
class FilterResult:
    aligned: ImuSequence
    quats: np.ndarray  # attitude estimate at each sample time
    w_a: np.ndarray  # NaN where no accelerometer window closed
    w_m: np.ndarray
    skipped: Counter


def run_filter(imu: ImuSequence, params: FilterParams | None = None, q0=None,
               positions=None) -> FilterResult:
    """Run :func:`filter_step` over a device-frame sequence."""
    params = params or FilterParams()
    if imu.frame != "device":
        raise ValueError("the orientation filter expects device-frame measurements")
    n = len(imu)
    dt = imu.dt
    if q0 is None:
        q0 = initial_attitude(imu.accel[0])
    state = FilterState.initial(q0, 1.0 / dt, params)
    mag = imu.mag if imu.mag is not None else np.full((n, 3), np.nan)
    if positions is not None:
        positions = np.asarray(positions, dtype=float)
        if len(positions) != n:
            raise ValueError("positions must have one row per sample")
    quats = np.empty((n, 4))
    aligned = np.empty((n, 3, 3))
    w_a = np.full(n, np.nan)
    w_m = np.full(n, np.nan)
    for k in range(n):
        sample = np.stack([imu.accel[k], imu.gyro[k], mag[k]])
        pos = None if positions is None else positions[k]
        quats[k] = state.q
        out = filter_step(state, sample, dt, params, position=pos)
        aligned[k] = out.aligned
        if out.w_a is not None:
            w_a[k] = out.w_a
        if out.w_m is not None:
            w_m[k] = out.w_m
    nav = imu.copy(
        accel=aligned[:, 0],
        gyro=aligned[:, 1],
        mag=None if imu.mag is None else aligned[:, 2],
        frame="nav",
    )
    return FilterResult(aligned=nav, quats=quats, w_a=w_a, w_m=w_m, skipped=state.skipped)


def align_with_truth(imu: ImuSequence) -> ImuSequence:
    """Rotate a device-frame sequence into the nav frame with its ground-truth attitude."""
    if imu.quats is None:
        raise ValueError("sequence carries no ground-truth attitude")
    return imu.copy(
        accel=geom.rotate_to_nav(imu.quats, imu.accel),
        gyro=geom.rotate_to_nav(imu.quats, imu.gyro),
        mag=None if imu.mag is None else geom.rotate_to_nav(imu.quats, imu.mag),
        frame="nav",
    )


class OrientationFilter(TransformerMixin, BaseEstimator):
    """Transformer wrapper: device-frame :class:`ImuSequence` in, nav-frame sequence out.

    ``transform`` stores the attitude trace in ``quats_`` and the closed-window
    weights in ``w_a_``/``w_m_``.
    """

    def __init__(self, u=1.0, v=1000.0, h=8.0, gravity=9.81, t_step=1.0, delta=10.0,
                 use_accel=True, use_mag=True, mag_weight_inverted=False,
                 mag_reference=None, initial_quat=None):
        self.u = u
        self.v = v
        self.h = h
        self.gravity = gravity
        self.t_step = t_step
        self.delta = delta
        self.use_accel = use_accel
        self.use_mag = use_mag
        self.mag_weight_inverted = mag_weight_inverted
        self.mag_reference = mag_reference
        self.initial_quat = initial_quat

    def _params(self) -> FilterParams:
        return FilterParams(
            u=self.u, v=self.v, h=self.h, gravity=self.gravity, t_step=self.t_step,
            delta=self.delta, use_accel=self.use_accel, use_mag=self.use_mag,
            mag_weight_inverted=self.mag_weight_inverted, mag_reference=self.mag_reference,
        )

    def fit(self, X, y=None):
        if not isinstance(X, ImuSequence):
            raise TypeError("OrientationFilter expects an ImuSequence")
        self.params_ = self._params()
        return self

    def transform(self, X: ImuSequence, positions=None) -> ImuSequence:
        params = getattr(self, "params_", None) or self._params()
        res = run_filter(X, params, q0=self.initial_quat, positions=positions)
        self.quats_ = res.quats
        self.w_a_ = res.w_a
        self.w_m_ = res.w_m
        self.skipped_ = res.skipped
        return res.aligned
