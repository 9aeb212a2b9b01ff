"""Synthetic pedestrian trajectories and their exact (inverse strapdown) IMU signals.

The generator is the ground-truth oracle for the rest of the package: poses are
analytic functions of time, and :func:`inverse_imu` produces the device-frame
specific force, angular rate and magnetic field that a perfect IMU carried along
those poses would have measured.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from . import geom
from .sequence import ImuSequence

GRAVITY = 9.81
NAV_MAG_FIELD = (0.0, 22.0, -40.0)  # µT
STEP_LENGTH = 0.7  # m per step when the step frequency is derived from speed

PATH_KINDS = ("straight", "circle", "spline")


@dataclass
class GaitModel:
    """Periodic body motion superimposed on the walking path.

    The forward surge leads the vertical bounce by ``surge_phase``; the
    correlation between the two makes the walking direction observable from
    navigation-frame accelerations alone.
    """

    step_frequency: float | None = None  # Hz; None -> speed / STEP_LENGTH
    bounce_amplitude: float = 0.03  # m
    surge_amplitude: float = 0.02  # m
    surge_phase: float = 0.6  # rad
    yaw_sway: float = 0.05  # rad, at stride (half step) frequency


@dataclass
class TrajectorySpec:
    duration: float
    sample_rate: float = 200.0
    path: str = "straight"
    speed: float = 1.0  # m/s along the path
    heading: float = 0.0  # rad, initial direction of travel
    radius: float = 5.0  # circle only
    turn: int = 1  # circle only: +1 counter-clockwise, -1 clockwise
    waypoints: list | None = None  # spline only, (x, y) pairs
    start: tuple = (0.0, 0.0)
    gait: GaitModel | None = field(default_factory=GaitModel)
    carry: tuple = (1.0, 0.0, 0.0, 0.0)  # device-to-body Hamilton quaternion

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.speed < 0:
            raise ValueError("speed must be non-negative")


@dataclass
class MagDisturbance:
    center: tuple  # (x, y) m
    radius: float  # m
    offset: tuple  # nav-frame field offset, µT


@dataclass
class NoiseSpec:
    accel_sigma: float = 0.0
    gyro_sigma: float = 0.0
    gyro_bias: tuple = (0.0, 0.0, 0.0)
    mag_sigma: float = 0.0
    mag_disturbances: list = field(default_factory=list)

    def __post_init__(self):
        if min(self.accel_sigma, self.gyro_sigma, self.mag_sigma) < 0:
            raise ValueError("noise standard deviations must be non-negative")


@dataclass
class PoseSample:
    t: float
    position: np.ndarray
    q: np.ndarray


class _Path:
    """Planar curve parameterized by arc length."""

    def __init__(self, spec: TrajectorySpec):
        self.kind = spec.path
        self.start = np.asarray(spec.start, dtype=float)
        if spec.path == "straight":
            self.direction = np.array([np.cos(spec.heading), np.sin(spec.heading)])
            self.length = np.inf
        elif spec.path == "circle":
            if spec.radius <= 0:
                raise ValueError("circle radius must be positive")
            self.radius = spec.radius
            self.turn = 1.0 if spec.turn >= 0 else -1.0
            # centre on the left (ccw) or right (cw) of the initial heading
            normal = np.array([-np.sin(spec.heading), np.cos(spec.heading)]) * self.turn
            self.center = self.start + self.radius * normal
            self.theta0 = np.arctan2(*(self.start - self.center)[::-1])
            self.length = np.inf
        elif spec.path == "spline":
            pts = np.asarray(spec.waypoints, dtype=float)
            if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
                raise ValueError("spline paths need at least two (x, y) waypoints")
            chord = np.r_[0.0, np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))]
            if np.any(np.diff(chord) <= 0):
                raise ValueError("consecutive waypoints must be distinct")
            self.spline = CubicSpline(chord, pts, bc_type="natural")
            u = np.linspace(0.0, chord[-1], 200 * len(pts) + 1)
            speed = np.linalg.norm(self.spline(u, 1), axis=1)
            # arc length by cumulative trapezoid on a dense grid
            s = np.r_[0.0, np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(u))]
            self._u_of_s = CubicSpline(s, u)
            self.length = s[-1]
            self.waypoints = pts
        else:
            raise ValueError(f"unsupported path kind {spec.path!r}; expected one of {PATH_KINDS}")

    def position(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if self.kind == "straight":
            return self.start + s[..., None] * self.direction
        if self.kind == "circle":
            ang = self.theta0 + self.turn * s / self.radius
            return self.center + self.radius * np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        return self.spline(self._u_of_s(s))

    def heading(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if self.kind == "straight":
            return np.full(s.shape, np.arctan2(self.direction[1], self.direction[0]))
        if self.kind == "circle":
            ang = self.theta0 + self.turn * s / self.radius
            return ang + self.turn * np.pi / 2
        d = self.spline(self._u_of_s(s), 1)
        return np.arctan2(d[..., 1], d[..., 0])


def _gait_terms(spec: TrajectorySpec, t: np.ndarray):
    gait = spec.gait
    if gait is None or spec.speed == 0:
        zero = np.zeros_like(t)
        return zero, zero, zero
    freq = gait.step_frequency if gait.step_frequency else spec.speed / STEP_LENGTH
    phase = 2 * np.pi * freq * t
    surge = gait.surge_amplitude * (np.sin(phase + gait.surge_phase) - np.sin(gait.surge_phase))
    bounce = gait.bounce_amplitude * (np.cos(phase) - 1.0)
    sway = gait.yaw_sway * np.sin(0.5 * phase)
    return surge, bounce, sway


def generate_trajectory(spec: TrajectorySpec, seed: int = 0) -> list[PoseSample]:
    """Sample poses at ``spec.sample_rate`` for ``spec.duration`` seconds, both ends included.

    The seed only randomizes the starting gait phase, so identical
    ``(spec, seed)`` pairs give identical poses.
    """
    path = _Path(spec)
    if spec.speed * spec.duration > path.length + 1e-9:
        raise ValueError(
            f"spline of length {path.length:.2f} m is shorter than the walked distance "
            f"{spec.speed * spec.duration:.2f} m"
        )
    n = int(round(spec.duration * spec.sample_rate)) + 1
    t = np.arange(n) / spec.sample_rate
    t0 = np.random.default_rng(seed).uniform(0.0, 1.0) if spec.gait is not None else 0.0

    surge, bounce, sway = _gait_terms(spec, t + t0)
    surge0, bounce0, _ = _gait_terms(spec, np.array([t0]))
    s = spec.speed * t + surge - surge0[0]
    pos = np.concatenate([path.position(s), (bounce - bounce0[0])[:, None]], axis=1)

    yaw = path.heading(s) + sway
    body = geom.quat_from_axis_angle(np.broadcast_to([0.0, 0.0, 1.0], (n, 3)), yaw)
    carry = geom.quat_normalize(spec.carry)
    # attitude convention of geom: conjugate of the Hamilton device->nav quaternion
    q = geom.quat_conjugate(geom.quat_multiply(body, carry))
    return [PoseSample(float(ti), p, qi) for ti, p, qi in zip(t, pos, q)]


def poses_to_arrays(poses: list[PoseSample]):
    t = np.array([p.t for p in poses])
    pos = np.array([p.position for p in poses])
    q = np.array([p.q for p in poses])
    return t, pos, q


def inverse_imu(
    poses: list[PoseSample],
    gravity: float = GRAVITY,
    mag_field=NAV_MAG_FIELD,
) -> ImuSequence:
    """Perfect device-frame IMU readings along ``poses``.

    Specific force is ``q ⊗ (p'' + g z) ⊗ q^-1`` with ``p''`` from central
    differences (second-order one-sided at the ends). The gyro sample ``k`` is
    the body rate that carries ``q_k`` exactly onto ``q_{k+1}`` through
    :func:`renil.geom.integrate_gyro`; the last sample repeats the previous rate.
    """
    if len(poses) < 3:
        raise ValueError("inverse_imu needs at least 3 poses")
    t, pos, q = poses_to_arrays(poses)
    dt = np.diff(t)
    if np.any(dt <= 0) or np.ptp(dt) > 1e-6:
        raise ValueError("poses must have uniform, strictly increasing timestamps")
    h = float((t[-1] - t[0]) / (len(t) - 1))

    acc = np.empty_like(pos)
    acc[1:-1] = (pos[2:] - 2 * pos[1:-1] + pos[:-2]) / h**2
    if len(pos) >= 4:
        acc[0] = (2 * pos[0] - 5 * pos[1] + 4 * pos[2] - pos[3]) / h**2
        acc[-1] = (2 * pos[-1] - 5 * pos[-2] + 4 * pos[-3] - pos[-4]) / h**2
    else:
        acc[0] = acc[-1] = acc[1]
    specific = acc + np.array([0.0, 0.0, gravity])
    accel = geom.rotate_to_device(q, specific)

    # integrate_gyro: q_{k+1} = conj(exp(w dt)) ⊗ q_k  =>  exp(w dt) = q_k ⊗ conj(q_{k+1})
    rel = geom.quat_multiply(q[:-1], geom.quat_conjugate(q[1:]))
    gyro = np.empty_like(pos)
    gyro[:-1] = geom.quat_log(rel) / h
    gyro[-1] = gyro[-2]

    field_nav = np.broadcast_to(np.asarray(mag_field, dtype=float), pos.shape)
    mag = geom.rotate_to_device(q, field_nav)
    return ImuSequence(
        t=t,
        accel=accel,
        gyro=gyro,
        mag=mag,
        frame="device",
        positions=pos,
        quats=q,
        meta={"gravity": gravity, "mag_field": list(map(float, mag_field))},
    )


def add_noise(imu: ImuSequence, spec: NoiseSpec, seed: int = 0) -> ImuSequence:
    """White noise, constant gyro bias and localized magnetic disturbances."""
    rng = np.random.default_rng(seed)
    n = len(imu)
    accel = imu.accel + spec.accel_sigma * rng.standard_normal((n, 3))
    gyro = imu.gyro + spec.gyro_sigma * rng.standard_normal((n, 3)) + np.asarray(spec.gyro_bias)
    mag = imu.mag
    if mag is not None:
        mag = mag + spec.mag_sigma * rng.standard_normal((n, 3))
        if spec.mag_disturbances:
            if imu.positions is None or imu.quats is None:
                raise ValueError("magnetic disturbances need ground-truth poses")
            for patch in spec.mag_disturbances:
                dist = np.linalg.norm(imu.positions[:, :2] - np.asarray(patch.center), axis=1)
                inside = dist <= patch.radius
                if np.any(inside):
                    offset = np.broadcast_to(np.asarray(patch.offset, dtype=float), (inside.sum(), 3))
                    mag[inside] += geom.rotate_to_device(imu.quats[inside], offset)
    return imu.copy(accel=accel, gyro=gyro, mag=mag)


def simulate(spec: TrajectorySpec, noise: NoiseSpec | None = None, seed: int = 0,
             gravity: float = GRAVITY, mag_field=NAV_MAG_FIELD) -> ImuSequence:
    """Convenience wrapper: trajectory, inverse IMU and optional noise."""
    imu = inverse_imu(generate_trajectory(spec, seed), gravity=gravity, mag_field=mag_field)
    if noise is not None:
        imu = add_noise(imu, noise, seed=seed + 1)
    return imu


def random_spec(rng: np.random.Generator, duration: float, path: str | None = None,
                sample_rate: float = 200.0) -> TrajectorySpec:
    """A random walking trajectory of the given kind (random kind when ``path`` is None)."""
    path = path or str(rng.choice(PATH_KINDS))
    speed = float(rng.uniform(0.8, 1.6))
    heading = float(rng.uniform(-np.pi, np.pi))
    carry = geom.quat_exp(rng.normal(0.0, 0.5, 3))
    gait = GaitModel(
        bounce_amplitude=float(rng.uniform(0.02, 0.04)),
        surge_amplitude=float(rng.uniform(0.015, 0.03)),
        yaw_sway=float(rng.uniform(0.0, 0.08)),
    )
    kw = dict(duration=duration, sample_rate=sample_rate, path=path, speed=speed,
              heading=heading, gait=gait, carry=tuple(carry))
    if path == "circle":
        kw.update(radius=float(rng.uniform(3.0, 12.0)), turn=int(rng.choice([-1, 1])))
    elif path == "spline":
        need = speed * duration + 5.0
        pts = [np.zeros(2)]
        ang = heading
        while sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)) < 1.3 * need:
            ang += rng.uniform(-1.0, 1.0)
            pts.append(pts[-1] + rng.uniform(6.0, 12.0) * np.array([np.cos(ang), np.sin(ang)]))
        kw.update(waypoints=[tuple(p) for p in pts])
    return TrajectorySpec(**kw)


def random_corpus(n: int, duration: float, seed: int, noise: NoiseSpec | None = None,
                  paths: tuple = PATH_KINDS) -> list[ImuSequence]:
    """``n`` simulated sequences cycling through ``paths``, each with its own seed."""
    out = []
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(n)):
        rng = np.random.default_rng(child)
        spec = random_spec(rng, duration, paths[i % len(paths)])
        imu = simulate(spec, noise, seed=int(rng.integers(2**31)))
        imu.seq_id = f"seq{i:03d}"
        out.append(imu)
    return out
