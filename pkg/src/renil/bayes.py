"""Bayesian chain over positioning demand points.

Each network output is a control ``(Δp, b)``: a planar displacement with
per-axis Laplace scale. Laplace noise is written as a Gaussian whose variance
is scaled by a latent ``tau ~ Exp(mean 1)``:

    w | tau ~ N(0, tau * diag(2 b^2))

so the pure chain propagates the exact second moment (``E[tau] = 1``), and the
fusion filter alternates a Kalman predict/update conditioned on ``tau`` with a
Gibbs draw of ``tau`` (Rao-Blackwellised Kalman-Gibbs).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

SCALE_FLOOR = 1e-9
TAU_FLOOR = 1e-6
PSD_TOL = 1e-12


def _psd(cov: np.ndarray, what: str = "covariance") -> np.ndarray:
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() < 0:
        if vals.min() < -PSD_TOL:
            warnings.warn(f"{what} not PSD (min eigenvalue {vals.min():.3g}); clipping", RuntimeWarning)
        cov = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
    return cov


@dataclass
class PositionBelief:
    mean: np.ndarray
    cov: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(2)
        self.cov = _psd(np.asarray(self.cov, dtype=float).reshape(2, 2))


@dataclass
class AsleControl:
    displacement: np.ndarray
    scale: np.ndarray  # per-axis Laplace scale of the displacement, m
    dt: float

    def __post_init__(self):
        self.displacement = np.asarray(self.displacement, dtype=float).reshape(2)
        self.scale = np.asarray(self.scale, dtype=float).reshape(2)
        if np.any(self.scale <= 0):
            raise ValueError("Laplace scales must be positive")
        if self.dt <= 0:
            raise ValueError("control interval must be positive")

    @property
    def noise_cov(self) -> np.ndarray:
        return process_covariance(self.scale)


@dataclass
class ExternalObservation:
    """Linear observation ``z = H p + v`` with ``v ~ N(0, R)``."""

    z: np.ndarray
    H: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        self.z = np.atleast_1d(np.asarray(self.z, dtype=float))
        k = self.z.shape[0]
        self.H = np.asarray(self.H, dtype=float).reshape(k, 2)
        self.R = np.asarray(self.R, dtype=float).reshape(k, k)
        if not np.allclose(self.R, self.R.T):
            raise ValueError("observation covariance must be symmetric")
        try:
            np.linalg.cholesky(self.R)
        except np.linalg.LinAlgError as exc:
            raise ValueError("observation covariance must be positive definite") from exc


@dataclass
class GibbsConfig:
    sweeps: int = 5
    burn_in: int = 2
    seed: int = 0
    fixed_tau: float | None = None  # pin tau (no resampling) when set

    def __post_init__(self):
        if not self.sweeps > self.burn_in >= 0:
            raise ValueError("need sweeps > burn_in >= 0")


@dataclass
class MixtureAux:
    """Latent mixing variable of one step and the matrices built from ``b``."""

    tau: float
    scale: np.ndarray

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        self.scale = np.maximum(np.asarray(self.scale, dtype=float).reshape(2), SCALE_FLOOR)

    @property
    def sigma_w(self) -> np.ndarray:
        return process_covariance(self.scale)

    @property
    def sigma_b(self) -> np.ndarray:
        return np.diag(self.scale)


def process_covariance(scale) -> np.ndarray:
    """``diag(2 b^2)``: covariance of a Laplace(0, b) step per axis."""
    b = np.maximum(np.asarray(scale, dtype=float), SCALE_FLOOR)
    return np.diag(2.0 * b**2)


def laplace_mixture_sample(b, seed=None, size=None) -> np.ndarray:
    """Laplace(0, b) noise drawn through its Gaussian scale mixture.

    Per axis: ``tau ~ Exp(1)``, then ``w ~ N(0, 2 b^2 tau)``. ``size`` adds
    leading sample dimensions.
    """
    rng = np.random.default_rng(seed)
    b = np.maximum(np.asarray(b, dtype=float), SCALE_FLOOR)
    shape = (() if size is None else tuple(np.atleast_1d(size))) + b.shape
    tau = rng.exponential(1.0, shape)
    return np.sqrt(2.0 * tau) * b * rng.standard_normal(shape)


def chain_step(belief: PositionBelief, u: AsleControl) -> PositionBelief:
    """Pure inference-chain step: shift by ``Δp``, add ``diag(2 b^2)``."""
    return PositionBelief(belief.mean + u.displacement, belief.cov + u.noise_cov, belief.t + u.dt)


def run_chain(initial: PositionBelief, controls) -> list[PositionBelief]:
    out = [initial]
    for u in controls:
        out.append(chain_step(out[-1], u))
    return out


def simulate_chains(start, controls, n_chains: int, seed=None) -> np.ndarray:
    """Monte-Carlo ground truth: ``(n_chains, n_steps + 1, 2)`` positions with Laplace steps."""
    rng = np.random.default_rng(seed)
    dp = np.array([u.displacement for u in controls])
    b = np.array([u.scale for u in controls])
    noise = rng.laplace(0.0, 1.0, (n_chains, len(controls), 2)) * b
    steps = dp + noise
    paths = np.cumsum(steps, axis=1) + np.asarray(start, dtype=float)
    return np.concatenate([np.broadcast_to(np.asarray(start, float), (n_chains, 1, 2)), paths], axis=1)


def gibbs_delta(p_prev, p_curr, sigma_w) -> float:
    """Mahalanobis statistic ``(p_prev - p_curr)^T Σ_w^-1 (p_prev - p_curr)``."""
    d = np.asarray(p_prev, dtype=float) - np.asarray(p_curr, dtype=float)
    sigma_w = np.asarray(sigma_w, dtype=float)
    if np.linalg.cond(sigma_w) > 1e14:
        raise ValueError("process covariance is singular")
    return float(d @ np.linalg.solve(sigma_w, d))


def inverse_gaussian_sample(mu, lam, seed=None, size=None) -> np.ndarray:
    """Inverse-Gaussian draws by the Michael-Schucany-Haas transformation."""
    rng = np.random.default_rng(seed)
    mu = np.asarray(mu, dtype=float)
    lam = np.asarray(lam, dtype=float)
    shape = np.broadcast_shapes(mu.shape, lam.shape) if size is None else tuple(np.atleast_1d(size))
    y = rng.standard_normal(shape) ** 2
    x = mu + mu**2 * y / (2 * lam) - mu / (2 * lam) * np.sqrt(4 * mu * lam * y + (mu * y) ** 2)
    accept = rng.random(shape) <= mu / (mu + x)
    return np.where(accept, x, mu**2 / x)


def gibbs_tau_resample(delta: float, seed=None) -> float:
    """One draw of ``tau | delta ~ InvGauss(mean=sqrt(delta), shape=delta)``."""
    if delta < 0:
        raise ValueError("delta must be non-negative")
    if delta == 0:
        return TAU_FLOOR
    tau = float(inverse_gaussian_sample(np.sqrt(delta), delta, seed))
    return max(tau, TAU_FLOOR)


def kalman_predict(mean, cov, displacement, Q):
    return np.asarray(mean) + displacement, np.asarray(cov) + Q


def kalman_update(mean, cov, obs: ExternalObservation):
    H, R = obs.H, obs.R
    S = H @ cov @ H.T + R
    if np.linalg.cond(S) > 1e14:
        raise ValueError("innovation covariance is singular")
    K = np.linalg.solve(S, H @ cov).T
    mean = mean + K @ (obs.z - H @ mean)
    I_KH = np.eye(2) - K @ H
    # Joseph form keeps the covariance symmetric PSD
    cov = I_KH @ cov @ I_KH.T + K @ R @ K.T
    return mean, cov


def fuse_step(belief: PositionBelief, u: AsleControl, obs: ExternalObservation,
              cfg: GibbsConfig | None = None, seed=None) -> PositionBelief:
    """Fuse one control and one external observation.

    Each sweep predicts with ``Q = tau Σ_w``, applies the Kalman update,
    measures how far the update moved the predicted mean (``gibbs_delta``) and
    redraws ``tau``. Post burn-in sweeps are averaged: mean of means, and mean
    of covariances plus the spread of the sweep means.
    """
    cfg = cfg or GibbsConfig()
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    sigma_w = u.noise_cov
    tau = 1.0 if cfg.fixed_tau is None else float(cfg.fixed_tau)
    means, covs = [], []
    for sweep in range(cfg.sweeps):
        m_pred, P_pred = kalman_predict(belief.mean, belief.cov, u.displacement, tau * sigma_w)
        m_post, P_post = kalman_update(m_pred, P_pred, obs)
        if sweep >= cfg.burn_in:
            means.append(m_post)
            covs.append(P_post)
        if cfg.fixed_tau is None:
            tau = gibbs_tau_resample(gibbs_delta(m_pred, m_post, sigma_w), rng)
    means = np.array(means)
    mean = means.mean(axis=0)
    spread = (means - mean).T @ (means - mean) / len(means)
    cov = np.mean(covs, axis=0) + spread
    return PositionBelief(mean, _psd(cov, "fused covariance"), belief.t + u.dt)


@dataclass
class Ellipse:
    center: np.ndarray
    semi_axes: np.ndarray  # (major, minor)
    angle: float  # rad, direction of the major axis

    def polyline(self, n: int = 64) -> np.ndarray:
        """``n`` points on the ellipse, counter-clockwise from the major axis."""
        s = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
        local = np.stack([self.semi_axes[0] * np.cos(s), self.semi_axes[1] * np.sin(s)], axis=1)
        c, si = np.cos(self.angle), np.sin(self.angle)
        return local @ np.array([[c, si], [-si, c]]) + self.center

    def contains(self, points) -> np.ndarray:
        d = np.atleast_2d(points) - self.center
        c, s = np.cos(self.angle), np.sin(self.angle)
        u = d @ np.array([c, s])
        v = d @ np.array([-s, c])
        a = np.maximum(self.semi_axes, 1e-300)
        return (u / a[0]) ** 2 + (v / a[1]) ** 2 <= 1.0


def uncertainty_ellipse(belief: PositionBelief, confidence: float = 0.997) -> Ellipse:
    """Confidence ellipse of a 2D Gaussian belief (chi-square, 2 degrees of freedom)."""
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie in (0, 1)")
    vals, vecs = np.linalg.eigh(belief.cov)
    vals = np.clip(vals, 0.0, None)[::-1]
    vecs = vecs[:, ::-1]
    k = np.sqrt(chi2.ppf(confidence, df=2))
    return Ellipse(belief.mean.copy(), k * np.sqrt(vals), float(np.arctan2(vecs[1, 0], vecs[0, 0])))


def mahalanobis_inside(belief: PositionBelief, points, confidence: float = 0.997) -> np.ndarray:
    """Vectorized containment test equivalent to :meth:`Ellipse.contains`."""
    d = np.atleast_2d(points) - belief.mean
    m = np.einsum("ni,ij,nj->n", d, np.linalg.inv(belief.cov), d)
    return m <= chi2.ppf(confidence, df=2)
