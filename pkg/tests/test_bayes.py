import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from renil import bayes as B


def _belief(mean=(0.0, 0.0), cov=np.eye(2), t=0.0):
    return B.PositionBelief(np.array(mean, float), np.array(cov, float), t)


def _textbook_kf(m, P, u, Q, z, H, R):
    m = m + u
    P = P + Q
    S = H @ P @ H.T + R
    K = P @ H.T @ np.linalg.inv(S)
    m = m + K @ (z - H @ m)
    P = (np.eye(2) - K @ H) @ P
    return m, P


# -- types -----------------------------------------------------------------


def test_type_validation():
    with pytest.raises(ValueError):
        B.AsleControl([0, 0], [0.1, 0.0], 1.0)
    with pytest.raises(ValueError):
        B.AsleControl([0, 0], [0.1, 0.1], 0.0)
    with pytest.raises(ValueError):
        B.ExternalObservation([0, 0], np.eye(2), [[1, 0.5], [0, 1]])
    with pytest.raises(ValueError):
        B.ExternalObservation([0, 0], np.eye(2), np.diag([1.0, -1.0]))
    with pytest.raises(ValueError):
        B.GibbsConfig(sweeps=2, burn_in=2)
    with pytest.raises(ValueError):
        B.MixtureAux(0.0, [1, 1])
    aux = B.MixtureAux(1.0, [0.5, 2.0])
    np.testing.assert_array_equal(aux.sigma_w, np.diag([0.5, 8.0]))
    np.testing.assert_array_equal(aux.sigma_b, np.diag([0.5, 2.0]))


def test_belief_clips_negative_eigenvalues():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        b = _belief(cov=[[1.0, 0.0], [0.0, -1e-14]])
    assert np.linalg.eigvalsh(b.cov).min() >= 0
    with pytest.warns(RuntimeWarning):
        _belief(cov=[[1.0, 0.0], [0.0, -1e-3]])


# -- mixture sampling ----------------------------------------------------------


def test_mixture_moments():
    w = B.laplace_mixture_sample([1.0, 1.0], seed=0, size=1_000_000)
    assert w.shape == (1_000_000, 2)
    for axis in range(2):
        assert 1.96 <= w[:, axis].var() <= 2.04
        assert 2.7 <= stats.kurtosis(w[:, axis]) <= 3.3


def test_mixture_ks_against_laplace():
    w = B.laplace_mixture_sample([0.7, 2.0], seed=1, size=100_000)
    assert stats.kstest(w[:, 0], "laplace", args=(0, 0.7)).pvalue > 0.01
    assert stats.kstest(w[:, 1], "laplace", args=(0, 2.0)).pvalue > 0.01


def test_mixture_degenerate_scale_and_determinism():
    w = B.laplace_mixture_sample([0.0, 1.0], seed=2, size=1000)
    assert np.abs(w[:, 0]).max() < 1e-7
    np.testing.assert_array_equal(B.laplace_mixture_sample([1, 1], 5, 10),
                                  B.laplace_mixture_sample([1, 1], 5, 10))


# -- pure chain -----------------------------------------------------------------


def test_chain_additivity():
    cov0 = np.array([[0.3, 0.1], [0.1, 0.2]])
    steps = B.run_chain(_belief(cov=cov0), [B.AsleControl([0, 0], [1, 1], 0.5)] * 7)
    assert len(steps) == 8
    np.testing.assert_allclose(steps[-1].cov, cov0 + np.diag([14.0, 14.0]), atol=1e-12)
    np.testing.assert_array_equal(steps[-1].mean, [0, 0])
    assert steps[-1].t == pytest.approx(3.5)


@given(arrays(float, 2, elements=st.floats(-10, 10)), arrays(float, 2, elements=st.floats(1e-3, 5)),
       st.floats(-1, 1), st.floats(0.01, 4), st.floats(0.01, 4))
def test_chain_step_never_shrinks_eigenvalues(dp, b, rho, sx, sy):
    cov = np.array([[sx, rho * np.sqrt(sx * sy)], [rho * np.sqrt(sx * sy), sy]])
    before = _belief(cov=cov)
    after = B.chain_step(before, B.AsleControl(dp, b, 1.0))
    assert np.all(np.linalg.eigvalsh(after.cov) >= np.linalg.eigvalsh(before.cov) - 1e-12)
    np.testing.assert_allclose(after.mean, dp)


def test_chain_covariance_matches_monte_carlo(rng):
    controls = [B.AsleControl(rng.normal(size=2), rng.uniform(0.05, 0.5, 2), 1.0) for _ in range(20)]
    final = B.run_chain(_belief(cov=np.zeros((2, 2))), controls)[-1]
    paths = B.simulate_chains([0.0, 0.0], controls, 10_000, seed=3)
    emp = np.cov(paths[:, -1].T)
    np.testing.assert_allclose(np.diag(emp), np.diag(final.cov), rtol=0.05)
    np.testing.assert_allclose(paths[:, -1].mean(axis=0), final.mean, atol=0.05)


# -- Gibbs pieces ---------------------------------------------------------------


def test_gibbs_delta_examples(rng):
    assert B.gibbs_delta([1, 2], [1, 2], np.eye(2)) == 0.0
    assert B.gibbs_delta([1, 0], [0, 0], np.diag([2.0, 2.0])) == pytest.approx(0.5)
    for _ in range(50):
        a, c = rng.normal(size=2), rng.normal(size=2)
        A = rng.normal(size=(2, 2))
        S = A @ A.T + 0.1 * np.eye(2)
        d = a - c
        assert B.gibbs_delta(a, c, S) == pytest.approx(d @ np.linalg.inv(S) @ d, rel=1e-12, abs=1e-12)
    with pytest.raises(ValueError):
        B.gibbs_delta([1, 0], [0, 0], np.zeros((2, 2)))


def test_inverse_gaussian_moments():
    x = B.inverse_gaussian_sample(2.0, 4.0, seed=0, size=1_000_000)
    assert 1.99 <= x.mean() <= 2.01
    assert x.var() == pytest.approx(2.0, rel=0.05)
    assert stats.kstest(x[:100_000], "invgauss", args=(2.0 / 4.0, 0, 4.0)).pvalue > 0.01


def test_tau_resample():
    draws = np.array([B.gibbs_tau_resample(4.0, seed=s) for s in range(2000)])
    assert np.all(draws > 0)
    assert draws.mean() == pytest.approx(2.0, rel=0.05)
    assert B.gibbs_tau_resample(0.0, seed=0) == B.TAU_FLOOR
    with pytest.raises(ValueError):
        B.gibbs_tau_resample(-1.0)


# -- fusion -----------------------------------------------------------------------


def test_fuse_matches_textbook_kalman(rng):
    cfg = B.GibbsConfig(sweeps=1, burn_in=0, fixed_tau=1.0)
    belief = _belief()
    m, P = belief.mean.copy(), belief.cov.copy()
    for _ in range(100):
        u = B.AsleControl(rng.normal(size=2), rng.uniform(0.05, 1.0, 2), 1.0)
        H = rng.normal(size=(2, 2))
        A = rng.normal(size=(2, 2))
        obs = B.ExternalObservation(rng.normal(size=2), H, A @ A.T + 0.5 * np.eye(2))
        belief = B.fuse_step(belief, u, obs, cfg)
        m, P = _textbook_kf(m, P, u.displacement, u.noise_cov, obs.z, obs.H, obs.R)
        np.testing.assert_allclose(belief.mean, m, rtol=0, atol=1e-9)
        np.testing.assert_allclose(belief.cov, P, rtol=0, atol=1e-9)


def test_uninformative_observation_reduces_to_chain():
    # with R -> inf the update barely moves the mean, so delta -> 0 and later
    # sweeps would run with the tau floor; a single sweep uses tau = 1
    belief = _belief(mean=(1.0, -2.0), cov=[[0.5, 0.1], [0.1, 0.3]])
    u = B.AsleControl([0.4, 0.3], [0.2, 0.1], 1.0)
    obs = B.ExternalObservation([100.0, 100.0], np.eye(2), 1e12 * np.eye(2))
    fused = B.fuse_step(belief, u, obs, B.GibbsConfig(sweeps=1, burn_in=0))
    chained = B.chain_step(belief, u)
    np.testing.assert_allclose(fused.mean, chained.mean, rtol=1e-6)
    np.testing.assert_allclose(fused.cov, chained.cov, rtol=1e-6)


def test_perfect_observation_pins_mean():
    obs = B.ExternalObservation([3.0, 4.0], np.eye(2), 1e-12 * np.eye(2))
    fused = B.fuse_step(_belief(), B.AsleControl([1, 1], [0.5, 0.5], 1.0), obs)
    np.testing.assert_allclose(fused.mean, [3.0, 4.0], atol=1e-6)


@given(st.integers(0, 10_000), st.floats(0.01, 10.0))
def test_fusion_shrinks_trace(seed, r):
    rng = np.random.default_rng(seed)
    belief = _belief(mean=rng.normal(size=2), cov=np.diag(rng.uniform(0.1, 2, 2)))
    u = B.AsleControl(rng.normal(size=2), rng.uniform(0.05, 1.0, 2), 1.0)
    obs = B.ExternalObservation(rng.normal(size=2) * 3, np.eye(2), r * np.eye(2))
    cfg = B.GibbsConfig(sweeps=1, burn_in=0, fixed_tau=1.0)
    fused = B.fuse_step(belief, u, obs, cfg)
    assert np.trace(fused.cov) <= np.trace(B.chain_step(belief, u).cov) + 1e-12


def test_fuse_is_deterministic_given_seed():
    belief = _belief()
    u = B.AsleControl([1, 0], [0.3, 0.3], 1.0)
    obs = B.ExternalObservation([1.5, 0.5], np.eye(2), 0.2 * np.eye(2))
    a = B.fuse_step(belief, u, obs, B.GibbsConfig(seed=4))
    b = B.fuse_step(belief, u, obs, B.GibbsConfig(seed=4))
    np.testing.assert_array_equal(a.mean, b.mean)
    np.testing.assert_array_equal(a.cov, b.cov)


def test_partial_observation():
    obs = B.ExternalObservation([2.0], [[1.0, 0.0]], [[1e-10]])
    fused = B.fuse_step(_belief(), B.AsleControl([0, 5], [0.5, 0.5], 1.0), obs,
                        B.GibbsConfig(fixed_tau=1.0))
    assert fused.mean[0] == pytest.approx(2.0, abs=1e-6)
    assert fused.mean[1] == pytest.approx(5.0, abs=1e-6)


# -- ellipses ---------------------------------------------------------------------


def test_ellipse_identity():
    e = B.uncertainty_ellipse(_belief(), 0.997)
    np.testing.assert_allclose(e.semi_axes, [3.409, 3.409], atol=5e-4)
    np.testing.assert_allclose(e.semi_axes, np.sqrt(stats.chi2.ppf(0.997, 2)), rtol=1e-12)


def test_ellipse_axis_ratio_and_polyline():
    e = B.uncertainty_ellipse(_belief(mean=(1, 2), cov=np.diag([4.0, 1.0])), 0.95)
    assert e.semi_axes[0] / e.semi_axes[1] == pytest.approx(2.0, rel=1e-12)
    assert abs(np.sin(e.angle)) < 1e-12
    line = e.polyline()
    assert line.shape == (64, 2)
    np.testing.assert_allclose(line[0], [1 + e.semi_axes[0], 2], atol=1e-12)
    # every polyline vertex lies on the boundary
    d = line - [1, 2]
    np.testing.assert_allclose((d[:, 0] / e.semi_axes[0]) ** 2 + (d[:, 1] / e.semi_axes[1]) ** 2, 1.0)
    with pytest.raises(ValueError):
        B.uncertainty_ellipse(_belief(), 1.0)


def test_contains_agrees_with_mahalanobis(rng):
    belief = _belief(mean=(0.5, -1), cov=[[2.0, 0.7], [0.7, 1.0]])
    pts = rng.normal(size=(2000, 2)) * 4
    e = B.uncertainty_ellipse(belief, 0.9)
    inside = e.contains(pts)
    ref = B.mahalanobis_inside(belief, pts, 0.9)
    margin = np.abs(np.einsum("ni,ij,nj->n", pts - belief.mean, np.linalg.inv(belief.cov),
                              pts - belief.mean) - stats.chi2.ppf(0.9, 2))
    assert np.all(inside[margin > 1e-9] == ref[margin > 1e-9])


def test_chain_ellipse_coverage(rng):
    controls = [B.AsleControl(rng.normal(size=2), rng.uniform(0.05, 0.5, 2), 1.0) for _ in range(20)]
    final = B.run_chain(_belief(cov=np.zeros((2, 2))), controls)[-1]
    truth = B.simulate_chains([0.0, 0.0], controls, 10_000, seed=9)[:, -1]
    assert B.uncertainty_ellipse(final).contains(truth).mean() >= 0.99
