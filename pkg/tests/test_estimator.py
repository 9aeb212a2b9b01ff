import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from renil import orient, synthimu
from renil.asle.estimator import AsleRegressor

SMALL = dict(embed_channels=8, extractor_channels=(8, 16), head_hidden=32)
TINY_TRAIN = dict(epochs=1, batch_size=4, batches_per_epoch=2, scale_low=1, scale_high=3,
                  val_windows=8, val_seconds=2)


@pytest.fixture(scope="module")
def fitted():
    corpus = [orient.align_with_truth(s) for s in synthimu.random_corpus(3, 15.0, 2)]
    est = AsleRegressor(config=SMALL, train_config=TINY_TRAIN, seed=0)
    return est.fit(corpus[:2], val=corpus[2:]), corpus


def test_params_and_clone():
    est = AsleRegressor(config=SMALL, seed=4)
    assert est.get_params()["seed"] == 4
    assert clone(est).get_params()["config"] == SMALL


def test_predict_before_fit():
    with pytest.raises(NotFittedError):
        AsleRegressor().predict([np.zeros((6, 100))])


def test_predict_mixed_lengths(fitted):
    est, corpus = fitted
    assert len(est.history_) == 1
    seq = corpus[2]
    X = np.vstack([seq.accel.T, seq.gyro.T])
    windows = [X[:, :150], X[:, :400], X[:, 100:250], X[:, :37]]
    dp, b = est.predict_dist(windows)
    assert dp.shape == (4, 2) and np.all(b > 0)
    single, _ = est.predict_dist([windows[1]])
    np.testing.assert_allclose(dp[1], single[0], atol=1e-6)
    y = np.zeros((4, 2))
    assert est.score(windows, y) == pytest.approx(-np.linalg.norm(dp, axis=1).mean())


def test_input_validation(fitted):
    est, corpus = fitted
    with pytest.raises(ValueError):
        est.predict([np.zeros((5, 100))])
    with pytest.raises(ValueError):
        est.predict([np.full((6, 100), np.nan)])
    with pytest.raises(ValueError):
        AsleRegressor().fit([synthimu.random_corpus(1, 5.0, 0)[0]])
