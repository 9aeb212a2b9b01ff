import numpy as np
import pytest
import torch

from renil import data
from renil.asle import AsleConfig, ModelDivergedError, TrainConfig, build_model
from renil.asle import train as T
from renil.asle.losses import feature_match_loss, nll_loss

SMALL = AsleConfig(embed_channels=8, extractor_channels=(8, 16), head_hidden=32)
NO_AUG = data.AugmentationSpec(apply={})


def _batch(rng, B=4, P=3, L=100):
    x = data.patch_batch([rng.normal(size=(6, P * L)) for _ in range(B)], L)
    return T.Batch(x, np.full(B, P * L / 200.0), rng.normal(size=(B, 2)))


def test_one_step_reduces_loss_on_repeated_batch(rng):
    model = build_model(SMALL, seed=0)
    opt = torch.optim.SGD(model.parameters(), lr=1e-3)
    batch = _batch(rng)
    first = T.train_step(model, opt, batch, NO_AUG, seed=0)
    second = T.train_step(model, opt, batch, NO_AUG, seed=0)
    assert second.total < first.total
    assert first.fm == 0.0  # identical branches when nothing is augmented


def test_parameter_gradients_match_finite_differences(rng):
    model = build_model(SMALL, seed=1, dtype=torch.float64).eval()
    batch = _batch(rng, B=2, P=2)
    x_clean = torch.as_tensor(batch.x.data)
    x_aug = torch.as_tensor(data.augment(batch.x, data.AugmentationSpec(), 3).data)
    t = torch.as_tensor(batch.t)
    speed = torch.as_tensor(batch.speed)
    with torch.no_grad():
        _, target = model.features(x_clean)

    def loss():
        pred, ctx = model(x_aug, t, return_context=True)
        return nll_loss(pred, speed) + feature_match_loss(target, ctx)

    model.zero_grad()
    loss().backward()
    params = [p for p in model.parameters() if p.requires_grad]
    pick = np.random.default_rng(0)
    h = 1e-6
    for _ in range(10):
        p = params[pick.integers(len(params))]
        idx = tuple(int(pick.integers(s)) for s in p.shape)
        analytic = p.grad[idx].item()
        with torch.no_grad():
            orig = p[idx].item()
            p[idx] = orig + h
            up = loss().item()
            p[idx] = orig - h
            down = loss().item()
            p[idx] = orig
        fd = (up - down) / (2 * h)
        assert analytic == pytest.approx(fd, rel=1e-3, abs=1e-7)


def test_non_finite_loss_raises(rng):
    model = build_model(SMALL, seed=0)
    opt = torch.optim.SGD(model.parameters(), lr=1e-3)
    batch = _batch(rng)
    batch.displacement[0, 0] = np.inf
    with pytest.raises(ModelDivergedError):
        T.train_step(model, opt, batch, NO_AUG, seed=0)


def test_training_batches_share_one_duration(rng):
    from renil import orient, synthimu
    corpus = [orient.align_with_truth(s) for s in synthimu.random_corpus(2, 20.0, 0)]
    cfg = TrainConfig(batch_size=5, batches_per_epoch=3, scale_low=1, scale_high=10)
    seen = []
    for seed, batch in T.training_batches(corpus, cfg, 0, 100):
        assert np.all(batch.t == batch.t[0])
        assert batch.x.data.shape[0] == 5
        seen.append(batch.t[0])
    again = [b.t[0] for _, b in T.training_batches(corpus, cfg, 0, 100)]
    assert seen == again


def test_fit_records_and_evaluate(rng):
    from renil import orient, synthimu
    corpus = [orient.align_with_truth(s) for s in synthimu.random_corpus(3, 15.0, 1)]
    cfg = TrainConfig(epochs=2, batch_size=4, batches_per_epoch=2, scale_low=1, scale_high=3,
                      val_windows=8, val_seconds=2)
    model = build_model(SMALL, seed=0)
    calls = []
    hist = T.fit(model, corpus[:2], corpus[2:], cfg, callback=calls.append)
    assert len(hist) == 2 and calls == hist
    assert {"epoch", "loss", "nll", "fm", "lr", "val_mae", "val_baseline", "val_nll"} <= set(hist[0])
    assert all(np.isfinite(r["loss"]) for r in hist)


def test_training_is_bit_reproducible():
    from renil import orient, synthimu
    corpus = [orient.align_with_truth(s) for s in synthimu.random_corpus(2, 10.0, 3)]
    cfg = TrainConfig(epochs=2, batch_size=3, batches_per_epoch=2, scale_low=1, scale_high=3)
    runs = []
    for _ in range(2):
        model = build_model(SMALL, seed=2)
        hist = T.fit(model, corpus, None, cfg)
        runs.append((hist, [p.detach().clone() for p in model.parameters()]))
    assert runs[0][0] == runs[1][0]
    assert all(torch.equal(a, b) for a, b in zip(runs[0][1], runs[1][1]))
