import pytest
import torch

from renil.asle import AsleConfig, build_model
from renil.asle.checkpoint import CheckpointError, load_checkpoint, read_checkpoint, save_checkpoint

SMALL = AsleConfig(embed_channels=8, extractor_channels=(8, 16), head_hidden=32)


def test_round_trip_is_exact(tmp_path):
    model = build_model(SMALL, seed=3)
    path = tmp_path / "m.asle"
    save_checkpoint(model, path, step=17, meta={"note": "x"})
    loaded, step, meta = load_checkpoint(path)
    assert step == 17 and meta["note"] == "x"
    assert loaded.config == model.config
    for (k, a), (k2, b) in zip(model.state_dict().items(), loaded.state_dict().items()):
        assert k == k2 and torch.equal(a, b)
    x = torch.randn(1, 3, 6, 100)
    assert torch.equal(model.eval()(x, 1.5).speed, loaded.eval()(x, 1.5).speed)


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.asle"
    path.write_bytes(b"NOTACKPT" + bytes(32))
    with pytest.raises(CheckpointError):
        read_checkpoint(path)


def test_truncated_file(tmp_path):
    path = tmp_path / "m.asle"
    save_checkpoint(build_model(SMALL), path)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 100])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
