import json

import numpy as np
import pytest

from renil import cli, io, metrics

CONFIG = {
    "synth": {"n": 4, "duration": 12.0, "accel_sigma": 0.02, "gyro_sigma": 0.002},
    "asle": {"embed_channels": 8, "extractor_channels": [8, 16], "head_hidden": 32},
    "train": {"epochs": 2, "batch_size": 4, "batches_per_epoch": 2, "scale_low": 1.0,
              "scale_high": 3.0, "val_windows": 8, "val_seconds": 2.0},
    "bayes": {"sweeps": 3, "burn_in": 1},
    "seed": 0,
}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "config.json").write_text(json.dumps(CONFIG))
    assert cli.main(["synth", "--config", str(root / "config.json"), "--out", str(root / "data")]) == 0
    return root


def test_synth_outputs(work):
    m = io.load_manifest(work / "data" / "manifest.json")
    assert [len(m.split(s)) for s in io.SPLITS] == list(io.split_counts(4))
    assert all(e.seen == (e.split != "test") for e in m.sequences)


def test_synth_is_idempotent(work, tmp_path):
    cli.main(["synth", "--config", str(work / "config.json"), "--out", str(tmp_path)])
    for name in ("manifest.json", "seq000_imu.csv", "seq003_truth.csv"):
        assert (tmp_path / name).read_bytes() == (work / "data" / name).read_bytes()


def test_align_recovers_attitude(work):
    d = work / "data"
    code = cli.main(["align", "--imu", str(d / "seq000_imu.csv"), "--truth", str(d / "seq000_truth.csv"),
                     "--out", str(work / "aligned")])
    assert code == 0
    assert io.read_imu_csv(work / "aligned" / "seq000_aligned.csv").frame == "nav"
    cli.main(["eval", "--truth", str(d / "seq000_truth.csv"), "--skip", "5",
              "--orientation", str(work / "aligned" / "seq000_orientation.csv"),
              "--out", str(work / "align_report.txt")])
    rep = metrics.parse_report((work / "align_report.txt").read_text())
    assert np.degrees(rep["qae"]) < 2.0


def test_full_pipeline(work):
    d, a = work / "data", work / "aligned"
    cfg = str(work / "config.json")
    assert cli.main(["align", "--imu", str(d / "seq003_imu.csv"), "--truth", str(d / "seq003_truth.csv"),
                     "--out", str(a)]) == 0
    assert cli.main(["train", "--config", cfg, "--manifest", str(d / "manifest.json"),
                     "--out", str(work / "model")]) == 0
    for name in ("loss_curve.csv", "model.asle", "config.json"):
        assert (work / "model" / name).is_file()
    io.write_ipdp_list(work / "ipdp.txt", [(k, k + 1.0) for k in np.arange(0.0, 10.0)])
    assert cli.main(["predict", "--checkpoint", str(work / "model" / "model.asle"),
                     "--imu", str(a / "seq003_aligned.csv"), "--ipdp", str(work / "ipdp.txt"),
                     "--out", str(work / "pred.csv")]) == 0
    preds = io.read_predictions(work / "pred.csv")
    assert preds.shape == (10, 6)
    _, pos, _ = io.read_truth_csv(d / "seq003_truth.csv")
    start = f"{float(pos[0, 0])!r},{float(pos[0, 1])!r}"
    assert cli.main(["chain", "--predictions", str(work / "pred.csv"), "--initial", start,
                     "--out", str(work / "chain")]) == 0
    io.write_observations(work / "obs.jsonl", [{"t": 5.0, "z": pos[1000, :2], "H": np.eye(2),
                                                "R": 0.01 * np.eye(2)}])
    assert cli.main(["fuse", "--config", cfg, "--predictions", str(work / "pred.csv"), "--initial", start,
                     "--observations", str(work / "obs.jsonl"), "--out", str(work / "fuse")]) == 0
    fused, _ = io.read_table(work / "fuse" / "beliefs.csv", io.BELIEF_COLUMNS)
    chained, _ = io.read_table(work / "chain" / "beliefs.csv", io.BELIEF_COLUMNS)
    assert fused[5, 3] < chained[5, 3]
    ell, meta = io.read_table(work / "chain" / "ellipses.csv", ("t", "k", "x", "y"))
    assert len(ell) == 11 * 64 and float(meta["confidence"]) == 0.997
    assert cli.main(["eval", "--truth", str(d / "seq003_truth.csv"), "--estimates",
                     str(work / "chain" / "beliefs.csv"), "--predictions", str(work / "pred.csv"),
                     "--out", str(work / "report.txt")]) == 0
    rep = metrics.parse_report((work / "report.txt").read_text())
    assert {"mae", "ade", "coverage_0.683", "coverage_0.95", "coverage_0.997"} <= set(rep)


def test_chain_zero_noise_sums_displacements(tmp_path):
    rng = np.random.default_rng(0)
    dp = rng.normal(size=(6, 2))
    io.write_predictions(tmp_path / "p.csv", np.arange(6.0), np.arange(1.0, 7.0), dp, np.full((6, 2), 1e-9))
    assert cli.main(["chain", "--predictions", str(tmp_path / "p.csv"), "--initial", "1,2",
                     "--out", str(tmp_path / "o")]) == 0
    rows, _ = io.read_table(tmp_path / "o" / "beliefs.csv", io.BELIEF_COLUMNS)
    np.testing.assert_allclose(rows[1:, 1:3], np.cumsum(dp, axis=0) + [1, 2], atol=1e-12)
    np.testing.assert_array_equal(rows[:, 0], np.arange(7.0))


def test_exit_codes(tmp_path):
    assert cli.main(["chain", "--predictions", str(tmp_path / "missing.csv"), "--out", str(tmp_path)]) == 4
    (tmp_path / "bad.json").write_text(json.dumps({"asle": {"nope": 1}}))
    assert cli.main(["synth", "--config", str(tmp_path / "bad.json"), "--out", str(tmp_path / "s")]) == 2
    assert cli.main(["frobnicate"]) == 2
    (tmp_path / "p.csv").write_text("t0,t1\n0,1\n")
    assert cli.main(["chain", "--predictions", str(tmp_path / "p.csv"), "--out", str(tmp_path)]) == 2
    (tmp_path / "x.asle").write_bytes(b"garbage")
    (tmp_path / "i.txt").write_text("0,1\n")
    assert cli.main(["predict", "--checkpoint", str(tmp_path / "x.asle"), "--imu", str(tmp_path / "p.csv"),
                     "--ipdp", str(tmp_path / "i.txt"), "--out", str(tmp_path / "o.csv")]) == 4
