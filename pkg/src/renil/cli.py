"""Command-line pipeline: synth, align, train, predict, chain, fuse, eval.

Exit codes: 0 ok, 2 schema or argument error, 3 numeric divergence, 4 I/O.
Set ``RENIL_LOG_LEVEL`` (e.g. ``DEBUG``) for more logging.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import bayes, geom, io, metrics, orient, synthimu
from .io import SchemaError

log = logging.getLogger("renil")

EXIT_OK, EXIT_SCHEMA, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4
ELLIPSE_POINTS = 64


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args) -> io.RunConfig:
    cfg = io.load_run_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _xy(text: str, name: str) -> np.ndarray:
    try:
        v = np.array([float(p) for p in text.split(",")])
    except ValueError as exc:
        raise SchemaError(f"{name}: expected 'x,y'") from exc
    if v.shape != (2,):
        raise SchemaError(f"{name}: expected 'x,y'")
    return v


# -- synth ----------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _config(args)
    sc = io.SynthConfig(**cfg.synth)
    out = _out_dir(args)
    noise = synthimu.NoiseSpec(accel_sigma=sc.accel_sigma, gyro_sigma=sc.gyro_sigma,
                               gyro_bias=tuple(sc.gyro_bias), mag_sigma=sc.mag_sigma)
    n_train, n_val, _ = io.split_counts(sc.n)
    entries = []
    for i, child in enumerate(np.random.SeedSequence(cfg.seed).spawn(sc.n)):
        rng = np.random.default_rng(child)
        spec = synthimu.random_spec(rng, sc.duration, sc.paths[i % len(sc.paths)], sc.sample_rate)
        if sc.speed is not None:
            spec.speed = float(sc.speed)
        if sc.carry is not None:
            spec.carry = tuple(geom.quat_normalize(sc.carry))
        imu = synthimu.simulate(spec, noise, seed=int(rng.integers(2**31)))
        sid = f"seq{i:03d}"
        io.write_imu_csv(out / f"{sid}_imu.csv", imu)
        io.write_truth_csv(out / f"{sid}_truth.csv", imu)
        split = "train" if i < n_train else "val" if i < n_train + n_val else "test"
        entries.append(io.ManifestEntry(sid, f"{sid}_imu.csv", f"{sid}_truth.csv",
                                        subject=sid, seen=split != "test", split=split))
    io.save_manifest(out / "manifest.json", io.Manifest(".", entries))
    log.info("wrote %d sequences to %s", sc.n, out)
    return EXIT_OK


# -- align ----------------------------------------------------------------------


def cmd_align(args) -> int:
    cfg = _config(args)
    params = orient.FilterParams(**cfg.filter)
    imu = io.read_imu_csv(args.imu)
    q0 = positions = None
    if args.truth:
        # known start pose and walker positions (for the magnetometer window trigger)
        _, positions, quats = io.read_truth_csv(args.truth)
        if len(quats) != len(imu):
            raise SchemaError("truth and IMU files differ in length")
        q0 = quats[0]
    res = orient.run_filter(imu, params, q0=q0, positions=positions)
    out = _out_dir(args)
    stem = Path(args.imu).stem.removesuffix("_imu")
    io.write_imu_csv(out / f"{stem}_aligned.csv", res.aligned)
    io.write_table(out / f"{stem}_orientation.csv", io.ORIENTATION_COLUMNS,
                   np.column_stack([imu.t, res.quats]))
    return EXIT_OK


# -- train ----------------------------------------------------------------------


def _load_split(manifest: io.Manifest, tag: str):
    out = []
    for e in manifest.split(tag):
        seq = io.attach_truth(io.read_imu_csv(manifest.path(e.imu), e.id), manifest.path(e.truth))
        out.append(orient.align_with_truth(seq))
    return out


def cmd_train(args) -> int:
    from .asle.checkpoint import save_checkpoint
    from .asle.estimator import AsleRegressor

    if not args.manifest:
        raise SchemaError("train needs --manifest")
    cfg = _config(args)
    manifest = io.load_manifest(args.manifest)
    train_set = _load_split(manifest, "train")
    val_set = _load_split(manifest, "val")
    if not train_set:
        raise SchemaError("manifest has no training sequences")
    out = _out_dir(args)
    reg = AsleRegressor(config=cfg.asle, train_config={**cfg.train, "seed": cfg.seed}, seed=cfg.seed)
    reg.fit(train_set, val=val_set or None)
    keys = ("epoch", "loss", "nll", "fm", "lr", "val_mae", "val_baseline", "val_nll")
    with open(out / "loss_curve.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(keys)
        for rec in reg.history_:
            w.writerow([repr(rec.get(k, float("nan"))) for k in keys])
    save_checkpoint(reg.model_, out / "model.asle", step=len(reg.history_),
                    meta={"seed": cfg.seed, "train": cfg.train})
    io.save_run_config(out / "config.json", cfg)
    return EXIT_OK


# -- predict --------------------------------------------------------------------


def cmd_predict(args) -> int:
    from .asle.checkpoint import load_checkpoint
    from .asle.estimator import AsleRegressor

    model, _, _ = load_checkpoint(args.checkpoint)
    imu = io.read_imu_csv(args.imu)
    if imu.frame != "nav":
        raise SchemaError(f"{args.imu}: predictions need an aligned (frame=nav) file")
    pairs = io.read_ipdp_list(args.ipdp)
    idx = np.rint((pairs - imu.t[0]) * imu.sample_rate).astype(int)
    if idx.min() < 0 or idx.max() >= len(imu):
        raise SchemaError("demand points fall outside the IMU record")
    if np.any(idx[:, 1] <= idx[:, 0]):
        raise SchemaError("demand-point pair shorter than one sample")
    X = imu.channels()
    windows = [X[:, a:b] for a, b in idx]
    reg = AsleRegressor(sample_rate=imu.sample_rate)
    reg.model_ = model
    dp, b = reg.predict_dist(windows)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.write_predictions(out, imu.t[idx[:, 0]], imu.t[idx[:, 1]], dp, b)
    return EXIT_OK


# -- chain / fuse ---------------------------------------------------------------


def _initial_belief(args, t0: float) -> bayes.PositionBelief:
    mean = _xy(args.initial, "--initial") if args.initial else np.zeros(2)
    if args.initial_var < 0:
        raise SchemaError("--initial-var must be non-negative")
    return bayes.PositionBelief(mean, args.initial_var * np.eye(2), t0)


def _controls(rows) -> list[bayes.AsleControl]:
    return [bayes.AsleControl(r[2:4], r[4:6], r[1] - r[0]) for r in rows]


def _write_trace(out: Path, beliefs, confidence: float) -> None:
    rows = [[b.t, *b.mean, b.cov[0, 0], b.cov[0, 1], b.cov[1, 1]] for b in beliefs]
    io.write_table(out / "beliefs.csv", io.BELIEF_COLUMNS, rows)
    pts = []
    for b in beliefs:
        poly = bayes.uncertainty_ellipse(b, confidence).polyline(ELLIPSE_POINTS)
        pts.extend([b.t, k, *p] for k, p in enumerate(poly))
    io.write_table(out / "ellipses.csv", ("t", "k", "x", "y"), pts,
                   comment=f"confidence={confidence}")


def cmd_chain(args) -> int:
    rows = io.read_predictions(args.predictions)
    beliefs = bayes.run_chain(_initial_belief(args, rows[0, 0]), _controls(rows))
    _write_trace(_out_dir(args), beliefs, args.confidence)
    return EXIT_OK


def cmd_fuse(args) -> int:
    cfg = _config(args)
    gibbs = bayes.GibbsConfig(**{**cfg.bayes, "seed": cfg.seed})
    rows = io.read_predictions(args.predictions)
    obs = {}
    for rec in io.read_observations(args.observations):
        try:
            obs[round(float(rec["t"]), 6)] = bayes.ExternalObservation(rec["z"], rec["H"], rec["R"])
        except ValueError as exc:
            raise SchemaError(f"{args.observations}: {exc}") from exc
    beliefs = [_initial_belief(args, rows[0, 0])]
    seeds = np.random.SeedSequence(gibbs.seed).spawn(len(rows))
    for u, r, ss in zip(_controls(rows), rows, seeds):
        o = obs.get(round(float(r[1]), 6))
        if o is None:
            beliefs.append(bayes.chain_step(beliefs[-1], u))
        else:
            beliefs.append(bayes.fuse_step(beliefs[-1], u, o, gibbs, seed=np.random.default_rng(ss)))
    _write_trace(_out_dir(args), beliefs, args.confidence)
    return EXIT_OK


# -- eval -----------------------------------------------------------------------


def cmd_eval(args) -> int:
    t, pos, quats = io.read_truth_csv(args.truth)
    truth = metrics.TrajectoryEstimate(t, pos, quats)
    values = {}
    if args.estimates:
        rows, _ = io.read_table(args.estimates, io.BELIEF_COLUMNS)
        est = metrics.TrajectoryEstimate(rows[:, 0], rows[:, 1:3])
        values.update(mae=metrics.mae(est, truth), ade=metrics.ade(est, truth))
        try:
            values["he"] = metrics.he(est, truth)
        except ValueError:
            log.warning("heading error undefined: no step longer than %.2f m", metrics.MIN_STEP)
    if args.orientation:
        rows, _ = io.read_table(args.orientation, io.ORIENTATION_COLUMNS)
        est = metrics.TrajectoryEstimate(rows[:, 0], np.zeros((len(rows), 2)), rows[:, 1:5])
        i, j = metrics.match(est, truth)
        keep = rows[i, 0] - rows[0, 0] >= args.skip
        values.update(qae=metrics.qae(rows[i[keep], 1:5], quats[j[keep]]),
                      cs=metrics.cs(rows[i[keep], 1:5], quats[j[keep]]))
    if args.predictions:
        p = io.read_predictions(args.predictions)
        at = lambda s: np.column_stack([np.interp(s, t, pos[:, 0]), np.interp(s, t, pos[:, 1])])
        for lv, rate in metrics.coverage(p[:, 2:4], p[:, 4:6], at(p[:, 1]) - at(p[:, 0])).items():
            values[f"coverage_{lv:g}"] = rate
    if not values:
        raise SchemaError("eval needs --estimates, --orientation or --predictions")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(metrics.report(values))
    return EXIT_OK


# -- entry point ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="renil", description="Pedestrian inertial localization pipeline")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", required=True, help="output directory or file")
    common.add_argument("--manifest", help="dataset manifest (train)")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", parents=[common], help="simulate a corpus").set_defaults(func=cmd_synth)

    a = sub.add_parser("align", parents=[common], help="run the orientation filter")
    a.add_argument("--imu", required=True)
    a.add_argument("--truth", help="truth CSV supplying the start pose and positions")
    a.set_defaults(func=cmd_align)

    sub.add_parser("train", parents=[common], help="train the network").set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", parents=[common], help="displacements between demand points")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--imu", required=True, help="aligned IMU CSV")
    pr.add_argument("--ipdp", required=True, help="demand-point list")
    pr.set_defaults(func=cmd_predict)

    for name, func in (("chain", cmd_chain), ("fuse", cmd_fuse)):
        c = sub.add_parser(name, parents=[common], help=f"{name} predictions into beliefs")
        c.add_argument("--predictions", required=True)
        c.add_argument("--initial", help="initial position 'x,y' (default 0,0)")
        c.add_argument("--initial-var", type=float, default=0.0)
        c.add_argument("--confidence", type=float, default=0.997)
        if name == "fuse":
            c.add_argument("--observations", required=True)
        c.set_defaults(func=func)

    e = sub.add_parser("eval", parents=[common], help="metrics report")
    e.add_argument("--truth", required=True)
    e.add_argument("--estimates", help="belief trace CSV")
    e.add_argument("--orientation", help="orientation log CSV")
    e.add_argument("--predictions", help="predictions CSV for coverage")
    e.add_argument("--skip", type=float, default=0.0, help="seconds skipped before scoring attitude")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("RENIL_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_SCHEMA
    from .asle.checkpoint import CheckpointError
    from .asle.model import ModelDivergedError

    try:
        return args.func(args)
    except CheckpointError as exc:
        log.error("%s", exc)
        return EXIT_IO
    except ModelDivergedError as exc:
        log.error("diverged: %s", exc)
        return EXIT_DIVERGED
    except (SchemaError, ValueError, TypeError, KeyError, json.JSONDecodeError) as exc:
        log.error("%s", exc)
        return EXIT_SCHEMA
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
