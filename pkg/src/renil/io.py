"""Canonical file formats and run configuration.

IMU CSV: header ``t,ax,ay,az,gx,gy,gz,mx,my,mz`` (SI units, µT for the
field; ``nan`` magnetometer columns when absent). An optional first line
``# frame=nav`` marks aligned data. Truth CSV: ``t,px,py,pz,qw,qx,qy,qz``.
Demand-point lists hold one ``t0,t1`` pair per line. Predictions CSV:
``t0,t1,dpx,dpy,bx,by``. Observations are JSON lines ``{"t", "z", "H", "R"}``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .sequence import ImuSequence

IMU_COLUMNS = ("t", "ax", "ay", "az", "gx", "gy", "gz", "mx", "my", "mz")
TRUTH_COLUMNS = ("t", "px", "py", "pz", "qw", "qx", "qy", "qz")
PREDICTION_COLUMNS = ("t0", "t1", "dpx", "dpy", "bx", "by")
BELIEF_COLUMNS = ("t", "px", "py", "sxx", "sxy", "syy")
ORIENTATION_COLUMNS = ("t", "qw", "qx", "qy", "qz")
SPLITS = ("train", "val", "test")


class SchemaError(ValueError):
    """Input file or config does not follow its documented schema."""


def _fmt(x: float) -> str:
    return repr(float(x))


def write_table(path, columns, rows, comment: str | None = None) -> None:
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    with open(path, "w") as f:
        if comment:
            f.write(f"# {comment}\n")
        f.write(",".join(columns) + "\n")
        for r in rows if rows.size else []:
            f.write(",".join(_fmt(v) for v in r) + "\n")


def read_table(path, columns) -> tuple[np.ndarray, dict]:
    """Rows as a float array plus ``key=value`` settings from leading comments."""
    meta = {}
    header = None
    rows = []
    with open(path) as f:
        for n, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for item in line[1:].split():
                    if "=" in item:
                        k, v = item.split("=", 1)
                        meta[k] = v
                continue
            if header is None:
                header = tuple(c.strip() for c in line.split(","))
                if header != tuple(columns):
                    raise SchemaError(f"{path}: expected columns {','.join(columns)}, got {line}")
                continue
            parts = line.split(",")
            if len(parts) != len(columns):
                raise SchemaError(f"{path}:{n}: expected {len(columns)} fields")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise SchemaError(f"{path}:{n}: {exc}") from exc
    if header is None:
        raise SchemaError(f"{path}: missing header row")
    return np.array(rows, dtype=float).reshape(-1, len(columns)), meta


def write_imu_csv(path, seq: ImuSequence) -> None:
    mag = np.full((len(seq), 3), np.nan) if seq.mag is None else seq.mag
    rows = np.column_stack([seq.t, seq.accel, seq.gyro, mag])
    write_table(path, IMU_COLUMNS, rows, comment=f"frame={seq.frame}")


def read_imu_csv(path, seq_id: str = "") -> ImuSequence:
    rows, meta = read_table(path, IMU_COLUMNS)
    if len(rows) == 0:
        raise SchemaError(f"{path}: no samples")
    mag = rows[:, 7:10]
    if np.all(np.isnan(mag)):
        mag = None
    elif np.any(np.isnan(mag)):
        raise SchemaError(f"{path}: partially missing magnetometer data")
    try:
        return ImuSequence(rows[:, 0], rows[:, 1:4], rows[:, 4:7], mag,
                           frame=meta.get("frame", "device"), seq_id=seq_id or Path(path).stem)
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from exc


def write_truth_csv(path, seq: ImuSequence) -> None:
    if seq.positions is None or seq.quats is None:
        raise ValueError("sequence carries no ground truth")
    write_table(path, TRUTH_COLUMNS, np.column_stack([seq.t, seq.positions, seq.quats]))


def read_truth_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows, _ = read_table(path, TRUTH_COLUMNS)
    return rows[:, 0], rows[:, 1:4], rows[:, 4:8]


def attach_truth(seq: ImuSequence, truth_path) -> ImuSequence:
    t, pos, quats = read_truth_csv(truth_path)
    if len(t) != len(seq) or np.max(np.abs(t - seq.t)) > 1e-6:
        raise SchemaError(f"{truth_path}: timestamps do not match the IMU file")
    return seq.copy(positions=pos, quats=quats)


def read_ipdp_list(path) -> np.ndarray:
    pairs = []
    with open(path) as f:
        for n, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 2:
                raise SchemaError(f"{path}:{n}: expected 't0,t1'")
            t0, t1 = float(parts[0]), float(parts[1])
            if not t1 > t0:
                raise SchemaError(f"{path}:{n}: need t1 > t0")
            pairs.append((t0, t1))
    if not pairs:
        raise SchemaError(f"{path}: no demand points")
    return np.array(pairs)


def write_ipdp_list(path, pairs) -> None:
    with open(path, "w") as f:
        for t0, t1 in pairs:
            f.write(f"{_fmt(t0)},{_fmt(t1)}\n")


def write_predictions(path, t0, t1, dp, b) -> None:
    write_table(path, PREDICTION_COLUMNS, np.column_stack([t0, t1, dp, b]))


def read_predictions(path) -> np.ndarray:
    rows, _ = read_table(path, PREDICTION_COLUMNS)
    if np.any(rows[:, 4:6] <= 0):
        raise SchemaError(f"{path}: Laplace scales must be positive")
    if np.any(rows[:, 1] <= rows[:, 0]):
        raise SchemaError(f"{path}: need t1 > t0")
    return rows


def read_observations(path) -> list[dict]:
    out = []
    with open(path) as f:
        for n, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{n}: {exc}") from exc
            if not isinstance(rec, dict) or set(rec) != {"t", "z", "H", "R"}:
                raise SchemaError(f"{path}:{n}: observation needs exactly keys t, z, H, R")
            out.append(rec)
    return out


def write_observations(path, records) -> None:
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps({k: np.asarray(v).tolist() if k != "t" else float(v)
                                for k, v in rec.items()}) + "\n")


# -- manifest ---------------------------------------------------------------


@dataclass
class ManifestEntry:
    id: str
    imu: str
    truth: str
    subject: str = ""
    seen: bool = True
    split: str = "train"


@dataclass
class Manifest:
    root: str
    sequences: list

    def __post_init__(self):
        self.sequences = [e if isinstance(e, ManifestEntry) else _entry(e) for e in self.sequences]
        ids = [e.id for e in self.sequences]
        if len(set(ids)) != len(ids):
            raise SchemaError("duplicate sequence ids in manifest")
        for e in self.sequences:
            if e.split not in SPLITS:
                raise SchemaError(f"sequence {e.id}: unknown split {e.split!r}")

    def path(self, name: str) -> Path:
        return Path(self.root) / name

    def check_files(self) -> None:
        for e in self.sequences:
            for name in (e.imu, e.truth):
                if not self.path(name).is_file():
                    raise FileNotFoundError(str(self.path(name)))

    def split(self, tag: str) -> list[ManifestEntry]:
        return [e for e in self.sequences if e.split == tag]

    def to_dict(self) -> dict:
        return {"root": self.root, "sequences": [asdict(e) for e in self.sequences]}


def _entry(d) -> ManifestEntry:
    if not isinstance(d, dict):
        raise SchemaError("manifest entries must be objects")
    known = {f.name for f in fields(ManifestEntry)}
    if set(d) - known:
        raise SchemaError(f"unknown manifest keys: {sorted(set(d) - known)}")
    try:
        return ManifestEntry(**d)
    except TypeError as exc:
        raise SchemaError(str(exc)) from exc


def split_counts(n: int, ratio=(5, 1, 4)) -> tuple[int, int, int]:
    """Largest-remainder allocation of ``n`` items to train/val/test."""
    total = sum(ratio)
    raw = [n * r / total for r in ratio]
    counts = [int(np.floor(x)) for x in raw]
    for i in sorted(range(3), key=lambda i: raw[i] - counts[i], reverse=True)[: n - sum(counts)]:
        counts[i] += 1
    return tuple(counts)


def load_manifest(path) -> Manifest:
    with open(path) as f:
        try:
            d = json.load(f)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: {exc}") from exc
    if not isinstance(d, dict) or set(d) != {"root", "sequences"}:
        raise SchemaError(f"{path}: manifest needs exactly keys root, sequences")
    root = Path(d["root"])
    if not root.is_absolute():
        root = Path(path).parent / root
    m = Manifest(str(root), d["sequences"])
    m.check_files()
    return m


def save_manifest(path, manifest: Manifest) -> None:
    with open(path, "w") as f:
        json.dump(manifest.to_dict(), f, indent=2)
        f.write("\n")


# -- run configuration --------------------------------------------------------


@dataclass
class RunConfig:
    filter: dict = field(default_factory=dict)
    asle: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    bayes: dict = field(default_factory=dict)
    synth: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        from .asle.config import AsleConfig, TrainConfig
        from .bayes import GibbsConfig
        from .orient import FilterParams

        checks = {"filter": FilterParams, "asle": AsleConfig, "train": TrainConfig,
                  "bayes": GibbsConfig, "synth": SynthConfig}
        for name, cls in checks.items():
            section = getattr(self, name)
            if not isinstance(section, dict):
                raise SchemaError(f"config section {name!r} must be an object")
            known = {f.name for f in fields(cls)}
            unknown = set(section) - known
            if unknown:
                raise SchemaError(f"unknown keys in {name!r}: {sorted(unknown)}")
            try:
                cls(**section)
            except (TypeError, ValueError) as exc:
                raise SchemaError(f"invalid {name!r} section: {exc}") from exc
        if not isinstance(self.seed, int):
            raise SchemaError("seed must be an integer")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SynthConfig:
    """Corpus generated by ``synth``."""

    n: int = 10
    duration: float = 60.0
    sample_rate: float = 200.0
    paths: tuple = ("straight", "circle", "spline")
    speed: float | None = None  # fixed walking speed; None draws one per sequence
    accel_sigma: float = 0.0
    gyro_sigma: float = 0.0
    gyro_bias: tuple = (0.0, 0.0, 0.0)
    mag_sigma: float = 0.0
    carry: tuple | None = None  # fixed device mounting quaternion

    def __post_init__(self):
        if self.n < 1 or self.duration <= 0 or self.sample_rate <= 0:
            raise ValueError("n, duration and sample_rate must be positive")


def load_run_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path) as f:
            d = json.load(f)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    if not isinstance(d, dict):
        raise SchemaError(f"{path}: config must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    if set(d) - known:
        raise SchemaError(f"unknown config keys: {sorted(set(d) - known)}")
    return RunConfig(**d)


def save_run_config(path, cfg: RunConfig) -> None:
    with open(path, "w") as f:
        json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
