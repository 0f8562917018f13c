"""End-to-end experiment runner: scenarios, datasets, detector arms, sweeps.

A sweep cell is one (seed, SNR, detector arm) combination. Every random
draw inside a cell is seeded by hashing the master seed with the cell key
and the draw's role, so a finished sweep is a pure function of its
configuration and two runs produce byte-identical CSV files. Completed rows
are skipped on rerun, which makes long sweeps resumable.
"""

from __future__ import annotations

import csv
import hashlib
import os
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import yaml

from . import dae as dae_mod
from . import glrt as glrt_mod
from . import lof as lof_mod
from .channel import (
    ANOMALOUS,
    CORRECT,
    ChannelSnapshot,
    LisSpec,
    PowerFrame,
    Scene,
    Trajectory,
    build_lis_grid,
    channel_at,
    load_scene,
    sample_power,
    scene_from_dict,
    sigma_for_snr,
)
from .imaging import RESIZED, average_frames, to_features, to_image
from .metrics import Confusion, metrics_row

ARM_RAW = "raw"
ARM_AVERAGED = "averaged"
ARM_DAE = "dae"
ARM_GLRT = "glrt"
ALL_ARMS = (ARM_RAW, ARM_AVERAGED, ARM_DAE, ARM_GLRT)

RESULT_FIELDS = [
    "config_id", "seed", "snr_db", "detector", "unit",
    "tp", "fp", "tn", "fn",
    "pp", "pn", "rp", "rn", "pf1", "nf1", "status",
]

_FISHER_TABLE: glrt_mod.FisherTable | None = None


def shared_fisher_table() -> glrt_mod.FisherTable:
    """Process-wide Fisher information table; building it costs seconds."""
    global _FISHER_TABLE
    if _FISHER_TABLE is None:
        _FISHER_TABLE = glrt_mod.FisherTable()
    return _FISHER_TABLE


def derive_seed(master_seed: int, *parts) -> int:
    """Stable per-draw seed: master seed and role hashed together."""
    text = f"{master_seed}|" + "|".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


@dataclass(frozen=True)
class RouteSpec:
    """Correct route plus a deviated copy at a fixed offset.

    ``parallel`` runs the route along the surface wall at
    ``wall_distance_m`` and offsets the anomalous copy away from the wall;
    ``normal`` runs it straight away from the wall and offsets sideways.
    """

    kind: str = "parallel"
    offset_m: float = 0.1
    n_correct: int = 20
    n_anomalous: int = 20
    wall_distance_m: float = 3.0
    length_m: float = 2.0
    height_m: float = 1.0

    def __post_init__(self):
        if self.kind not in ("parallel", "normal"):
            raise ValueError(f"route kind must be parallel or normal, got {self.kind!r}")
        if self.offset_m < 0:
            raise ValueError("deviation offset cannot be negative")
        if self.n_correct < 1 or self.n_anomalous < 0:
            raise ValueError("need at least one correct point")
        if self.n_anomalous > self.n_correct:
            raise ValueError("anomalous copies are drawn from correct points")


@dataclass(frozen=True)
class LofSettings:
    k: int = 3
    tau_percentile: float = 99.0
    tau_fallback: float = 1.5
    feature_size: tuple[int, int] = (32, 32)


@dataclass(frozen=True)
class DaeSettings:
    latent_dim: int = 16
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    image_size: tuple[int, int] = (64, 64)
    target_grid: tuple[int, int] = (128, 128)
    target_snr_db: float = 10.0
    train_variants: int = 25


@dataclass(frozen=True)
class GlrtSettings:
    alpha: float = 0.05
    alpha0: float = 0.05
    n_train: int = 10
    n_eval: int = 10
    n_mc: int = 20_000


@dataclass(frozen=True)
class ExperimentConfig:
    config_id: str
    scene: Scene
    route: RouteSpec
    snr_grid_db: tuple[float, ...] = (10.0, 5.0, 0.0, -5.0, -10.0)
    arms: tuple[str, ...] = ALL_ARMS
    seeds: tuple[int, ...] = (0,)
    samples_per_point: int = 10
    averaging_factor: int = 100
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    lof: LofSettings = field(default_factory=LofSettings)
    dae: DaeSettings = field(default_factory=DaeSettings)
    glrt: GlrtSettings = field(default_factory=GlrtSettings)
    changed_environment: bool = False

    def __post_init__(self):
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError("split ratios must sum to 1")
        if len(self.snr_grid_db) == 0:
            raise ValueError("SNR grid cannot be empty")
        for arm in self.arms:
            if arm not in ALL_ARMS:
                raise ValueError(f"unknown detector arm {arm!r}")
        if self.samples_per_point < 3:
            raise ValueError("need at least 3 samples per point for an 80/10/10 split")


def load_experiment(path: str) -> ExperimentConfig:
    """Experiment YAML; the scene may be a sibling file path or inline."""
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    scene_field = data["scene"]
    if isinstance(scene_field, str):
        scene_path = os.path.join(os.path.dirname(os.path.abspath(path)), scene_field)
        scene = load_scene(scene_path)
    else:
        scene = scene_from_dict(scene_field)
    route = RouteSpec(**{k: tuple(v) if isinstance(v, list) else v
                         for k, v in data["route"].items()})

    def sub(name, cls):
        raw = data.get(name, {})
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()})

    return ExperimentConfig(
        config_id=str(data.get("config_id", os.path.basename(path))),
        scene=scene,
        route=route,
        snr_grid_db=tuple(float(v) for v in data.get("snr_grid_db", (10, 5, 0, -5, -10))),
        arms=tuple(data.get("arms", list(ALL_ARMS))),
        seeds=tuple(int(v) for v in data.get("seeds", [0])),
        samples_per_point=int(data.get("samples_per_point", 10)),
        averaging_factor=int(data.get("averaging_factor", 100)),
        split=tuple(float(v) for v in data.get("split", (0.8, 0.1, 0.1))),
        lof=sub("lof", LofSettings),
        dae=sub("dae", DaeSettings),
        glrt=sub("glrt", GlrtSettings),
        changed_environment=bool(data.get("changed_environment", False)),
    )


# ---------------------------------------------------------------------------
# routes and scenes


def build_routes(scene: Scene, route: RouteSpec) -> Trajectory:
    """Correct route plus its deviated copy; correct points come first."""
    lis = scene.lis
    axes = {"x": 0, "y": 1, "z": 2}
    normal_ax = axes[lis.axis]
    col_ax, _row_ax = [i for i in range(3) if i != normal_ax]
    room = np.asarray(scene.room)
    inward = 1.0 if lis.anchor[normal_ax] < room[normal_ax] / 2.0 else -1.0
    wall = lis.anchor[normal_ax]
    lis_center_col = lis.anchor[col_ax] + (lis.cols - 1) * lis.spacing / 2.0

    correct = np.zeros((route.n_correct, 3))
    correct[:, 2] = route.height_m
    if route.kind == "parallel":
        along = np.linspace(-route.length_m / 2.0, route.length_m / 2.0, route.n_correct)
        correct[:, col_ax] = lis_center_col + along
        correct[:, normal_ax] = wall + inward * route.wall_distance_m
        offset_ax, offset_dir = normal_ax, inward
    else:
        along = np.linspace(0.0, route.length_m, route.n_correct)
        correct[:, col_ax] = lis_center_col
        correct[:, normal_ax] = wall + inward * (route.wall_distance_m + along)
        offset_ax, offset_dir = col_ax, 1.0

    anomalous = correct[: route.n_anomalous].copy()
    anomalous[:, offset_ax] += offset_dir * route.offset_m
    points = np.vstack([correct, anomalous])
    labels = (CORRECT,) * route.n_correct + (ANOMALOUS,) * route.n_anomalous
    traj = Trajectory(points=points, labels=labels)
    traj.validate_inside(scene)
    return traj


def relocate_reflectors(scene: Scene, shift: tuple[float, float] = (1.0, 0.5)) -> Scene:
    """Changed-environment variant: slide interior panels, keep wall panels.

    Panels flush with a room boundary stay put; the rest translate by
    ``shift`` in the floor plane, clamped so they remain inside the room.
    """
    room = np.asarray(scene.room)
    moved = []
    for r in scene.reflectors:
        lo, hi = r.corners_low_high()
        on_boundary = bool(np.any(lo <= 1e-9) or np.any(hi >= room - 1e-9))
        if on_boundary:
            moved.append(r)
            continue
        center = np.asarray(r.center, dtype=float)
        center[0] += shift[0]
        center[1] += shift[1]
        half = np.zeros(3)
        for extent, ax in zip(r.size, r.plane_axes):
            half[ax] = extent / 2.0
        center = np.minimum(np.maximum(center, half), room - half)
        moved.append(replace(r, center=tuple(center)))
    return replace(scene, reflectors=tuple(moved))


def route_snapshots(scene: Scene, traj: Trajectory) -> list[ChannelSnapshot]:
    return [channel_at(scene, p, position_index=j) for j, p in enumerate(traj.points)]


def target_scene(scene: Scene, grid: tuple[int, int]) -> Scene:
    """Same aperture rendered by a denser virtual surface (super-res target)."""
    lis = scene.lis
    rows, cols = grid
    spacing_r = lis.spacing * (lis.rows - 1) / max(rows - 1, 1)
    spacing_c = lis.spacing * (lis.cols - 1) / max(cols - 1, 1)
    spacing = min(spacing_r, spacing_c) if lis.rows > 1 and lis.cols > 1 else lis.spacing
    return replace(scene, lis=LisSpec(
        anchor=lis.anchor, rows=rows, cols=cols, spacing=spacing, axis=lis.axis,
    ))


def split_sample_ids(n_samples: int, split, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded per-point permutation into train/validation/test sample ids."""
    n_val = max(1, round(split[1] * n_samples))
    n_test = max(1, round(split[2] * n_samples))
    n_train = n_samples - n_val - n_test
    if n_train < 1:
        raise ValueError("split leaves no training samples")
    order = np.random.default_rng(seed).permutation(n_samples)
    return order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :]


# ---------------------------------------------------------------------------
# detector arms


def _frame(snap: ChannelSnapshot, noise_var: float, seed: int, sample: int) -> PowerFrame:
    return sample_power(snap, noise_var, seed, sample_index=sample)


def _averaged_frame(
    snap: ChannelSnapshot, noise_var: float, s_factor: int,
    master: int, cell: str, point: int, sample: int,
) -> PowerFrame:
    singles = [
        _frame(snap, noise_var,
               derive_seed(master, cell, "frame", point, sample, rep), sample)
        for rep in range(s_factor)
    ]
    return average_frames(singles)


class _CellContext:
    """Everything one sweep cell needs: snapshots, noise level, seeding."""

    def __init__(self, config: ExperimentConfig, traj: Trajectory,
                 snaps: Sequence[ChannelSnapshot],
                 eval_snaps: Sequence[ChannelSnapshot],
                 target_snaps: Sequence[ChannelSnapshot] | None,
                 master_seed: int, snr_db: float, arm: str):
        self.config = config
        self.traj = traj
        self.snaps = snaps
        self.eval_snaps = eval_snaps
        self.target_snaps = target_snaps
        self.master = master_seed
        self.cell = f"{snr_db}:{arm}"
        self.noise_var = sigma_for_snr(snaps, snr_db)
        self.rows = config.scene.lis.rows
        self.cols = config.scene.lis.cols

    def seed(self, *parts) -> int:
        return derive_seed(self.master, self.cell, *parts)

    def power_frame(self, point: int, sample: int, role: str, averaged: bool = False,
                    for_eval: bool = False) -> PowerFrame:
        snap = (self.eval_snaps if for_eval else self.snaps)[point]
        if averaged:
            return _averaged_frame(
                snap, self.noise_var, self.config.averaging_factor,
                self.master, f"{self.cell}:{role}", point, sample,
            )
        return _frame(snap, self.noise_var, self.seed(role, point, sample), sample)


def _image_features(ctx: _CellContext, frame: PowerFrame, size: tuple[int, int]) -> np.ndarray:
    img = to_image(frame, ctx.rows, ctx.cols)
    return to_features(img, mode=RESIZED, size=size).values


def _lof_confusion(ctx: _CellContext, train, val, test_neg, anomalous_pos) -> Confusion:
    cfg = ctx.config.lof
    model = lof_mod.fit(np.asarray(train), cfg.k, tau=cfg.tau_fallback)
    if len(val) > 0:
        model = lof_mod.calibrate_tau(model, np.asarray(val), percentile=cfg.tau_percentile)
    neg_scores = lof_mod.score_many(model, np.asarray(test_neg))
    pos_scores = lof_mod.score_many(model, np.asarray(anomalous_pos))
    return Confusion(
        tp=int(np.sum(pos_scores > model.tau)),
        fn=int(np.sum(pos_scores <= model.tau)),
        fp=int(np.sum(neg_scores > model.tau)),
        tn=int(np.sum(neg_scores <= model.tau)),
    )


def _run_image_arm(ctx: _CellContext, averaged: bool) -> Confusion:
    config = ctx.config
    n_s = config.samples_per_point
    size = config.lof.feature_size
    train, val, test = [], [], []
    for point in ctx.traj.correct_indices:
        ids = split_sample_ids(n_s, config.split, ctx.seed("split", int(point)))
        for bucket, sample_ids, for_eval in ((train, ids[0], False),
                                             (val, ids[1], False),
                                             (test, ids[2], True)):
            for s in sample_ids:
                frame = ctx.power_frame(int(point), int(s), "frame",
                                        averaged=averaged, for_eval=for_eval)
                bucket.append(_image_features(ctx, frame, size))
    positives = []
    for point in ctx.traj.anomalous_indices:
        for s in range(n_s):
            frame = ctx.power_frame(int(point), s, "frame", averaged=averaged, for_eval=True)
            positives.append(_image_features(ctx, frame, size))
    return _lof_confusion(ctx, train, val, test, positives)


def _run_dae_arm(ctx: _CellContext) -> Confusion:
    """Resolution augmentation on top of the averaging strategy.

    The network maps S-averaged surface images toward per-point clean
    targets rendered by the denser virtual surface, then the outlier
    detector runs on the reconstructions. Training inputs are fresh
    averaged draws so the network cannot memorize noise instances.
    """
    config = ctx.config
    settings = config.dae
    n_s = config.samples_per_point
    size = settings.image_size
    if ctx.target_snaps is None:
        raise RuntimeError("DAE arm needs target snapshots")
    target_noise = sigma_for_snr(ctx.target_snaps, settings.target_snr_db)
    grid_rows, grid_cols = settings.target_grid
    correct = [int(p) for p in ctx.traj.correct_indices]

    def corrupted(point: int, s: int, for_eval: bool = False, role: str = "frame") -> np.ndarray:
        frame = ctx.power_frame(point, s, role, averaged=True, for_eval=for_eval)
        return _image_features(ctx, frame, size)

    def clean_target(point: int) -> np.ndarray:
        singles = [
            _frame(ctx.target_snaps[point], target_noise,
                   ctx.seed("target", point, rep), 0)
            for rep in range(config.averaging_factor)
        ]
        img = to_image(average_frames(singles), grid_rows, grid_cols)
        return to_features(img, mode=RESIZED, size=size).values

    targets = {point: clean_target(point) for point in correct}
    train_in = []
    train_t = []
    for point in correct:
        for v in range(settings.train_variants):
            train_in.append(corrupted(point, v, role="variant"))
            train_t.append(targets[point])
    train_cfg = dae_mod.TrainConfig(
        learning_rate=settings.learning_rate,
        epochs=settings.epochs,
        batch_size=settings.batch_size,
        seed=ctx.seed("dae-train"),
    )
    model, _losses = dae_mod.train(
        np.asarray(train_in), np.asarray(train_t), train_cfg,
        latent_dim=settings.latent_dim,
    )

    fit_feats, val, test = [], [], []
    for point in correct:
        ids = split_sample_ids(n_s, config.split, ctx.seed("split", point))
        for s in ids[0]:
            fit_feats.append(corrupted(point, int(s)))
        for s in ids[1]:
            val.append(corrupted(point, int(s)))
        for s in ids[2]:
            test.append(corrupted(point, int(s), for_eval=True))
    positives = [
        corrupted(int(point), s, for_eval=True)
        for point in ctx.traj.anomalous_indices
        for s in range(n_s)
    ]
    return _lof_confusion(
        ctx,
        dae_mod.denoise(model, np.asarray(fit_feats)),
        dae_mod.denoise(model, np.asarray(val)) if val else [],
        dae_mod.denoise(model, np.asarray(test)),
        dae_mod.denoise(model, np.asarray(positives)),
    )


def _run_glrt_arm(ctx: _CellContext, fisher: glrt_mod.FisherTable) -> Confusion:
    config = ctx.config
    settings = config.glrt
    point_frames = []
    correct = [int(p) for p in ctx.traj.correct_indices]
    for point in correct:
        frames = np.stack([
            ctx.power_frame(point, s, "glrt-train").w for s in range(settings.n_train)
        ])
        point_frames.append(frames)
    model = glrt_mod.train_route_model(
        point_frames, ctx.noise_var,
        point_indices=correct,
        alpha=settings.alpha, alpha0=settings.alpha0,
        n_eval=settings.n_eval, n_mc=settings.n_mc,
        seed=ctx.seed("glrt-threshold"),
        fisher=fisher,
    )
    tp = fp = tn = fn = 0
    for point in correct:
        frames = np.stack([
            ctx.power_frame(point, s, "glrt-eval", for_eval=True).w
            for s in range(settings.n_eval)
        ])
        if glrt_mod.evaluate_point(model, frames).anomalous:
            fp += 1
        else:
            tn += 1
    for point in (int(p) for p in ctx.traj.anomalous_indices):
        frames = np.stack([
            ctx.power_frame(point, s, "glrt-eval", for_eval=True).w
            for s in range(settings.n_eval)
        ])
        if glrt_mod.evaluate_point(model, frames).anomalous:
            tp += 1
        else:
            fn += 1
    return Confusion(tp=tp, fp=fp, tn=tn, fn=fn)


# ---------------------------------------------------------------------------
# sweep driver


def _existing_keys(path: str) -> set[tuple[str, str, str, str]]:
    if not os.path.exists(path):
        return set()
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return {(r["config_id"], r["seed"], r["snr_db"], r["detector"]) for r in reader}


def run_sweep(config: ExperimentConfig, out_csv: str) -> list[dict]:
    """Run every (seed, SNR, arm) cell and append one CSV row per cell.

    Rows already present in the output file are skipped, so an interrupted
    sweep resumes where it stopped. A failing cell is recorded with a
    failure status and the sweep continues.
    """
    traj = build_routes(config.scene, config.route)
    snaps = route_snapshots(config.scene, traj)
    if config.changed_environment:
        eval_snaps = route_snapshots(relocate_reflectors(config.scene), traj)
    else:
        eval_snaps = snaps
    target_snaps = None
    if ARM_DAE in config.arms:
        t_scene = target_scene(config.scene, config.dae.target_grid)
        target_snaps = route_snapshots(t_scene, traj)
    fisher = shared_fisher_table() if ARM_GLRT in config.arms else None

    done = _existing_keys(out_csv)
    new_file = not os.path.exists(out_csv)
    rows = []
    with open(out_csv, "a", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_FIELDS, lineterminator="\n")
        if new_file:
            writer.writeheader()
        for seed in config.seeds:
            for snr_db in config.snr_grid_db:
                for arm in config.arms:
                    key = (config.config_id, str(seed), repr(float(snr_db)), arm)
                    if key in done:
                        continue
                    ctx = _CellContext(config, traj, snaps, eval_snaps,
                                       target_snaps, seed, snr_db, arm)
                    unit = "point" if arm == ARM_GLRT else "image"
                    try:
                        if arm == ARM_RAW:
                            confusion = _run_image_arm(ctx, averaged=False)
                        elif arm == ARM_AVERAGED:
                            confusion = _run_image_arm(ctx, averaged=True)
                        elif arm == ARM_DAE:
                            confusion = _run_dae_arm(ctx)
                        else:
                            confusion = _run_glrt_arm(ctx, fisher)
                        row = metrics_row(config.config_id, snr_db, arm, confusion)
                        row.update(seed=seed, unit=unit, status="ok")
                    except Exception as exc:  # keep sweeping, flag the cell
                        row = {f: "" for f in RESULT_FIELDS}
                        row.update(
                            config_id=config.config_id, seed=seed,
                            snr_db=repr(float(snr_db)), detector=arm,
                            unit=unit, status=f"failed:{type(exc).__name__}",
                        )
                    writer.writerow(row)
                    fh.flush()
                    rows.append(row)
    return rows


def read_results(path: str) -> list[dict]:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def summarize(rows: Sequence[dict]) -> dict[str, dict]:
    """Per config: mean PF1 over seeds for every (snr, detector) pair.

    Undefined PF1 counts as 0 so degenerate cells drag the average down
    instead of disappearing from it.
    """
    tables: dict[str, dict] = {}
    for row in rows:
        if row["status"] != "ok":
            continue
        table = tables.setdefault(row["config_id"], {})
        snr = float(row["snr_db"])
        pf1 = float(row["pf1"]) if row["pf1"] != "" else 0.0
        table.setdefault((snr, row["detector"]), []).append(pf1)
    out: dict[str, dict] = {}
    for config_id, cells in tables.items():
        snrs = sorted({snr for snr, _ in cells}, reverse=True)
        detectors = sorted({det for _, det in cells})
        grid = {
            det: [float(np.mean(cells[(snr, det)])) if (snr, det) in cells else None
                  for snr in snrs]
            for det in detectors
        }
        out[config_id] = {"snr_db": snrs, "pf1": grid}
    return out


def write_report(results_csv: str, out_dir: str) -> list[str]:
    """One summary CSV per config: rows are SNRs, columns are detector arms."""
    rows = read_results(results_csv)
    tables = summarize(rows)
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for config_id, table in tables.items():
        safe = config_id.replace("/", "_")
        path = os.path.join(out_dir, f"summary_{safe}.csv")
        detectors = sorted(table["pf1"])
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["snr_db"] + [f"pf1_{d}" for d in detectors])
            for i, snr in enumerate(table["snr_db"]):
                row = [repr(snr)]
                for det in detectors:
                    value = table["pf1"][det][i]
                    row.append("" if value is None else repr(value))
                writer.writerow(row)
        written.append(path)
    return written
