"""Command-line entry points for simulation, training, evaluation and sweeps.

Output paths are resolved against --out-dir, which defaults to the
LISSENSE_OUT environment variable and finally the working directory.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import dae as dae_mod
from . import glrt as glrt_mod
from . import lof as lof_mod
from .channel import (
    CORRECT,
    export_snapshot_csv,
    load_scene,
    load_trajectory,
    sample_power,
    sigma_for_snr,
)
from .harness import (
    derive_seed,
    load_experiment,
    route_snapshots,
    run_sweep,
    target_scene,
    write_report,
)
from .imaging import RESIZED, Dataset, export_pgm, to_features, to_image, write_manifest


def _out_path(args, name: str) -> str:
    base = args.out_dir or os.environ.get("LISSENSE_OUT", ".")
    os.makedirs(base, exist_ok=True)
    return os.path.join(base, name)


def _noise_var(args, snaps) -> float:
    if args.noise_var is not None:
        return args.noise_var
    return sigma_for_snr(snaps, args.snr_db)


def _cmd_simulate(args) -> int:
    scene = load_scene(args.scene)
    traj = load_trajectory(args.trajectory)
    traj.validate_inside(scene)
    snaps = route_snapshots(scene, traj)
    noise_var = _noise_var(args, snaps)
    rows, cols = scene.lis.rows, scene.lis.cols
    features, positions, labels, samples, image_paths = [], [], [], [], []
    for j, snap in enumerate(snaps):
        if args.export_channels:
            export_snapshot_csv(snap, _out_path(args, f"channel_{j:04d}.csv"))
        for s in range(args.samples):
            frame = sample_power(snap, noise_var, derive_seed(args.seed, "frame", j, s), s)
            img = to_image(frame, rows, cols)
            path = _out_path(args, f"img_{j:04d}_{s:02d}.pgm")
            export_pgm(img, path)
            image_paths.append(path)
            features.append(to_features(img, mode=RESIZED, size=(rows, cols)).values)
            positions.append(j)
            labels.append(traj.labels[j])
            samples.append(s)
    dataset = Dataset(
        features=np.asarray(features),
        position_index=np.asarray(positions),
        labels=np.asarray(labels),
        sample_index=np.asarray(samples),
    )
    manifest = _out_path(args, "manifest.csv")
    write_manifest(dataset, manifest, image_paths=image_paths)
    print(f"wrote {dataset.num_samples} samples, noise_var={noise_var:.6g}, "
          f"manifest={manifest}")
    return 0


def _cmd_train_glrt(args) -> int:
    scene = load_scene(args.scene)
    traj = load_trajectory(args.trajectory)
    snaps = route_snapshots(scene, traj)
    noise_var = _noise_var(args, snaps)
    correct = [int(i) for i in traj.correct_indices]
    point_frames = [
        np.stack([
            sample_power(snaps[j], noise_var,
                         derive_seed(args.seed, "glrt-train", j, s), s).w
            for s in range(args.n_train)
        ])
        for j in correct
    ]
    from .harness import shared_fisher_table

    model = glrt_mod.train_route_model(
        point_frames, noise_var, point_indices=correct,
        alpha=args.alpha, alpha0=args.alpha0,
        n_eval=args.n_eval, n_mc=args.n_mc, seed=args.seed,
        fisher=shared_fisher_table(),
    )
    path = _out_path(args, args.model)
    glrt_mod.save_route_model(model, path)
    print(f"trained {len(model.points)} route points at noise_var={noise_var:.6g} -> {path}")
    return 0


def _cmd_eval_glrt(args) -> int:
    scene = load_scene(args.scene)
    traj = load_trajectory(args.trajectory)
    model = glrt_mod.load_route_model(args.model)
    snaps = route_snapshots(scene, traj)
    out = _out_path(args, args.out)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["point_index", "label", "anomalous", "min_statistic", "min_threshold"])
        for j, snap in enumerate(snaps):
            frames = np.stack([
                sample_power(snap, model.noise_var,
                             derive_seed(args.seed, "glrt-eval", j, s), s).w
                for s in range(model.n_eval)
            ])
            result = glrt_mod.evaluate_point(model, frames)
            margin = int(np.argmin(result.statistics - result.thresholds))
            writer.writerow([
                j, traj.labels[j], int(result.anomalous),
                repr(float(result.statistics[margin])),
                repr(float(result.thresholds[margin])),
            ])
    print(f"wrote decisions -> {out}")
    return 0


def _cmd_train_lof(args) -> int:
    from .imaging import read_manifest

    dataset = read_manifest(args.manifest)
    mask = dataset.labels == CORRECT
    model = lof_mod.fit(dataset.features[mask], args.k, tau=args.tau)
    if args.validation:
        val = read_manifest(args.validation)
        val_mask = val.labels == CORRECT
        model = lof_mod.calibrate_tau(model, val.features[val_mask],
                                      percentile=args.tau_percentile)
    path = _out_path(args, args.model)
    lof_mod.save_lof_model(model, path)
    print(f"fit LOF on {model.num_train} correct samples, k={model.k}, "
          f"tau={model.tau:.4g} -> {path}")
    return 0


def _cmd_eval_lof(args) -> int:
    from .imaging import read_manifest

    model = lof_mod.load_lof_model(args.model)
    dataset = read_manifest(args.manifest)
    out = _out_path(args, args.out)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", "label", "score", "anomalous"])
        for i in range(dataset.num_samples):
            value, flag = lof_mod.predict(model, dataset.features[i])
            writer.writerow([int(dataset.sample_index[i]), str(dataset.labels[i]),
                             repr(value), int(flag)])
    print(f"scored {dataset.num_samples} samples -> {out}")
    return 0


def _cmd_train_dae(args) -> int:
    scene = load_scene(args.scene)
    traj = load_trajectory(args.trajectory)
    snaps = route_snapshots(scene, traj)
    t_scene = target_scene(scene, (args.target_rows, args.target_cols))
    t_snaps = route_snapshots(t_scene, traj)
    noise_var = sigma_for_snr(snaps, args.snr_db)
    target_noise = sigma_for_snr(t_snaps, args.target_snr_db)
    size = (args.image_size, args.image_size)
    inputs, targets = [], []
    for j in (int(i) for i in traj.correct_indices):
        for s in range(args.samples):
            frame = sample_power(snaps[j], noise_var,
                                 derive_seed(args.seed, "frame", j, s), s)
            img = to_image(frame, scene.lis.rows, scene.lis.cols)
            inputs.append(to_features(img, mode=RESIZED, size=size).values)
            t_frame = sample_power(t_snaps[j], target_noise,
                                   derive_seed(args.seed, "target", j, s), s)
            t_img = to_image(t_frame, args.target_rows, args.target_cols)
            targets.append(to_features(t_img, mode=RESIZED, size=size).values)
    config = dae_mod.TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                                 seed=args.seed)
    model, losses = dae_mod.train(np.asarray(inputs), np.asarray(targets), config,
                                  latent_dim=args.latent_dim)
    path = _out_path(args, args.model)
    dae_mod.save_dae_model(model, path)
    dae_mod.save_loss_curve(losses, _out_path(args, args.loss_csv))
    print(f"trained DAE on {len(inputs)} pairs, final loss {losses[-1]:.6g} -> {path}")
    return 0


def _cmd_sweep(args) -> int:
    config = load_experiment(args.config)
    out = _out_path(args, args.out)
    rows = run_sweep(config, out)
    failed = sum(1 for r in rows if r["status"] != "ok")
    print(f"sweep wrote {len(rows)} new rows ({failed} failed) -> {out}")
    return 1 if failed else 0


def _cmd_report(args) -> int:
    out_dir = args.out_dir or os.environ.get("LISSENSE_OUT", ".")
    written = write_report(args.results, out_dir)
    for path in written:
        print(f"summary -> {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lissense",
        description="Radio-image sensing toolkit: simulate, train and sweep.",
    )
    parser.add_argument("--out-dir", default=None,
                        help="output directory (default: $LISSENSE_OUT or cwd)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render radio images for a trajectory")
    p.add_argument("--scene", required=True)
    p.add_argument("--trajectory", required=True)
    p.add_argument("--snr-db", type=float, default=10.0)
    p.add_argument("--noise-var", type=float, default=None)
    p.add_argument("--samples", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--export-channels", action="store_true")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("train-glrt", help="train the statistical route detector")
    p.add_argument("--scene", required=True)
    p.add_argument("--trajectory", required=True)
    p.add_argument("--snr-db", type=float, default=10.0)
    p.add_argument("--noise-var", type=float, default=None)
    p.add_argument("--n-train", type=int, default=10)
    p.add_argument("--n-eval", type=int, default=10)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--alpha0", type=float, default=0.05)
    p.add_argument("--n-mc", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model", default="glrt_model.bin")
    p.set_defaults(func=_cmd_train_glrt)

    p = sub.add_parser("eval-glrt", help="evaluate trajectory points against a model")
    p.add_argument("--scene", required=True)
    p.add_argument("--trajectory", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", default="glrt_decisions.csv")
    p.set_defaults(func=_cmd_eval_glrt)

    p = sub.add_parser("train-lof", help="fit the outlier detector on correct samples")
    p.add_argument("--manifest", required=True)
    p.add_argument("--validation", default=None)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--tau", type=float, default=1.5)
    p.add_argument("--tau-percentile", type=float, default=99.0)
    p.add_argument("--model", default="lof_model.csv")
    p.set_defaults(func=_cmd_train_lof)

    p = sub.add_parser("eval-lof", help="score manifest samples against a LOF model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", default="lof_scores.csv")
    p.set_defaults(func=_cmd_eval_lof)

    p = sub.add_parser("train-dae", help="train the denoising autoencoder")
    p.add_argument("--scene", required=True)
    p.add_argument("--trajectory", required=True)
    p.add_argument("--snr-db", type=float, default=0.0)
    p.add_argument("--target-snr-db", type=float, default=10.0)
    p.add_argument("--target-rows", type=int, default=128)
    p.add_argument("--target-cols", type=int, default=128)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--latent-dim", type=int, default=16)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--samples", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model", default="dae_model.bin")
    p.add_argument("--loss-csv", default="dae_loss.csv")
    p.set_defaults(func=_cmd_train_dae)

    p = sub.add_parser("sweep", help="run a full experiment sweep to CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="results.csv")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("report", help="summarize a sweep results CSV")
    p.add_argument("--results", required=True)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
