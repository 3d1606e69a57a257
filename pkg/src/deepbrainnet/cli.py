"""Command-line pipeline: synth, preprocess, fcm, train, evaluate, report-demo.

Every command takes `--config <path>` (flat key = value file, see config.py)
plus targeted overrides (--seed, --epochs, --size). One global seed fans out
to per-stage streams via documented hashing, so each stage is independently
reproducible and identical configurations emit byte-identical CSV artifacts
and checkpoints.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
import time

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, parse_config
from .dataio import (
    DatasetError,
    DatasetManifest,
    GrayImage,
    PgmError,
    SplitSpec,
    generate_synthetic_dataset,
    load_pgm,
    manifest_to_csv,
    save_pgm,
    scan_dataset,
    split_manifest,
)
from .fcm import FcmConfig, fcm_segment, format_run_summary, save_matrix_csv
from .imaging import ClaheParams, auto_crop_margins, box_blur, clahe, equalize_histogram, resize_bilinear
from .imaging import augment as augment_image
from .metrics import classification_report, confusion_matrix, confusion_svg, confusion_to_csv
from .metrics import report_to_csv, report_to_text, roc_curve, roc_svg, roc_to_csv
from .nnet import (
    NonFiniteLossError,
    TrainConfig,
    build_deepbrainnet_mini,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
)
from .rng import derive_seed, stage_seed

# Published per-class reference metrics bundled for the aggregation demo
# (precision, recall, f1).
REFERENCE_CLASS_METRICS = (
    ("Glioma tumor", 0.914, 0.932, 0.923),
    ("Meningioma tumor", 0.819, 0.798, 0.808),
    ("No tumor", 0.946, 0.875, 0.909),
    ("Pituitary tumor", 0.868, 0.945, 0.905),
)


def reference_macro_metrics() -> dict:
    """Unweighted means over the bundled reference per-class metrics."""
    precisions = [row[1] for row in REFERENCE_CLASS_METRICS]
    recalls = [row[2] for row in REFERENCE_CLASS_METRICS]
    f1s = [row[3] for row in REFERENCE_CLASS_METRICS]
    return {
        "macro_precision": sum(precisions) / len(precisions),
        "macro_recall": sum(recalls) / len(recalls),
        "macro_f1": sum(f1s) / len(f1s),
    }


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def _preprocessed_dir(config: RunConfig) -> str:
    return os.path.join(config.output_dir, "preprocessed")


def _fcm_dir(config: RunConfig) -> str:
    return os.path.join(config.output_dir, "fcm")


def _train_dir(config: RunConfig) -> str:
    return os.path.join(config.output_dir, "train")


def _eval_dir(config: RunConfig) -> str:
    return os.path.join(config.output_dir, "eval")


def _split(config: RunConfig, manifest: DatasetManifest):
    spec = SplitSpec(config.train_fraction, stage_seed(config.seed, "split"))
    return split_manifest(manifest, spec)


def _mask_path(config: RunConfig, rel_path: str) -> str:
    stem = rel_path[:-4] if rel_path.endswith(".pgm") else rel_path
    return os.path.join(_fcm_dir(config), f"{stem}_mask.pgm")


def _load_gray(config: RunConfig, manifest: DatasetManifest, rel_path: str) -> GrayImage:
    image = load_pgm(manifest.full_path(rel_path))
    if config.fcm_mask_enabled:
        mask_file = _mask_path(config, rel_path)
        if not os.path.exists(mask_file):
            raise DatasetError(
                f"fcm_mask_enabled but no mask at {mask_file!r}; run the fcm command first"
            )
        mask = load_pgm(mask_file)
        if (mask.width, mask.height) != (image.width, image.height):
            raise DatasetError(f"mask dimensions mismatch for {rel_path!r}")
        image = GrayImage(image.width, image.height, image.data * (mask.data // 255))
    return image


def _to_tensor(image: GrayImage) -> np.ndarray:
    """(3, H, W) float64 in [0, 1]: gray plane normalized then channel-stacked."""
    plane = image.data.astype(np.float64) / 255.0
    return np.stack([plane, plane, plane])


def _load_tensors(config: RunConfig, manifest: DatasetManifest):
    images = [_load_gray(config, manifest, rel) for rel, _ in manifest.entries]
    labels = np.array([idx for _, idx in manifest.entries], dtype=np.int64)
    tensors = np.stack([_to_tensor(img) for img in images])
    return images, tensors, labels


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_run_record(config: RunConfig, command: str, durations: dict, artifacts: list[str]) -> None:
    """Plain-text key: value record plus a digest per artifact, written atomically."""
    lines = [f"command: {command}", f"tool_version: {__version__}"]
    for stage, seconds in durations.items():
        lines.append(f"duration_s.{stage}: {seconds:.3f}")
    for line in config.to_text().splitlines():
        key, _, value = line.partition(" = ")
        lines.append(f"config.{key}: {value}")
    for path in sorted(artifacts):
        rel = os.path.relpath(path, config.output_dir)
        lines.append(f"artifact: {_sha256(path)}  {rel}")
    record_path = os.path.join(config.output_dir, f"runrecord_{command}.txt")
    tmp_path = record_path + ".tmp"
    with open(tmp_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp_path, record_path)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth(config: RunConfig) -> int:
    started = time.perf_counter()
    manifest = generate_synthetic_dataset(
        config.dataset_root,
        config.synth_per_class,
        config.image_size,
        stage_seed(config.seed, "synth"),
    )
    os.makedirs(config.output_dir, exist_ok=True)
    artifacts = [manifest.full_path(rel) for rel, _ in manifest.entries]
    print(f"synth: wrote {len(manifest)} images across {len(manifest.class_names)} classes "
          f"under {config.dataset_root}")
    _write_run_record(config, "synth", {"total": time.perf_counter() - started}, artifacts)
    return 0


def _enhance(config: RunConfig, image: GrayImage) -> GrayImage:
    for step in config.enhancement:
        if step == "blur":
            image = box_blur(image, config.blur_kernel, config.blur_kernel)
        elif step == "hist_eq":
            image = equalize_histogram(image)
        elif step == "clahe":
            image = clahe(image, ClaheParams(config.clahe_tiles, config.clahe_tiles,
                                             config.clahe_clip_limit))
    return image


def cmd_preprocess(config: RunConfig) -> int:
    started = time.perf_counter()
    manifest = scan_dataset(config.dataset_root)
    out_root = _preprocessed_dir(config)
    artifacts = []
    failures = []
    for rel_path, _ in manifest.entries:
        try:
            image = load_pgm(manifest.full_path(rel_path))
            cropped, _ = auto_crop_margins(image, config.background_threshold)
            resized = resize_bilinear(cropped, config.image_size, config.image_size)
            enhanced = _enhance(config, resized)
            out_path = os.path.join(out_root, rel_path)
            os.makedirs(os.path.dirname(out_path), exist_ok=True)
            save_pgm(enhanced, out_path)
            artifacts.append(out_path)
        except (PgmError, ValueError, OSError) as exc:
            failures.append((rel_path, str(exc)))
            print(f"preprocess: skipped {rel_path}: {exc}", file=sys.stderr)
    if failures and len(failures) > 0.10 * len(manifest):
        raise DatasetError(
            f"preprocess failed on {len(failures)} of {len(manifest)} images (> 10%)"
        )
    out_manifest = scan_dataset(out_root)
    manifest_csv = os.path.join(out_root, "manifest.csv")
    manifest_to_csv(out_manifest, manifest_csv)
    artifacts.append(manifest_csv)
    print(f"preprocess: wrote {len(out_manifest)} images at {config.image_size}x"
          f"{config.image_size} under {out_root} ({len(failures)} skipped)")
    _write_run_record(config, "preprocess", {"total": time.perf_counter() - started}, artifacts)
    return 0


def cmd_fcm(config: RunConfig) -> int:
    started = time.perf_counter()
    manifest = scan_dataset(_preprocessed_dir(config))
    out_root = _fcm_dir(config)
    fcm_seed = stage_seed(config.seed, "fcm")
    artifacts = []
    summaries = []
    for index, (rel_path, _) in enumerate(manifest.entries):
        try:
            image = load_pgm(manifest.full_path(rel_path))
            fcm_config = FcmConfig(
                c=config.fcm_clusters,
                m_initial=config.fcm_m_initial,
                m_final=config.fcm_m_final,
                epsilon=config.fcm_epsilon,
                max_iter=config.fcm_max_iter,
                seed=derive_seed(fcm_seed, index),
                tau=config.fcm_tau,
            )
            label_map, result = fcm_segment(image, fcm_config)
        except ValueError as exc:
            raise DatasetError(f"fcm failed on {rel_path}: {exc}") from exc
        stem = rel_path[:-4]
        out_dir = os.path.join(out_root, os.path.dirname(rel_path))
        os.makedirs(out_dir, exist_ok=True)
        labels_path = os.path.join(out_root, f"{stem}_labels.pgm")
        save_pgm(label_map, labels_path)
        memberships_path = os.path.join(out_root, f"{stem}_U.csv")
        centroids_path = os.path.join(out_root, f"{stem}_V.csv")
        save_matrix_csv(result.memberships, memberships_path)
        save_matrix_csv(result.centroids, centroids_path)
        artifacts.extend([labels_path, memberships_path, centroids_path])
        if config.fcm_mask_enabled:
            background = int(np.argmin(result.centroids[:, 0]))
            mask = (label_map.data != background).astype(np.uint8) * 255
            mask_path = _mask_path(config, rel_path)
            save_pgm(GrayImage(label_map.width, label_map.height, mask), mask_path)
            artifacts.append(mask_path)
        summaries.append(f"{rel_path},{format_run_summary(result)}")
    summary_path = os.path.join(out_root, "summaries.csv")
    with open(summary_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("path,iterations,final_shift,converged\n")
        fh.write("\n".join(summaries) + "\n")
    artifacts.append(summary_path)
    print(f"fcm: segmented {len(manifest)} images with c={config.fcm_clusters} under {out_root}")
    _write_run_record(config, "fcm", {"total": time.perf_counter() - started}, artifacts)
    return 0


def cmd_train(config: RunConfig) -> int:
    started = time.perf_counter()
    manifest = scan_dataset(_preprocessed_dir(config))
    train_manifest, val_manifest = _split(config, manifest)
    load_started = time.perf_counter()
    train_images, train_x, train_y = _load_tensors(config, train_manifest)
    _, val_x, val_y = _load_tensors(config, val_manifest)
    load_seconds = time.perf_counter() - load_started

    network = build_deepbrainnet_mini(
        config.image_size,
        len(manifest.class_names),
        seed=stage_seed(config.seed, "init"),
        dropout_rate=config.dropout_rate,
        base_channels=config.base_channels,
    )
    train_config = TrainConfig(
        epochs=config.epochs,
        batch_size=config.batch_size,
        learning_rate=config.learning_rate,
        beta1=config.beta1,
        beta2=config.beta2,
        adam_epsilon=config.adam_epsilon,
        early_stop_patience=config.early_stop_patience,
        lr_reduce_factor=config.lr_reduce_factor,
        lr_reduce_patience=config.lr_reduce_patience,
        dropout_rate=config.dropout_rate,
        freeze_branches_epochs=config.freeze_branches_epochs,
        seed=stage_seed(config.seed, "train"),
    )
    augment_fn = None
    if config.augment_enabled:
        params = config.augment_params()
        augment_seed = stage_seed(config.seed, "augment")

        def augment_fn(index: int, epoch: int) -> np.ndarray:
            drawn = augment_image(train_images[index], params, derive_seed(augment_seed, epoch, index))
            return _to_tensor(drawn)

    history = train(network, (train_x, train_y), (val_x, val_y), train_config, augment_fn=augment_fn)

    out_dir = _train_dir(config)
    os.makedirs(out_dir, exist_ok=True)
    checkpoint_path = os.path.join(out_dir, "checkpoint.bin")
    save_checkpoint(network, checkpoint_path)
    history_path = os.path.join(out_dir, "history.csv")
    history.save_csv(history_path)
    artifacts = [checkpoint_path, f"{checkpoint_path}.layers.csv", history_path]
    print(
        f"train: {history.stopped_epoch} epochs (best {history.best_epoch}), "
        f"final train_acc={history.train_acc[-1]:.3f} val_acc={history.val_acc[-1]:.3f}; "
        f"checkpoint at {checkpoint_path}"
    )
    _write_run_record(
        config,
        "train",
        {"total": time.perf_counter() - started, "load": load_seconds},
        artifacts,
    )
    return 0


def cmd_evaluate(config: RunConfig) -> int:
    started = time.perf_counter()
    checkpoint_path = os.path.join(_train_dir(config), "checkpoint.bin")
    network = load_checkpoint(checkpoint_path)
    manifest = scan_dataset(_preprocessed_dir(config))
    if network.n_classes != len(manifest.class_names):
        raise DatasetError(
            f"checkpoint expects {network.n_classes} classes, dataset has "
            f"{len(manifest.class_names)}"
        )
    _, val_manifest = _split(config, manifest)
    _, val_x, val_y = _load_tensors(config, val_manifest)

    chunks = [predict(network, val_x[i : i + 256]) for i in range(0, val_x.shape[0], 256)]
    scores = np.vstack(chunks)
    report = classification_report(val_y, scores, class_names=manifest.class_names)
    y_pred = scores.argmax(axis=1)

    out_dir = _eval_dir(config)
    os.makedirs(out_dir, exist_ok=True)
    artifacts = []

    report_csv = os.path.join(out_dir, "report.csv")
    report_to_csv(report, report_csv)
    report_txt = os.path.join(out_dir, "report.txt")
    with open(report_txt, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report_to_text(report))
    artifacts.extend([report_csv, report_txt])

    cm = confusion_matrix(val_y, y_pred, len(manifest.class_names), manifest.class_names)
    confusion_csv_path = os.path.join(out_dir, "confusion.csv")
    confusion_to_csv(cm, confusion_csv_path)
    confusion_svg_path = os.path.join(out_dir, "confusion.svg")
    confusion_svg(cm, confusion_svg_path)
    artifacts.extend([confusion_csv_path, confusion_svg_path])

    curves = [roc_curve(scores[:, j], val_y, j) for j in range(len(manifest.class_names))]
    for name, curve in zip(manifest.class_names, curves):
        curve_path = os.path.join(out_dir, f"roc_{name}.csv")
        roc_to_csv(curve, curve_path)
        artifacts.append(curve_path)
    roc_svg_path = os.path.join(out_dir, "roc.svg")
    roc_svg(curves, manifest.class_names, roc_svg_path)
    artifacts.append(roc_svg_path)

    predictions_path = os.path.join(out_dir, "predictions.csv")
    k = len(manifest.class_names)
    header = "path,true,pred," + ",".join(f"p_{j}" for j in range(k))
    lines = [header]
    for row, (rel_path, true_idx) in enumerate(val_manifest.entries):
        probs = ",".join(f"{scores[row, j]:.17g}" for j in range(k))
        lines.append(f"{rel_path},{true_idx},{int(y_pred[row])},{probs}")
    with open(predictions_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    artifacts.append(predictions_path)

    print(report_to_text(report))
    print(f"evaluate: {len(val_manifest)} validation images, accuracy {report.accuracy:.3f}; "
          f"artifacts under {out_dir}")
    _write_run_record(config, "evaluate", {"total": time.perf_counter() - started}, artifacts)
    return 0


def cmd_report_demo() -> int:
    macros = reference_macro_metrics()
    width = max(len(row[0]) for row in REFERENCE_CLASS_METRICS) + 2
    print("Aggregation demo over the bundled published per-class metrics:")
    print(f"{'label':<{width}}{'precision':>10}{'recall':>8}{'f1-score':>10}")
    for name, precision, recall, f1 in REFERENCE_CLASS_METRICS:
        print(f"{name:<{width}}{precision:>10.3f}{recall:>8.3f}{f1:>10.3f}")
    print(
        f"{'macro avg':<{width}}{macros['macro_precision']:>10.3f}"
        f"{macros['macro_recall']:>8.3f}{macros['macro_f1']:>10.3f}"
    )
    return 0


# ---------------------------------------------------------------------------
# Argument parsing and dispatch
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deepbrainnet",
        description="Desk-scale brain-MRI classification pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("synth", "generate the 4-class synthetic PGM dataset"),
        ("preprocess", "crop, resize, and enhance every dataset image"),
        ("fcm", "fuzzy c-means segmentation of preprocessed images"),
        ("train", "train the two-branch classifier"),
        ("evaluate", "evaluate a checkpoint and emit report artifacts"),
        ("report-demo", "aggregate the bundled published per-class metrics"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", help="path to a key = value config file")
        cmd.add_argument("--seed", type=int, help="override the global seed")
        cmd.add_argument("--epochs", type=int, help="override the training epoch count")
        cmd.add_argument("--size", type=int, help="override the target image size")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = parse_config(
            args.config,
            overrides={"seed": args.seed, "epochs": args.epochs, "image_size": args.size},
        )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        if args.command == "synth":
            return cmd_synth(config)
        if args.command == "preprocess":
            return cmd_preprocess(config)
        if args.command == "fcm":
            return cmd_fcm(config)
        if args.command == "train":
            return cmd_train(config)
        if args.command == "evaluate":
            return cmd_evaluate(config)
        if args.command == "report-demo":
            return cmd_report_demo()
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NonFiniteLossError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (DatasetError, PgmError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
