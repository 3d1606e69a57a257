import hashlib
import os

import numpy as np
import pytest

from deepbrainnet import cli
from deepbrainnet.config import ConfigError, parse_config
from deepbrainnet.dataio import GrayImage, load_pgm, save_pgm
from deepbrainnet.fcm import load_matrix_csv
from deepbrainnet.rng import Prng


def write_config(path, **overrides):
    defaults = dict(
        image_size=32,
        synth_per_class=4,
        epochs=4,
        batch_size=8,
        learning_rate=0.005,
        dropout_rate=0.0,
        augment_enabled="false",
        seed=11,
    )
    defaults.update(overrides)
    lines = [f"{key} = {value}" for key, value in defaults.items()]
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def run(*args):
    return cli.main(list(args))


@pytest.fixture()
def workspace(tmp_path):
    cfg = write_config(
        tmp_path / "run.cfg",
        dataset_root=tmp_path / "dataset",
        output_dir=tmp_path / "out",
    )
    return tmp_path, cfg


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------


def test_defaults_without_file():
    config = parse_config(None)
    assert config.image_size == 224
    assert config.epochs == 40
    assert config.batch_size == 32
    assert config.enhancement == ("blur", "clahe")
    assert config.train_fraction == 0.8


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("no_such_key = 1\n")
    with pytest.raises(ConfigError, match="no_such_key"):
        parse_config(path)


def test_bad_value_rejected(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("epochs = soon\n")
    with pytest.raises(ConfigError):
        parse_config(path)


def test_comments_and_blanks_ignored(tmp_path):
    path = tmp_path / "ok.cfg"
    path.write_text("# a comment\n\nepochs = 7  # trailing\n")
    assert parse_config(path).epochs == 7


def test_enhancement_list_parsing(tmp_path):
    path = tmp_path / "ok.cfg"
    path.write_text("enhancement = clahe,blur\n")
    assert parse_config(path).enhancement == ("clahe", "blur")
    path.write_text("enhancement = none\n")
    assert parse_config(path).enhancement == ()
    path.write_text("enhancement = sharpen\n")
    with pytest.raises(ConfigError):
        parse_config(path)


def test_overrides_take_precedence(tmp_path):
    path = tmp_path / "ok.cfg"
    path.write_text("epochs = 7\nseed = 3\n")
    config = parse_config(path, overrides={"epochs": 9, "seed": None})
    assert config.epochs == 9
    assert config.seed == 3


def test_validation_catches_bad_combos(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("blur_kernel = 4\n")
    with pytest.raises(ConfigError):
        parse_config(path)


# ---------------------------------------------------------------------------
# synth + preprocess
# ---------------------------------------------------------------------------


def test_synth_writes_counted_dataset(workspace):
    tmp_path, cfg = workspace
    assert run("synth", "--config", cfg) == 0
    classes = sorted(os.listdir(tmp_path / "dataset"))
    assert classes == ["blank", "blob", "ring", "stripe"]
    total = sum(len(os.listdir(tmp_path / "dataset" / c)) for c in classes)
    assert total == 16


def test_preprocess_outputs_match_target_size(workspace):
    tmp_path, cfg = workspace
    run("synth", "--config", cfg)
    assert run("preprocess", "--config", cfg) == 0
    out_root = tmp_path / "out" / "preprocessed"
    images = sorted(out_root.rglob("*.pgm"))
    assert len(images) == 16
    for path in images:
        image = load_pgm(path)
        assert (image.width, image.height) == (32, 32)
    assert (out_root / "manifest.csv").exists()


def test_preprocess_empty_enhancement_is_crop_resize_only(tmp_path):
    from deepbrainnet.imaging import auto_crop_margins, resize_bilinear

    cfg = write_config(
        tmp_path / "run.cfg",
        dataset_root=tmp_path / "dataset",
        output_dir=tmp_path / "out",
        enhancement="",
    )
    run("synth", "--config", cfg)
    assert run("preprocess", "--config", cfg) == 0
    rel = "blob/blob_000.pgm"
    source = load_pgm(tmp_path / "dataset" / rel)
    cropped, _ = auto_crop_margins(source, 10)
    expected = resize_bilinear(cropped, 32, 32)
    assert load_pgm(tmp_path / "out" / "preprocessed" / rel) == expected


def test_preprocess_reruns_byte_identically(workspace):
    tmp_path, cfg = workspace
    run("synth", "--config", cfg)
    run("preprocess", "--config", cfg)
    first = {
        p.relative_to(tmp_path / "out"): p.read_bytes()
        for p in (tmp_path / "out" / "preprocessed").rglob("*")
        if p.is_file()
    }
    run("preprocess", "--config", cfg)
    for p, blob in first.items():
        assert (tmp_path / "out" / p).read_bytes() == blob


def test_preprocess_skips_bad_files_up_to_threshold(workspace, capsys):
    tmp_path, cfg = workspace
    run("synth", "--config", cfg)
    # corrupt one of 16 files (6% failure rate, below the 10% abort threshold)
    victim = next((tmp_path / "dataset" / "blob").glob("*.pgm"))
    victim.write_bytes(b"P5 trash")
    assert run("preprocess", "--config", cfg) == 0
    err = capsys.readouterr().err
    assert "skipped" in err
    images = list((tmp_path / "out" / "preprocessed").rglob("*.pgm"))
    assert len(images) == 15


def test_preprocess_aborts_over_failure_threshold(workspace):
    tmp_path, cfg = workspace
    run("synth", "--config", cfg)
    for victim in list((tmp_path / "dataset" / "blob").glob("*.pgm"))[:3]:
        victim.write_bytes(b"P5 trash")
    assert run("preprocess", "--config", cfg) == 2


def test_missing_dataset_is_data_error(workspace):
    _, cfg = workspace
    assert run("preprocess", "--config", cfg) == 2


def test_bad_config_is_usage_error(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("epochs = -2\n")
    assert run("train", "--config", str(path)) == 1


# ---------------------------------------------------------------------------
# fcm stage
# ---------------------------------------------------------------------------


def kmeans_partition(values, centers, iters=200):
    centers = list(centers)
    for _ in range(iters):
        assign = [0 if abs(v - centers[0]) <= abs(v - centers[1]) else 1 for v in values]
        new = []
        for j in range(2):
            members = [v for v, a in zip(values, assign) if a == j]
            new.append(float(np.mean(members)) if members else centers[j])
        if new == centers:
            break
        centers = new
    return assign


def test_fcm_masks_bilevel_image(tmp_path):
    # hand-built two-class dataset of bi-level images
    cfg = write_config(
        tmp_path / "run.cfg",
        dataset_root=tmp_path / "dataset",
        output_dir=tmp_path / "out",
        fcm_mask_enabled="true",
        fcm_clusters=2,
    )
    rng = Prng(5)
    for class_name in ("dark", "lit"):
        os.makedirs(tmp_path / "out" / "preprocessed" / class_name)
        for i in range(2):
            base = 200 if class_name == "lit" else 0
            data = [
                (base if rng.coin() else 30) for _ in range(16 * 16)
            ]
            save_pgm(
                GrayImage(16, 16, data),
                tmp_path / "out" / "preprocessed" / class_name / f"{class_name}_{i}.pgm",
            )
    assert run("fcm", "--config", str(tmp_path / "run.cfg")) == 0

    out_root = tmp_path / "out" / "fcm"
    labels = load_pgm(out_root / "lit" / "lit_0_labels.pgm")
    source = load_pgm(tmp_path / "out" / "preprocessed" / "lit" / "lit_0.pgm")
    centroids = load_matrix_csv(out_root / "lit" / "lit_0_V.csv").ravel()
    km = kmeans_partition(source.data.ravel().astype(float).tolist(), sorted(centroids))
    mine = labels.data.ravel()
    # same partition up to label swap
    agreement = (mine == np.array(km)).mean()
    assert agreement in (0.0, 1.0)

    mask = load_pgm(out_root / "lit" / "lit_0_mask.pgm")
    assert set(np.unique(mask.data)) <= {0, 255}
    # mask keeps exactly the bright population
    bright = source.data == 200
    assert np.array_equal(mask.data == 255, bright)


def test_fcm_uniform_mask_for_single_cluster(tmp_path):
    cfg = write_config(
        tmp_path / "run.cfg",
        dataset_root=tmp_path / "dataset",
        output_dir=tmp_path / "out",
        fcm_clusters=1,
    )
    run("synth", "--config", cfg)
    run("preprocess", "--config", cfg)
    assert run("fcm", "--config", cfg) == 0
    label_files = list((tmp_path / "out" / "fcm").rglob("*_labels.pgm"))
    assert label_files
    for path in label_files:
        assert set(np.unique(load_pgm(path).data)) == {0}


def test_fcm_summary_has_one_line_per_image(workspace):
    tmp_path, cfg = workspace
    run("synth", "--config", cfg)
    run("preprocess", "--config", cfg)
    assert run("fcm", "--config", cfg) == 0
    lines = (tmp_path / "out" / "fcm" / "summaries.csv").read_text().strip().splitlines()
    assert lines[0] == "path,iterations,final_shift,converged"
    assert len(lines) - 1 == 16


# ---------------------------------------------------------------------------
# train + evaluate
# ---------------------------------------------------------------------------


def pipeline(tmp_path, **overrides):
    os.makedirs(tmp_path, exist_ok=True)
    cfg = write_config(
        tmp_path / "run.cfg",
        dataset_root=tmp_path / "dataset",
        output_dir=tmp_path / "out",
        **overrides,
    )
    for command in ("synth", "preprocess", "train", "evaluate"):
        assert run(command, "--config", cfg) == 0, command
    return tmp_path / "out", cfg


def test_full_pipeline_emits_artifacts(tmp_path):
    out, _ = pipeline(tmp_path)
    history = (out / "train" / "history.csv").read_text().strip().splitlines()
    assert history[0] == "epoch,train_loss,train_acc,val_loss,val_acc,lr"
    assert 1 <= len(history) - 1 <= 4
    assert (out / "train" / "checkpoint.bin").exists()
    assert (out / "eval" / "report.csv").exists()
    assert (out / "eval" / "report.txt").exists()
    assert (out / "eval" / "confusion.csv").exists()
    assert (out / "eval" / "confusion.svg").exists()
    assert (out / "eval" / "roc.svg").exists()
    svg = (out / "eval" / "roc.svg").read_text()
    assert svg.count("<polyline") == 4
    predictions = (out / "eval" / "predictions.csv").read_text().strip().splitlines()
    assert predictions[0] == "path,true,pred,p_0,p_1,p_2,p_3"
    assert len(predictions) - 1 == 4  # one per validation image


def test_augmentation_changes_history(tmp_path):
    out_a, cfg = pipeline(tmp_path, epochs=3)
    baseline = (out_a / "train" / "history.csv").read_text()
    cfg_aug = write_config(
        tmp_path / "aug.cfg",
        dataset_root=tmp_path / "dataset",
        output_dir=tmp_path / "out_aug",
        epochs=3,
        augment_enabled="true",
    )
    assert run("preprocess", "--config", cfg_aug) == 0
    assert run("train", "--config", cfg_aug) == 0
    augmented = (tmp_path / "out_aug" / "train" / "history.csv").read_text()
    assert augmented != baseline


def test_evaluate_is_rerunnable_and_deterministic(tmp_path):
    out, cfg = pipeline(tmp_path)
    first = {
        name: (out / "eval" / name).read_bytes()
        for name in os.listdir(out / "eval")
        if name.endswith(".csv")
    }
    assert run("evaluate", "--config", cfg) == 0
    for name, blob in first.items():
        assert (out / "eval" / name).read_bytes() == blob


def test_two_runs_identical_seed_identical_artifacts(tmp_path):
    out1, _ = pipeline(tmp_path / "one")
    out2, _ = pipeline(tmp_path / "two")
    for rel in (
        "preprocessed/manifest.csv",
        "train/history.csv",
        "train/checkpoint.bin",
        "eval/report.csv",
        "eval/predictions.csv",
    ):
        assert (out1 / rel).read_bytes() == (out2 / rel).read_bytes(), rel


def test_run_record_digests_verify(tmp_path):
    out, cfg = pipeline(tmp_path)
    record = (out / "runrecord_evaluate.txt").read_text().strip().splitlines()
    assert record[0] == "command: evaluate"
    assert any(line.startswith("tool_version: ") for line in record)
    assert any(line.startswith("duration_s.total: ") for line in record)
    digests = [line.split(" ", 2) for line in record if line.startswith("artifact: ")]
    assert digests
    for _, digest, rel in digests:
        blob = (out / rel.strip()).read_bytes()
        assert hashlib.sha256(blob).hexdigest() == digest


def test_evaluate_rejects_class_count_mismatch(tmp_path):
    out, cfg = pipeline(tmp_path)
    # drop two classes from the preprocessed tree -> checkpoint expects 4
    import shutil

    shutil.rmtree(out / "preprocessed" / "blank")
    shutil.rmtree(out / "preprocessed" / "blob")
    assert run("evaluate", "--config", cfg) == 2


def test_diverging_training_is_numeric_failure(tmp_path):
    cfg = write_config(
        tmp_path / "run.cfg",
        dataset_root=tmp_path / "dataset",
        output_dir=tmp_path / "out",
        learning_rate=1e30,
        epochs=6,
    )
    assert run("synth", "--config", cfg) == 0
    assert run("preprocess", "--config", cfg) == 0
    assert run("train", "--config", cfg) == 3


def test_cli_seed_override_changes_artifacts(tmp_path):
    cfg = write_config(
        tmp_path / "run.cfg",
        dataset_root=tmp_path / "dataset",
        output_dir=tmp_path / "out",
    )
    assert run("synth", "--config", cfg) == 0
    first = next((tmp_path / "dataset" / "blob").glob("*.pgm")).read_bytes()
    assert run("synth", "--config", cfg, "--seed", "99") == 0
    second = next((tmp_path / "dataset" / "blob").glob("*.pgm")).read_bytes()
    assert first != second


# ---------------------------------------------------------------------------
# report-demo
# ---------------------------------------------------------------------------


def test_report_demo_prints_reference_macros(capsys):
    assert run("report-demo") == 0
    out = capsys.readouterr().out
    assert "Glioma tumor" in out
    assert "Pituitary tumor" in out
    assert "macro avg" in out
    assert "0.886" in out  # macro f1 at three decimals


def test_reference_macros_match_hand_mean():
    macros = cli.reference_macro_metrics()
    assert macros["macro_f1"] == pytest.approx((0.923 + 0.808 + 0.909 + 0.905) / 4)
    assert macros["macro_precision"] == pytest.approx((0.914 + 0.819 + 0.946 + 0.868) / 4)
    assert macros["macro_recall"] == pytest.approx((0.932 + 0.798 + 0.875 + 0.945) / 4)
