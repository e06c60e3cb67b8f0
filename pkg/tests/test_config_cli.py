"""Config registry, file parsing, overrides, and the CLI subcommands."""

import json
import os

import numpy as np
import pytest

from puzzlecam.cli import main
from puzzlecam.config import (
    REGISTRY,
    WORKERS_ENV,
    RunConfig,
    apply_overrides,
    format_value,
    load_config_file,
    num_workers,
    parse_config_text,
)
from puzzlecam.errors import ConfigError
from puzzlecam.model import BackboneSpec, Classifier

# -- registry and parsing ---------------------------------------------------------


def test_defaults_cover_every_key():
    config = RunConfig()
    for key in REGISTRY:
        config.get(key)  # raises on a gap
    assert config.get("train.epochs") == 15
    assert config.get("train.batch_size") == 8
    assert config.get("pseudo.threshold") == 0.25
    assert config.get("infer.scales") == (0.5, 1.0, 1.5, 2.0)
    assert config.get("data.split") == "train"
    assert config.get("pseudo.ignore_low") is None


def test_unknown_key_rejected():
    config = RunConfig()
    with pytest.raises(ConfigError, match="unknown config key"):
        config.get("train.no_such_knob")
    with pytest.raises(ConfigError, match="unknown config key"):
        config.set_from_text("train.no_such_knob", "1")


def test_value_parsers():
    config = RunConfig()
    config.set_from_text("train.epochs", " 3 ")
    assert config.get("train.epochs") == 3
    config.set_from_text("train.learning_rate", "2.5e-2")
    assert config.get("train.learning_rate") == 0.025
    for text, want in (("true", True), ("YES", True), ("1", True),
                       ("false", False), ("no", False), ("0", False)):
        config.set_from_text("infer.use_hflip", text)
        assert config.get("infer.use_hflip") is want
    config.set_from_text("train.widths", "4; 8 ;16")
    assert config.get("train.widths") == (4, 8, 16)
    config.set_from_text("infer.scales", "1.0;2.0")
    assert config.get("infer.scales") == (1.0, 2.0)
    config.set_from_text("data.synthetic.shape_classes", "a;b ; c")
    assert config.get("data.synthetic.shape_classes") == ("a", "b", "c")
    config.set_from_text("pseudo.ignore_low", "0.4")
    assert config.get("pseudo.ignore_low") == 0.4
    config.set_from_text("pseudo.ignore_low", "none")
    assert config.get("pseudo.ignore_low") is None


def test_bad_value_names_the_key():
    config = RunConfig()
    with pytest.raises(ConfigError, match="train.epochs"):
        config.set_from_text("train.epochs", "three")
    with pytest.raises(ConfigError, match="not a boolean"):
        config.set_from_text("infer.use_hflip", "maybe")


def test_parse_config_text_full_form():
    text = "\n".join(
        [
            "# a comment line",
            "",
            "train.epochs = 2   # trailing comment",
            "infer.scales = 1.0;1.5",
            "data.root = /data/shapes",
        ]
    )
    config = parse_config_text(text)
    assert config.get("train.epochs") == 2
    assert config.get("infer.scales") == (1.0, 1.5)
    assert config.get("data.root") == "/data/shapes"


def test_parse_errors_carry_source_and_line():
    with pytest.raises(ConfigError, match=r"demo.cfg:3.*expected 'section.key = value'"):
        parse_config_text("# ok\n\njust words\n", source="demo.cfg")
    with pytest.raises(ConfigError, match=r"demo.cfg:2.*unknown config key"):
        parse_config_text("train.epochs = 1\nnope.key = 2\n", source="demo.cfg")


def test_load_config_file_missing(tmp_path):
    with pytest.raises(ConfigError, match="cannot read config file"):
        load_config_file(tmp_path / "absent.cfg")


def test_snapshot_round_trips_every_value(tmp_path):
    config = RunConfig()
    config.set_from_text("train.learning_rate", "0.007")
    config.set_from_text("train.widths", "4;8")
    config.set_from_text("infer.use_hflip", "false")
    config.set_from_text("pseudo.ignore_low", "0.35")
    config.set_from_text("pseudo.ignore_high", "0.55")
    config.set_from_text("data.root", "/somewhere")
    path = config.write_snapshot(tmp_path)
    assert os.path.basename(path) == "resolved_config.cfg"
    reloaded = load_config_file(path)
    assert reloaded.values == config.values
    # snapshots are themselves snapshot-stable
    assert reloaded.snapshot_text() == config.snapshot_text()


def test_format_value_forms():
    assert format_value(None) == "none"
    assert format_value(True) == "true"
    assert format_value(False) == "false"
    assert format_value((1, 2, 3)) == "1;2;3"
    assert format_value(0.1) == "0.1"
    assert format_value("text") == "text"


def test_apply_overrides_order_and_errors():
    config = RunConfig()
    apply_overrides(config, ["train.epochs=9", "train.epochs=4"])
    assert config.get("train.epochs") == 4
    with pytest.raises(ConfigError, match="key=value"):
        apply_overrides(config, ["train.epochs"])
    with pytest.raises(ConfigError, match="unknown config key"):
        apply_overrides(config, ["definitely.not=1"])


def test_require_dataset_root():
    config = RunConfig()
    with pytest.raises(ConfigError, match="data.root"):
        config.require_dataset_root()
    config.set_from_text("data.root", "/data")
    assert config.require_dataset_root() == "/data"


def test_pseudo_band_needs_both_ends():
    config = RunConfig()
    assert config.to_pseudo_config().ignore_band is None
    config.set_from_text("pseudo.ignore_low", "0.3")
    with pytest.raises(ConfigError, match="together"):
        config.to_pseudo_config()
    config.set_from_text("pseudo.ignore_high", "0.6")
    assert config.to_pseudo_config().ignore_band == (0.3, 0.6)


def test_domain_builders_mirror_registry_values():
    config = RunConfig()
    config.set_from_text("train.rescale_min", "64")
    config.set_from_text("train.rescale_max", "96")
    config.set_from_text("train.crop_size", "80")
    config.set_from_text("train.widths", "4;8;16")
    config.set_from_text("train.alpha_max", "2.0")
    aug = config.to_augmentation_config()
    assert aug.rescale_range == (64, 96) and aug.crop_size == 80
    assert config.to_backbone_spec().widths == (4, 8, 16)
    assert config.to_alpha_schedule().alpha_max == 2.0
    tc = config.to_train_config("/tmp/out", deterministic=True)
    assert tc.out_dir == "/tmp/out" and tc.deterministic
    assert tc.backbone.widths == (4, 8, 16)
    assert config.to_synthetic_config().num_images == config.get("data.synthetic.num_images")
    assert config.to_inference_config().scales == config.get("infer.scales")


def test_num_workers_env(monkeypatch):
    monkeypatch.delenv(WORKERS_ENV, raising=False)
    assert num_workers() == 1
    monkeypatch.setenv(WORKERS_ENV, "1")
    assert num_workers() == 1
    monkeypatch.setenv(WORKERS_ENV, "8")
    assert num_workers() == 1  # honored as an upper bound
    monkeypatch.setenv(WORKERS_ENV, "0")
    with pytest.raises(ConfigError, match="must be >= 1"):
        num_workers()
    monkeypatch.setenv(WORKERS_ENV, "many")
    with pytest.raises(ConfigError, match="integer"):
        num_workers()


# -- CLI --------------------------------------------------------------------------

TINY_TRAIN = [
    "--set", "data.synthetic.num_images=6",
    "--set", "data.synthetic.canvas_size=48",
    "--set", "train.epochs=1",
    "--set", "train.batch_size=2",
    "--set", "train.crop_size=32",
    "--set", "train.rescale_min=32",
    "--set", "train.rescale_max=48",
    "--set", "train.widths=4;8",
    "--set", "train.log_interval=1",
    "--set", "infer.scales=1.0",
]


def test_cli_usage_errors_exit_1(capsys):
    assert main([]) == 1
    assert "usage error" in capsys.readouterr().err
    assert main(["train", "--no-such-flag"]) == 1
    assert main(["frobnicate"]) == 1


def test_cli_config_errors_exit_1(capsys):
    assert main(["train", "--set", "bogus.key=1"]) == 1
    assert "config error" in capsys.readouterr().err
    assert main(["train", "--set", "train.epochs=three"]) == 1


def test_cli_runtime_errors_exit_2(tmp_path, capsys):
    code = main(["eval", "--pred", str(tmp_path / "preds"),
                 "--set", "data.root=/no/such/dataset", "--out", str(tmp_path / "out")])
    assert code == 2
    assert "error" in capsys.readouterr().err


def test_cli_make_synthetic(tmp_path, capsys):
    out = tmp_path / "ds"
    code = main(["make-synthetic", "--out", str(out),
                 "--set", "data.synthetic.num_images=4",
                 "--set", "data.synthetic.canvas_size=48"])
    assert code == 0
    assert "generated 4 images" in capsys.readouterr().out
    assert (out / "train.csv").is_file()
    assert (out / "classes.txt").is_file()
    assert (out / "resolved_config.cfg").is_file()
    assert len(list((out / "images").iterdir())) == 4
    assert len(list((out / "masks").iterdir())) == 4


def test_cli_train_snapshot_reproduces_run(tmp_path):
    run1 = tmp_path / "run1"
    args = ["train", "--out", str(run1), "--deterministic",
            "--set", "data.synthetic.seed=7", "--seed", "3"] + TINY_TRAIN
    assert main(args) == 0

    # rerun purely from the written snapshot: same logs, same weights
    run2 = tmp_path / "run2"
    snapshot = run1 / "resolved_config.cfg"
    assert main(["train", "--config", str(snapshot), "--out", str(run2),
                 "--deterministic"]) == 0
    log1 = (run1 / "train_log.ndjson").read_bytes()
    log2 = (run2 / "train_log.ndjson").read_bytes()
    assert log1 == log2 and log1
    ckpt1 = (run1 / "checkpoint_final.pzck").read_bytes()
    ckpt2 = (run2 / "checkpoint_final.pzck").read_bytes()
    assert ckpt1 == ckpt2

    # the snapshot recorded the overrides themselves
    text = snapshot.read_text(encoding="utf-8")
    assert "data.synthetic.seed = 7" in text
    assert "run.seed = 3" in text


def test_cli_infer_pseudo_eval_pipeline(tmp_path, micro_dataset, capsys):
    ckpt = str(tmp_path / "model.pzck")
    Classifier(BackboneSpec(widths=(4, 8)), micro_dataset.num_classes, seed=2).save_checkpoint(ckpt)
    root_flag = f"data.root={micro_dataset.root}"

    infer_out = tmp_path / "infer"
    assert main(["infer", "--checkpoint", ckpt, "--out", str(infer_out),
                 "--set", root_flag, "--set", "infer.scales=1.0"]) == 0
    cam_dir = infer_out / "cams"
    assert len(list(cam_dir.glob("*.pcam"))) == len(micro_dataset.items)

    pseudo_out = tmp_path / "pseudo"
    assert main(["pseudo", "--cams", str(cam_dir), "--out", str(pseudo_out),
                 "--set", root_flag]) == 0
    label_dir = pseudo_out / "pseudo"
    assert len(list(label_dir.glob("*.png"))) == len(micro_dataset.items)

    eval_out = tmp_path / "eval"
    assert main(["eval", "--pred", str(label_dir), "--out", str(eval_out),
                 "--set", root_flag]) == 0
    out_text = capsys.readouterr().out
    assert "mean IoU" in out_text
    report = json.loads((eval_out / "miou.json").read_text(encoding="utf-8"))
    assert 0.0 <= report["mean_iou"] <= 1.0
    assert len(report["per_class_iou"]) == micro_dataset.num_classes + 1
    assert (eval_out / "miou_report.txt").is_file()


def test_cli_pseudo_missing_cam_exits_2(tmp_path, micro_dataset, capsys):
    code = main(["pseudo", "--cams", str(tmp_path / "empty"),
                 "--out", str(tmp_path / "out"),
                 "--set", f"data.root={micro_dataset.root}"])
    assert code == 2
    assert "missing CAM file" in capsys.readouterr().err


def test_cli_visualize(tmp_path, micro_dataset, capsys):
    ckpt = str(tmp_path / "model.pzck")
    Classifier(BackboneSpec(widths=(4, 8)), micro_dataset.num_classes, seed=2).save_checkpoint(ckpt)
    image_path = micro_dataset.items[0].image_path
    out = tmp_path / "viz"
    assert main(["visualize", "--checkpoint", ckpt, "--out", str(out),
                 "--set", "infer.scales=1.0", image_path]) == 0
    files = sorted(p.name for p in out.glob("*.png"))
    image_id = os.path.splitext(os.path.basename(image_path))[0]
    assert files == [f"{image_id}_final.png", f"{image_id}_single.png", f"{image_id}_tiled.png"]

    # a run where every input fails is a runtime error, not a silent success
    code = main(["visualize", "--checkpoint", ckpt, "--out", str(out),
                 str(tmp_path / "missing.png")])
    assert code == 2
    err = capsys.readouterr().err
    assert "skipping" in err


def test_cli_ablate_writes_table(tmp_path, capsys):
    out = tmp_path / "ablate"
    assert main(["ablate", "--out", str(out), "--deterministic",
                 "--set", "data.synthetic.seed=2"] + TINY_TRAIN) == 0
    stdout = capsys.readouterr().out
    table = json.loads((out / "ablation.json").read_text(encoding="utf-8"))
    assert [row["row"] for row in table] == ["cls", "cls+p_cls", "cls+re", "cls+p_cls+re"]
    for row in table:
        assert 0.0 <= row["miou"] <= 1.0
        assert row["row"] in stdout
    hashes = {row["config_hash"] for row in table}
    assert len(hashes) == 4


def test_cli_worker_env_validated_in_commands(tmp_path, monkeypatch, micro_dataset, capsys):
    monkeypatch.setenv(WORKERS_ENV, "zero")
    ckpt = str(tmp_path / "model.pzck")
    Classifier(BackboneSpec(widths=(4, 8)), micro_dataset.num_classes, seed=2).save_checkpoint(ckpt)
    code = main(["infer", "--checkpoint", ckpt, "--out", str(tmp_path / "o"),
                 "--set", f"data.root={micro_dataset.root}"])
    assert code == 1
    assert "config error" in capsys.readouterr().err
