"""Run configuration: flat namespaced keys, file parsing, and overrides.

Config files are plain text, one ``section.key = value`` per line; ``#``
starts a comment. Every key has a registered default except data.root, which
commands that need a dataset must receive from the file or an override.
Unknown keys are rejected by both the file parser and ``--set``.

List-valued keys (scales, widths, class names) use semicolon-separated
values. Booleans accept true/false, yes/no, 1/0.
"""

from __future__ import annotations

import os

from .data import AugmentationConfig, SyntheticConfig
from .errors import ConfigError
from .inference import InferenceConfig, PseudoLabelConfig
from .losses import AlphaSchedule
from .model import BackboneSpec

WORKERS_ENV = "PUZZLECAM_NUM_WORKERS"


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("true", "yes", "1"):
        return True
    if t in ("false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int(text):
    return int(text.strip())


def _parse_float(text):
    return float(text.strip())


def _parse_str(text):
    return text.strip()


def _parse_opt_float(text):
    t = text.strip()
    return None if t in ("", "none") else float(t)


def _parse_int_list(text):
    return tuple(int(t.strip()) for t in text.split(";") if t.strip())


def _parse_float_list(text):
    return tuple(float(t.strip()) for t in text.split(";") if t.strip())


def _parse_str_list(text):
    return tuple(t.strip() for t in text.split(";") if t.strip())


# key -> (default, parser). data.root is the single required-when-used key.
REGISTRY = {
    "data.root": ("", _parse_str),
    "data.split": ("train", _parse_str),
    "data.synthetic.num_images": (100, _parse_int),
    "data.synthetic.canvas_size": (160, _parse_int),
    "data.synthetic.shape_classes": (("circle", "triangle", "rectangle"), _parse_str_list),
    "data.synthetic.shapes_min": (1, _parse_int),
    "data.synthetic.shapes_max": (3, _parse_int),
    "data.synthetic.noise_level": (0.04, _parse_float),
    "data.synthetic.seed": (0, _parse_int),
    "run.seed": (0, _parse_int),
    "run.checkpoint": ("", _parse_str),
    "train.epochs": (15, _parse_int),
    "train.batch_size": (8, _parse_int),
    "train.learning_rate": (0.01, _parse_float),
    "train.weight_decay": (1e-4, _parse_float),
    "train.momentum": (0.9, _parse_float),
    "train.poly_power": (0.9, _parse_float),
    "train.alpha_max": (4.0, _parse_float),
    "train.ramp_end_fraction": (0.5, _parse_float),
    "train.enable_p_cls": (True, _parse_bool),
    "train.enable_re": (True, _parse_bool),
    "train.log_interval": (10, _parse_int),
    "train.rescale_min": (80, _parse_int),
    "train.rescale_max": (160, _parse_int),
    "train.crop_size": (128, _parse_int),
    "train.hflip_prob": (0.5, _parse_float),
    "train.backbone": ("tiny_cnn", _parse_str),
    "train.widths": ((16, 32, 64), _parse_int_list),
    "infer.scales": ((0.5, 1.0, 1.5, 2.0), _parse_float_list),
    "infer.use_hflip": (True, _parse_bool),
    "infer.restrict_to_image_labels": (True, _parse_bool),
    "pseudo.threshold": (0.25, _parse_float),
    "pseudo.ignore_low": (None, _parse_opt_float),
    "pseudo.ignore_high": (None, _parse_opt_float),
}


class RunConfig:
    """Resolved key/value store backed by the registry defaults."""

    def __init__(self, values=None):
        self.values = {key: default for key, (default, _) in REGISTRY.items()}
        if values:
            self.values.update(values)

    def get(self, key):
        if key not in self.values:
            raise ConfigError(f"unknown config key {key!r}")
        return self.values[key]

    def set_from_text(self, key, text):
        if key not in REGISTRY:
            raise ConfigError(f"unknown config key {key!r}")
        _, parser = REGISTRY[key]
        try:
            self.values[key] = parser(text)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from exc

    def require_dataset_root(self) -> str:
        root = self.get("data.root")
        if not root:
            raise ConfigError("data.root is not set (point it at a dataset directory)")
        return root

    # -- domain config builders -------------------------------------------

    def to_augmentation_config(self) -> AugmentationConfig:
        return AugmentationConfig(
            rescale_range=(self.get("train.rescale_min"), self.get("train.rescale_max")),
            crop_size=self.get("train.crop_size"),
            hflip_prob=self.get("train.hflip_prob"),
        )

    def to_alpha_schedule(self) -> AlphaSchedule:
        return AlphaSchedule(
            alpha_max=self.get("train.alpha_max"),
            ramp_end_fraction=self.get("train.ramp_end_fraction"),
        )

    def to_backbone_spec(self) -> BackboneSpec:
        return BackboneSpec(kind=self.get("train.backbone"), widths=self.get("train.widths"))

    def to_train_config(self, out_dir, deterministic=False):
        from .train import TrainConfig

        return TrainConfig(
            epochs=self.get("train.epochs"),
            batch_size=self.get("train.batch_size"),
            learning_rate=self.get("train.learning_rate"),
            weight_decay=self.get("train.weight_decay"),
            momentum=self.get("train.momentum"),
            poly_power=self.get("train.poly_power"),
            alpha=self.to_alpha_schedule(),
            augmentation=self.to_augmentation_config(),
            backbone=self.to_backbone_spec(),
            enable_p_cls=self.get("train.enable_p_cls"),
            enable_re=self.get("train.enable_re"),
            seed=self.get("run.seed"),
            out_dir=str(out_dir),
            log_interval=self.get("train.log_interval"),
            deterministic=deterministic,
        )

    def to_inference_config(self) -> InferenceConfig:
        return InferenceConfig(
            scales=self.get("infer.scales"),
            use_hflip=self.get("infer.use_hflip"),
            restrict_to_image_labels=self.get("infer.restrict_to_image_labels"),
        )

    def to_pseudo_config(self) -> PseudoLabelConfig:
        lo = self.get("pseudo.ignore_low")
        hi = self.get("pseudo.ignore_high")
        if (lo is None) != (hi is None):
            raise ConfigError("pseudo.ignore_low and pseudo.ignore_high must be set together")
        return PseudoLabelConfig(
            threshold=self.get("pseudo.threshold"),
            ignore_band=None if lo is None else (lo, hi),
        )

    def to_synthetic_config(self) -> SyntheticConfig:
        return SyntheticConfig(
            num_images=self.get("data.synthetic.num_images"),
            canvas_size=self.get("data.synthetic.canvas_size"),
            shape_classes=self.get("data.synthetic.shape_classes"),
            shapes_per_image=(self.get("data.synthetic.shapes_min"), self.get("data.synthetic.shapes_max")),
            noise_level=self.get("data.synthetic.noise_level"),
            seed=self.get("data.synthetic.seed"),
        )

    # -- serialization -------------------------------------------------------

    def snapshot_text(self) -> str:
        """All keys, sorted, in the file format; parse(snapshot) reproduces self."""
        lines = []
        for key in sorted(self.values):
            lines.append(f"{key} = {format_value(self.values[key])}")
        return "\n".join(lines) + "\n"

    def write_snapshot(self, out_dir) -> str:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "resolved_config.cfg")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.snapshot_text())
        return path


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ";".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_text(text, source="<config>") -> RunConfig:
    config = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value', got {raw!r}")
        key, _, value = line.partition("=")
        try:
            config.set_from_text(key.strip(), value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from exc
    return config


def load_config_file(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config_text(text, source=str(path))


def apply_overrides(config: RunConfig, assignments) -> RunConfig:
    """Apply --set key=value pairs in order."""
    for raw in assignments or ():
        if "=" not in raw:
            raise ConfigError(f"--set expects key=value, got {raw!r}")
        key, _, value = raw.partition("=")
        config.set_from_text(key.strip(), value)
    return config


def num_workers() -> int:
    """Worker cap from the environment; this implementation runs one worker.

    The variable is validated and honored as an upper bound, so any value
    >= 1 yields 1 here.
    """
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return 1
    try:
        value = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
    if value < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1, got {value}")
    return min(value, 1)
