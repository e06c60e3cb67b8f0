"""Training loop: shared-weight single and tiled passes under one total loss.

Each step samples a batch, augments it, runs the single-image path and (when
any tiled term is enabled) the quadrant-tiled path with the same weights,
normalizes and label-masks both CAM stacks, and descends the combined loss

    total = cls + p_cls + alpha * re

with stochastic gradient descent (momentum, weight decay on non-bias
parameters, polynomial learning-rate decay). Progress is logged as
newline-delimited JSON records; the final parameters land in a checkpoint.
Runs are deterministic given the seed: one worker, fixed rng call order.

run_ablation retrains the loss-toggle rows on identical seeds and scores each
trained model's pseudo-labels against the dataset masks, mirroring the
four-row loss ablation layout.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .data import AugmentationConfig, DatasetDescriptor, augment, hwc_to_chw, load_image
from .errors import ContractError, DivergenceError
from .losses import (
    AlphaSchedule,
    LossBreakdown,
    alpha_at,
    cls_loss_graph,
    normalize_graph,
    re_loss_graph,
    total_loss,
)
from .model import BackboneSpec, Classifier

DIVERGENCE_CEILING = 1e4


@dataclass(frozen=True)
class TrainConfig:
    """Everything one training run needs besides the dataset itself."""

    epochs: int = 15
    batch_size: int = 8
    learning_rate: float = 0.01
    weight_decay: float = 1e-4
    momentum: float = 0.9
    poly_power: float = 0.9
    alpha: AlphaSchedule = field(default_factory=AlphaSchedule)
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    backbone: BackboneSpec = field(default_factory=BackboneSpec)
    enable_p_cls: bool = True
    enable_re: bool = True
    seed: int = 0
    out_dir: str = "runs/default"
    log_interval: int = 10
    deterministic: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ContractError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ContractError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ContractError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.log_interval < 1:
            raise ContractError(f"log_interval must be >= 1, got {self.log_interval}")
        for name in ("weight_decay", "momentum", "poly_power"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.momentum >= 1:
            raise ContractError(f"momentum must be < 1, got {self.momentum}")


@dataclass(frozen=True)
class TrainLogRecord:
    """One logged step; serializes to a single JSON line with fixed key order."""

    step: int
    epoch: int
    loss: LossBreakdown
    lr: float
    wall_time: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "step": self.step,
                "epoch": self.epoch,
                "cls": self.loss.cls,
                "p_cls": self.loss.p_cls,
                "re": self.loss.re,
                "alpha": self.loss.alpha,
                "total": self.loss.total,
                "lr": self.lr,
                "wall_time": self.wall_time,
            }
        )

    @staticmethod
    def from_json(line: str) -> "TrainLogRecord":
        obj = json.loads(line)
        loss = LossBreakdown(
            cls=obj["cls"], p_cls=obj["p_cls"], re=obj["re"], alpha=obj["alpha"], total=obj["total"]
        )
        return TrainLogRecord(
            step=obj["step"], epoch=obj["epoch"], loss=loss, lr=obj["lr"], wall_time=obj["wall_time"]
        )


@dataclass(frozen=True)
class TrainOutcome:
    """Artifacts of one run: where the checkpoint and log live, plus the records."""

    checkpoint_path: str
    log_path: str
    records: tuple


class SGD:
    """Momentum SGD with weight decay on weights (biases exempt)."""

    def __init__(self, named_params, lr, momentum, weight_decay):
        self.named_params = dict(named_params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {name: np.zeros_like(p.data) for name, p in self.named_params.items()}

    def step(self, lr):
        for name, p in self.named_params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if self.weight_decay and not name.endswith(".bias"):
                g = g + self.weight_decay * p.data
            v = self.velocity[name]
            v *= self.momentum
            v += g
            p.data -= lr * v


def poly_lr(base_lr, step, total_steps, power):
    """Polynomial decay: base * (1 - step/total)^power, never negative."""
    frac = min(1.0, step / total_steps)
    return base_lr * (1.0 - frac) ** power


def step_loss_graph(model: Classifier, x: np.ndarray, y: np.ndarray, alpha: float, config: TrainConfig):
    """Build the full training graph for one batch; returns (total, breakdown).

    A non-finite loss term raises DivergenceError rather than ContractError:
    numeric blowup is a training condition, not an API misuse.
    """
    xt = ad.Tensor(x)
    _, raw_s, logits_s = model.forward_batch(xt)
    l_cls = cls_loss_graph(logits_s, y)
    total = l_cls
    p_cls_val = 0.0
    re_val = 0.0
    if config.enable_p_cls or config.enable_re:
        raw_re, logits_re = model.forward_puzzle_batch(xt, raw_s.shape[-2:])
        if config.enable_p_cls:
            l_p = cls_loss_graph(logits_re, y)
            total = total + l_p
            p_cls_val = float(l_p.data)
        if config.enable_re:
            mask = y[:, :, None, None]
            l_re = re_loss_graph(normalize_graph(raw_s), normalize_graph(raw_re), mask)
            total = total + alpha * l_re
            re_val = float(l_re.data)
    cls_val = float(l_cls.data)
    for name, v in (("cls", cls_val), ("p_cls", p_cls_val), ("re", re_val)):
        if not np.isfinite(v):
            raise DivergenceError(f"non-finite loss term {name}={v}")
    breakdown = total_loss(cls_val, p_cls_val, re_val, alpha)
    return total, breakdown


def train(config: TrainConfig, dataset: DatasetDescriptor) -> TrainOutcome:
    """Run the full loop on a dataset; returns checkpoint/log paths and records.

    Divergence (non-finite total, or total above 1e4) aborts with the most
    recent finite-loss parameters saved to checkpoint_last_good.pzck.
    """
    if len(dataset) == 0:
        raise ContractError("dataset is empty")
    os.makedirs(config.out_dir, exist_ok=True)
    model = Classifier(config.backbone, dataset.num_classes, seed=config.seed)
    opt = SGD(model.named_parameters(), config.learning_rate, config.momentum, config.weight_decay)
    rng = np.random.default_rng(config.seed)

    n = len(dataset)
    steps_per_epoch = math.ceil(n / config.batch_size)
    total_steps = steps_per_epoch * config.epochs
    cache: dict[str, np.ndarray] = {}
    records = []
    log_path = os.path.join(config.out_dir, "train_log.ndjson")
    ckpt_path = os.path.join(config.out_dir, "checkpoint_final.pzck")
    start = time.monotonic()
    last_good = {name: p.data.copy() for name, p in model.named_parameters().items()}

    def batch_arrays(indices):
        images = []
        labels = []
        for idx in indices:
            item = dataset.items[idx]
            if item.image_id not in cache:
                cache[item.image_id] = (load_image(item.image_path) * 255.0 + 0.5).astype(np.uint8)
            img = cache[item.image_id].astype(np.float64) / 255.0
            images.append(hwc_to_chw(augment(img, config.augmentation, rng)))
            labels.append(item.labels.values)
        return np.stack(images), np.stack(labels)

    with open(log_path, "w", encoding="utf-8") as log_fh:
        step = 0
        for epoch in range(config.epochs):
            order = rng.permutation(n)
            for b in range(steps_per_epoch):
                indices = order[b * config.batch_size : (b + 1) * config.batch_size]
                x, y = batch_arrays(indices)
                alpha = alpha_at(step, total_steps, config.alpha)
                try:
                    total, breakdown = step_loss_graph(model, x, y, alpha, config)
                    bad = f"total={breakdown.total}" if breakdown.total > DIVERGENCE_CEILING else ""
                except DivergenceError as exc:
                    bad = str(exc)
                if bad:
                    rescue = os.path.join(config.out_dir, "checkpoint_last_good.pzck")
                    for name, p in model.named_parameters().items():
                        p.data[...] = last_good[name]
                    model.save_checkpoint(rescue)
                    raise DivergenceError(
                        f"training diverged at step {step} ({bad}); "
                        f"last good parameters saved to {rescue}"
                    )
                last_good = {name: p.data.copy() for name, p in model.named_parameters().items()}
                model.zero_grad()
                total.backward()
                lr = poly_lr(config.learning_rate, step, total_steps, config.poly_power)
                opt.step(lr)
                if step % config.log_interval == 0 or step == total_steps - 1:
                    record = TrainLogRecord(
                        step=step,
                        epoch=epoch,
                        loss=breakdown,
                        lr=lr,
                        wall_time=0.0 if config.deterministic else time.monotonic() - start,
                    )
                    records.append(record)
                    log_fh.write(record.to_json() + "\n")
                step += 1

    model.save_checkpoint(ckpt_path)
    return TrainOutcome(checkpoint_path=ckpt_path, log_path=log_path, records=tuple(records))


ABLATION_ROWS = (
    ("cls", False, False),
    ("cls+p_cls", True, False),
    ("cls+re", False, True),
    ("cls+p_cls+re", True, True),
)


def config_hash(config: TrainConfig) -> str:
    """Stable short hash of a run configuration."""
    blob = json.dumps(
        {
            "epochs": config.epochs,
            "batch_size": config.batch_size,
            "learning_rate": config.learning_rate,
            "weight_decay": config.weight_decay,
            "momentum": config.momentum,
            "poly_power": config.poly_power,
            "alpha_max": config.alpha.alpha_max,
            "ramp_end_fraction": config.alpha.ramp_end_fraction,
            "rescale_range": list(config.augmentation.rescale_range),
            "crop_size": config.augmentation.crop_size,
            "hflip_prob": config.augmentation.hflip_prob,
            "backbone_kind": config.backbone.kind,
            "widths": list(config.backbone.widths),
            "enable_p_cls": config.enable_p_cls,
            "enable_re": config.enable_re,
            "seed": config.seed,
        },
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode("ascii")).hexdigest()[:12]


def run_ablation(base_config: TrainConfig, dataset: DatasetDescriptor, inference_config=None,
                 pseudo_config=None, rows=ABLATION_ROWS) -> list:
    """Train each loss-toggle row with the shared seed and score its pseudo-labels.

    Returns one dict per row: toggles, seed, config hash, checkpoint path,
    per-class IoU and mean IoU of the row's pseudo-labels against the dataset
    masks. The table is also written to <out_dir>/ablation.json.
    """
    from .inference import InferenceConfig, PseudoLabelConfig, evaluate_checkpoint

    if inference_config is None:
        inference_config = InferenceConfig(scales=(1.0,), use_hflip=True, restrict_to_image_labels=True)
    if pseudo_config is None:
        pseudo_config = PseudoLabelConfig()
    table = []
    for label, p_cls, re in rows:
        row_dir = os.path.join(base_config.out_dir, f"ablation_{label.replace('+', '_')}")
        row_config = replace(
            base_config, enable_p_cls=p_cls, enable_re=re, out_dir=row_dir
        )
        outcome = train(row_config, dataset)
        report = evaluate_checkpoint(outcome.checkpoint_path, dataset, inference_config, pseudo_config)
        table.append(
            {
                "row": label,
                "enable_p_cls": p_cls,
                "enable_re": re,
                "seed": row_config.seed,
                "config_hash": config_hash(row_config),
                "checkpoint": outcome.checkpoint_path,
                "tau": pseudo_config.threshold,
                "miou": report.mean_iou,
                "per_class_iou": [None if np.isnan(v) else float(v) for v in report.per_class_iou],
            }
        )
    os.makedirs(base_config.out_dir, exist_ok=True)
    with open(os.path.join(base_config.out_dir, "ablation.json"), "w", encoding="utf-8") as fh:
        json.dump(table, fh, indent=2)
        fh.write("\n")
    return table
