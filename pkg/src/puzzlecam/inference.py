"""Multi-scale flip inference, pseudo-label synthesis, and mIoU evaluation.

infer_cams runs the single-image path at several scales (optionally with a
horizontal flip per scale), upsamples each variant's raw maps back to the
input resolution, averages them, and max-normalizes once at the end so every
variant carries equal weight. make_pseudo_labels turns a normalized stack
into an indexed label map with a background threshold and an optional ignore
band. evaluate_miou scores label maps against ground truth with a full
(C+1)-class confusion matrix, background included, ignore pixels excluded.

CAM stacks travel between commands as PCAM v1 files: little-endian, magic
``PCAM``, version byte 0x01, u16 class count / height / width, the class ids
as u16 each, then float32 map values (class-major, row-major). Normalized
maps only.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .cams import GROUND_TRUTH, CAMStack, LabelVector, mask_by_labels, normalize_cams
from .data import DatasetDescriptor, hwc_to_chw, load_image, load_mask, resize_bilinear, resize_chw
from .errors import ContractError, PCAMFormatError
from .model import Classifier, load_model

PCAM_MAGIC = b"PCAM"
PCAM_VERSION = 1
_HEADER = struct.Struct("<4sBHHH")  # magic, version, class count, H, W

IGNORE = 255


@dataclass(frozen=True)
class InferenceConfig:
    """Scale set and flip/label options for CAM inference."""

    scales: tuple = (0.5, 1.0, 1.5, 2.0)
    use_hflip: bool = True
    restrict_to_image_labels: bool = True

    def __post_init__(self):
        scales = tuple(float(s) for s in self.scales)
        object.__setattr__(self, "scales", scales)
        if not scales or any(s <= 0 for s in scales):
            raise ContractError(f"scales must be non-empty and positive, got {self.scales}")


@dataclass(frozen=True)
class PseudoLabelConfig:
    """Background threshold plus an optional score band mapped to ignore."""

    threshold: float = 0.25
    ignore_band: tuple | None = None

    def __post_init__(self):
        if not (0.0 < self.threshold < 1.0):
            raise ContractError(f"threshold must be in (0, 1), got {self.threshold}")
        if self.ignore_band is not None:
            lo, hi = self.ignore_band
            if not (0.0 < lo < hi < 1.0):
                raise ContractError(
                    f"ignore_band needs 0 < low < high < 1, got {self.ignore_band}"
                )


@dataclass(frozen=True)
class MIoUReport:
    """Confusion matrix over C+1 classes, per-class IoU, and their mean.

    per_class_iou[c] is NaN when class c has zero union (absent from both
    prediction and ground truth); such classes are excluded from the mean.
    """

    confusion: np.ndarray
    per_class_iou: np.ndarray
    mean_iou: float

    def __post_init__(self):
        defined = self.per_class_iou[~np.isnan(self.per_class_iou)]
        if defined.size and (defined.min() < 0 or defined.max() > 1):
            raise ContractError("per-class IoU values must lie in [0, 1]")

    def to_text(self, class_names=None) -> str:
        c = self.per_class_iou.shape[0] - 1
        names = ["background"] + list(class_names if class_names else (f"class_{i}" for i in range(1, c + 1)))
        lines = ["per-class IoU:"]
        for i, name in enumerate(names):
            v = self.per_class_iou[i]
            lines.append(f"  {name:<20s} {'n/a' if np.isnan(v) else f'{v:.4f}'}")
        lines.append(f"mean IoU: {self.mean_iou:.4f}")
        return "\n".join(lines)

    def to_json_dict(self) -> dict:
        return {
            "mean_iou": self.mean_iou,
            "per_class_iou": [None if np.isnan(v) else float(v) for v in self.per_class_iou],
            "confusion": self.confusion.tolist(),
        }


def infer_cams(model: Classifier, image: np.ndarray, labels=None,
               config: InferenceConfig = InferenceConfig()) -> CAMStack:
    """Average raw CAMs over scale/flip variants, then normalize once.

    image is (H, W, 3) in [0, 1]; the result has one full-resolution map per
    class. With restrict_to_image_labels and a label vector given, maps of
    absent classes are zeroed.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ContractError(f"infer_cams expects an (H, W, 3) image, got shape {image.shape}")
    h, w = image.shape[:2]
    acc = None
    count = 0
    for scale in config.scales:
        nh = max(1, int(round(h * scale)))
        nw = max(1, int(round(w * scale)))
        scaled = resize_bilinear(image, nh, nw)
        variants = [(scaled, False)]
        if config.use_hflip:
            variants.append((scaled[:, ::-1], True))
        for variant, flipped in variants:
            raw = model.forward_single(hwc_to_chw(variant)).raw_cams.maps
            up = resize_chw(raw, h, w)
            if flipped:
                up = up[:, :, ::-1]
            acc = up.copy() if acc is None else acc + up
            count += 1
    stack = normalize_cams(CAMStack(maps=acc / count, normalized=False))
    if config.restrict_to_image_labels and labels is not None:
        if not isinstance(labels, LabelVector):
            labels = LabelVector(values=np.asarray(labels, dtype=np.float64), kind=GROUND_TRUTH)
        stack = mask_by_labels(stack, labels)
    return stack


def make_pseudo_labels(cams: CAMStack, cfg: PseudoLabelConfig = PseudoLabelConfig()) -> np.ndarray:
    """Per-pixel decision: background below threshold, else best class.

    Output values: 0 background, c+1 for class c, 255 for scores inside the
    ignore band (inclusive bounds; the band overrides the threshold rule).
    Ties go to the lowest class index.
    """
    if not cams.normalized:
        raise ContractError("make_pseudo_labels expects a normalized CAM stack")
    scores = cams.maps
    best = scores.max(axis=0)
    arg = scores.argmax(axis=0)  # first maximum, so ties pick the lowest index
    out = np.where(best < cfg.threshold, 0, arg + 1).astype(np.uint8)
    if cfg.ignore_band is not None:
        lo, hi = cfg.ignore_band
        out[(best >= lo) & (best <= hi)] = IGNORE
    return out


def evaluate_miou(pred_maps, gt_maps, num_classes: int, ids=None) -> MIoUReport:
    """Confusion-matrix mIoU over C+1 classes (background = 0, 255 ignored).

    pred_maps and gt_maps are parallel sequences of (H, W) integer maps;
    single arrays are accepted and treated as one-item sequences.
    """
    if isinstance(pred_maps, np.ndarray) and pred_maps.ndim == 2:
        pred_maps = [pred_maps]
    if isinstance(gt_maps, np.ndarray) and gt_maps.ndim == 2:
        gt_maps = [gt_maps]
    pred_maps = list(pred_maps)
    gt_maps = list(gt_maps)
    if len(pred_maps) != len(gt_maps):
        raise ContractError(
            f"got {len(pred_maps)} predictions but {len(gt_maps)} ground-truth maps"
        )
    if num_classes < 1:
        raise ContractError(f"num_classes must be >= 1, got {num_classes}")
    k = num_classes + 1
    confusion = np.zeros((k, k), dtype=np.int64)
    for i, (pred, gt) in enumerate(zip(pred_maps, gt_maps)):
        item = ids[i] if ids is not None else f"item {i}"
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise ContractError(
                f"{item}: prediction shape {pred.shape} does not match ground truth {gt.shape}"
            )
        if pred.min() < 0 or pred.max() >= k:
            raise ContractError(
                f"{item}: prediction values must be in 0..{num_classes}, "
                f"found range {pred.min()}..{pred.max()}"
            )
        gt_vals = np.unique(gt)
        bad = gt_vals[(gt_vals >= k) & (gt_vals != IGNORE)]
        if bad.size or gt_vals.min() < 0:
            raise ContractError(
                f"{item}: ground-truth values must be in 0..{num_classes} or 255, found {gt_vals}"
            )
        valid = gt != IGNORE
        combined = gt[valid].astype(np.int64) * k + pred[valid].astype(np.int64)
        confusion += np.bincount(combined, minlength=k * k).reshape(k, k)

    tp = np.diag(confusion).astype(np.float64)
    union = confusion.sum(axis=0) + confusion.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        ious = np.where(union > 0, tp / union, np.nan)
    defined = ~np.isnan(ious)
    if not defined.any():
        raise ContractError("no class has any pixel to evaluate (all ground truth is ignore)")
    return MIoUReport(
        confusion=confusion,
        per_class_iou=ious,
        mean_iou=float(ious[defined].mean()),
    )


def evaluate_checkpoint(checkpoint_path, dataset: DatasetDescriptor,
                        inference_config: InferenceConfig = InferenceConfig(),
                        pseudo_config: PseudoLabelConfig = PseudoLabelConfig()) -> MIoUReport:
    """Score a trained model's pseudo-labels against the dataset's masks."""
    model = load_model(checkpoint_path)
    preds = []
    gts = []
    item_ids = []
    for item in dataset.items:
        if item.mask_path is None:
            continue
        image = load_image(item.image_path)
        stack = infer_cams(model, image, labels=item.labels, config=inference_config)
        preds.append(make_pseudo_labels(stack, pseudo_config))
        gts.append(load_mask(item.mask_path))
        item_ids.append(item.image_id)
    if not preds:
        raise ContractError(f"dataset split {dataset.split!r} has no items with masks")
    return evaluate_miou(preds, gts, dataset.num_classes, ids=item_ids)


# -- PCAM v1 ---------------------------------------------------------------------


def export_cams(cams: CAMStack, path, class_ids=None):
    """Write a normalized stack as a PCAM v1 file."""
    if not cams.normalized:
        raise ContractError("export_cams stores normalized CAM stacks only")
    c, h, w = cams.maps.shape
    if class_ids is None:
        class_ids = tuple(range(c))
    class_ids = tuple(int(i) for i in class_ids)
    if len(class_ids) != c:
        raise ContractError(f"got {len(class_ids)} class ids for {c} maps")
    for bound, name in ((c, "class count"), (h, "height"), (w, "width")):
        if bound > 0xFFFF:
            raise ContractError(f"{name} {bound} exceeds the PCAM v1 limit of 65535")
    if any(not (0 <= i <= 0xFFFF) for i in class_ids):
        raise ContractError(f"class ids must fit in u16, got {class_ids}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(PCAM_MAGIC, PCAM_VERSION, c, h, w))
        fh.write(np.asarray(class_ids, dtype="<u2").tobytes())
        fh.write(np.ascontiguousarray(cams.maps, dtype="<f4").tobytes())
    return path


def import_cams(path):
    """Read a PCAM v1 file; returns (normalized CAMStack, class id tuple)."""
    try:
        with open(path, "rb") as fh:
            payload = fh.read()
    except OSError as exc:
        raise PCAMFormatError(f"cannot read {path}: {exc}") from exc
    if len(payload) < _HEADER.size:
        raise PCAMFormatError(
            f"{path}: truncated header: need {_HEADER.size} bytes, found {len(payload)} (byte 0)"
        )
    magic, version, c, h, w = _HEADER.unpack_from(payload, 0)
    if magic != PCAM_MAGIC:
        raise PCAMFormatError(f"{path}: bad magic {magic!r} at byte 0, expected {PCAM_MAGIC!r}")
    if version != PCAM_VERSION:
        raise PCAMFormatError(
            f"{path}: unsupported version {version} at byte 4, expected {PCAM_VERSION}"
        )
    ids_off = _HEADER.size
    maps_off = ids_off + 2 * c
    expected = maps_off + 4 * c * h * w
    if len(payload) != expected:
        raise PCAMFormatError(
            f"{path}: expected {expected} bytes total, found {len(payload)} "
            f"(payload starts at byte {ids_off})"
        )
    class_ids = tuple(int(v) for v in np.frombuffer(payload, dtype="<u2", count=c, offset=ids_off))
    maps = np.frombuffer(payload, dtype="<f4", count=c * h * w, offset=maps_off)
    maps = maps.reshape(c, h, w).astype(np.float64)
    return CAMStack(maps=maps, normalized=True), class_ids
