"""Dataset ingestion, augmentation, and a synthetic shapes benchmark.

Dataset layout on disk:

- ``root/classes.txt``: one class name per line; the line number (0-based) is
  the class index.
- ``root/<split>.csv``: rows ``image_id,rel_image_path,label_1;...[,rel_mask_path]``.
- Masks are palette/indexed PNGs: pixel 0 = background, pixel i+1 = class i,
  pixel 255 = ignore.

Images are handled channels-last as (H, W, 3) float64 in [0, 1]; the model
consumes channels-first, see hwc_to_chw.

The synthetic generator draws colored geometric shapes (class identity is the
geometry, color is random) on a textured background, so a classifier must
localize shape outlines rather than match a color, and writes pixel-accurate
masks for evaluation.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .cams import GROUND_TRUTH, LabelVector
from .errors import ContractError, DatasetError

IGNORE_LABEL = 255

# Mask palette: background black, classes from a fixed color wheel, ignore white.
_CLASS_COLORS = (
    (230, 25, 75), (60, 180, 75), (0, 130, 200), (255, 225, 25), (145, 30, 180),
    (70, 240, 240), (240, 50, 230), (210, 245, 60), (250, 190, 190), (0, 128, 128),
)


@dataclass(frozen=True)
class DatasetItem:
    """One sample: id, image path, multi-hot labels, optional mask path."""

    image_id: str
    image_path: str
    labels: LabelVector
    mask_path: str | None = None


@dataclass(frozen=True)
class DatasetDescriptor:
    """Parsed split: class names plus an immutable item list."""

    root: str
    split: str
    class_names: tuple
    items: tuple

    def __post_init__(self):
        ids = [it.image_id for it in self.items]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DatasetError(f"duplicate image ids in split {self.split!r}: {dupes[:5]}")
        for it in self.items:
            if not np.any(it.labels.values > 0):
                raise DatasetError(f"item {it.image_id!r} has no positive class")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def __len__(self):
        return len(self.items)


@dataclass(frozen=True)
class AugmentationConfig:
    """Random rescale of the longer side, pad-and-crop, horizontal flip."""

    rescale_range: tuple = (80, 160)
    crop_size: int = 128
    hflip_prob: float = 0.5

    def __post_init__(self):
        lo, hi = self.rescale_range
        if not (0 < lo <= hi):
            raise ContractError(f"rescale_range must satisfy 0 < min <= max, got {self.rescale_range}")
        if self.crop_size < 1:
            raise ContractError(f"crop_size must be > 0, got {self.crop_size}")
        if not (0.0 <= self.hflip_prob <= 1.0):
            raise ContractError(f"hflip_prob must be in [0, 1], got {self.hflip_prob}")


@dataclass(frozen=True)
class SyntheticConfig:
    """Parameters of the generated shapes dataset."""

    num_images: int = 100
    canvas_size: int = 160
    shape_classes: tuple = ("circle", "triangle", "rectangle")
    shapes_per_image: tuple = (1, 3)
    noise_level: float = 0.04
    seed: int = 0

    def __post_init__(self):
        if self.num_images < 1:
            raise ContractError(f"num_images must be >= 1, got {self.num_images}")
        if self.canvas_size < 24:
            raise DatasetError(
                f"canvas_size {self.canvas_size} is too small to place shapes (minimum 24)"
            )
        lo, hi = self.shapes_per_image
        if not (1 <= lo <= hi):
            raise ContractError(f"shapes_per_image must satisfy 1 <= min <= max, got {self.shapes_per_image}")
        known = {"circle", "triangle", "rectangle"}
        unknown = [c for c in self.shape_classes if c not in known]
        if not self.shape_classes or unknown:
            raise ContractError(f"shape_classes must be drawn from {sorted(known)}, got {self.shape_classes}")
        if self.noise_level < 0:
            raise ContractError(f"noise_level must be >= 0, got {self.noise_level}")


# -- image and mask I/O ----------------------------------------------------------


def load_image(path) -> np.ndarray:
    """Read an image as (H, W, 3) float64 in [0, 1]; grayscale is promoted."""
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot read image {path}: {exc}") from exc
    return arr


def save_image(arr: np.ndarray, path):
    """Write an (H, W, 3) float array in [0, 1] as an 8-bit PNG."""
    data = np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0)
    Image.fromarray((data * 255.0 + 0.5).astype(np.uint8), mode="RGB").save(path)


def load_mask(path) -> np.ndarray:
    """Read an indexed mask as (H, W) uint8 of class indices."""
    try:
        with Image.open(path) as img:
            if img.mode not in ("P", "L"):
                img = img.convert("L")
            arr = np.asarray(img, dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot read mask {path}: {exc}") from exc
    if arr.ndim != 2:
        raise DatasetError(f"mask {path} is not single-channel, got shape {arr.shape}")
    return arr


def save_mask(arr: np.ndarray, path):
    """Write an (H, W) array of class indices as a palette PNG."""
    data = np.asarray(arr)
    if data.ndim != 2:
        raise ContractError(f"mask must be 2-d, got shape {data.shape}")
    if data.min() < 0 or data.max() > 255:
        raise ContractError("mask values must fit in uint8")
    img = Image.fromarray(data.astype(np.uint8), mode="P")
    palette = [0, 0, 0]
    for i in range(254):
        r, g, b = _CLASS_COLORS[i % len(_CLASS_COLORS)]
        shade = max(0.15, 1.0 - 0.12 * (i // len(_CLASS_COLORS)))
        palette += [int(r * shade), int(g * shade), int(b * shade)]
    palette += [255, 255, 255]  # 255 = ignore
    img.putpalette(palette)
    img.save(path)


def hwc_to_chw(image: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.transpose(image, (2, 0, 1)))


def chw_to_hwc(image: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.transpose(image, (1, 2, 0)))


# -- resizing --------------------------------------------------------------------


def resize_bilinear(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample of the leading two axes of (H, W, ...) arrays.

    Uses half-pixel source centers clamped to the image border: source
    coordinate = (dst + 0.5) * in/out - 0.5. Identity when sizes match.
    """
    arr = np.asarray(arr, dtype=np.float64)
    h, w = arr.shape[:2]
    if out_h < 1 or out_w < 1:
        raise ContractError(f"resize target must be positive, got {out_h}x{out_w}")
    if (h, w) == (out_h, out_w):
        return arr.copy()

    def axis_coords(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = src - lo
        return lo, hi, frac

    y0, y1, fy = axis_coords(h, out_h)
    x0, x1, fx = axis_coords(w, out_w)
    fy = fy.reshape(-1, *([1] * (arr.ndim - 1)))
    fx = fx.reshape(1, -1, *([1] * (arr.ndim - 2)))
    rows_lo = arr[y0]
    rows_hi = arr[y1]
    top = rows_lo[:, x0] * (1 - fx) + rows_lo[:, x1] * fx
    bottom = rows_hi[:, x0] * (1 - fx) + rows_hi[:, x1] * fx
    return top * (1 - fy) + bottom * fy


def resize_chw(maps: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """resize_bilinear for channels-first (C, H, W) stacks."""
    moved = np.moveaxis(np.asarray(maps, dtype=np.float64), 0, -1)
    return np.ascontiguousarray(np.moveaxis(resize_bilinear(moved, out_h, out_w), -1, 0))


# -- augmentation ----------------------------------------------------------------


def augment(image: np.ndarray, config: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    """Random-rescale, pad, crop, and maybe flip one (H, W, 3) image.

    The longer side is scaled to u ~ Uniform[rescale min, max] keeping aspect
    ratio; images smaller than the crop are zero-padded bottom/right; the
    crop origin is uniform over valid positions. The rng is consumed in a
    fixed order (scale, row, column, flip) regardless of configuration so
    seeded runs reproduce exactly.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ContractError(f"augment expects (H, W, 3), got shape {image.shape}")
    h, w = image.shape[:2]
    lo, hi = config.rescale_range
    u = rng.uniform(lo, hi)
    longer = max(h, w)
    scale = u / longer
    new_h = max(1, int(round(h * scale)))
    new_w = max(1, int(round(w * scale)))
    scaled = resize_bilinear(image, new_h, new_w)

    crop = config.crop_size
    pad_h = max(0, crop - new_h)
    pad_w = max(0, crop - new_w)
    if pad_h or pad_w:
        scaled = np.pad(scaled, ((0, pad_h), (0, pad_w), (0, 0)))
    y0 = int(rng.integers(0, scaled.shape[0] - crop + 1))
    x0 = int(rng.integers(0, scaled.shape[1] - crop + 1))
    out = scaled[y0 : y0 + crop, x0 : x0 + crop]
    if rng.random() < config.hflip_prob:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


# -- dataset loading ---------------------------------------------------------------


def load_dataset(root, split) -> DatasetDescriptor:
    """Parse root/classes.txt and root/<split>.csv into a descriptor."""
    classes_path = os.path.join(root, "classes.txt")
    if not os.path.isfile(classes_path):
        raise DatasetError(f"missing class list {classes_path}")
    with open(classes_path, encoding="utf-8") as fh:
        class_names = tuple(line.strip() for line in fh if line.strip())
    if not class_names:
        raise DatasetError(f"{classes_path} lists no classes")
    if len(set(class_names)) != len(class_names):
        raise DatasetError(f"{classes_path} contains duplicate class names")
    index = {name: i for i, name in enumerate(class_names)}

    csv_path = os.path.join(root, f"{split}.csv")
    if not os.path.isfile(csv_path):
        raise DatasetError(f"missing split file {csv_path}")
    items = []
    with open(csv_path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) not in (3, 4):
                raise DatasetError(
                    f"{csv_path}:{lineno}: expected 3 or 4 comma-separated fields, got {len(row)}"
                )
            image_id = row[0].strip()
            image_path = os.path.join(root, row[1].strip())
            label_names = [t.strip() for t in row[2].split(";") if t.strip()]
            if not label_names:
                raise DatasetError(f"item {image_id!r}: empty label list (need >= 1 class)")
            values = np.zeros(len(class_names))
            for name in label_names:
                if name not in index:
                    raise DatasetError(
                        f"item {image_id!r}: unknown class {name!r} (not in classes.txt)"
                    )
                values[index[name]] = 1.0
            mask_path = None
            if len(row) == 4 and row[3].strip():
                mask_path = os.path.join(root, row[3].strip())
                if not os.path.isfile(mask_path):
                    raise DatasetError(f"item {image_id!r}: missing mask file {mask_path}")
            if not os.path.isfile(image_path):
                raise DatasetError(f"item {image_id!r}: missing image file {image_path}")
            items.append(
                DatasetItem(
                    image_id=image_id,
                    image_path=image_path,
                    labels=LabelVector(values=values, kind=GROUND_TRUTH),
                    mask_path=mask_path,
                )
            )
    return DatasetDescriptor(root=str(root), split=str(split), class_names=class_names, items=tuple(items))


# -- synthetic shapes --------------------------------------------------------------


def _draw_shape(kind, canvas, mask, value, color, cy, cx, r):
    h, w = mask.shape
    yy, xx = np.ogrid[:h, :w]
    if kind == "circle":
        region = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    elif kind == "rectangle":
        # Flatter than tall so the silhouette separates from circles.
        ry, rx = int(round(r * 0.7)), r
        region = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
    elif kind == "triangle":
        # Upright isoceles: apex at cy - r, base width 2r at cy + r.
        rel = yy - (cy - r)
        region = (rel >= 0) & (yy <= cy + r) & (np.abs(xx - cx) * 2 <= rel)
    else:
        raise ContractError(f"unknown shape kind {kind!r}")
    canvas[region] = color
    mask[region] = value
    return region


def _textured_background(rng, size):
    base = rng.uniform(0.15, 0.6, size=3)
    coarse = rng.uniform(-1.0, 1.0, size=(size // 8 + 1, size // 8 + 1, 3))
    texture = resize_bilinear(coarse, size, size) * 0.08
    return np.clip(base[None, None, :] + texture, 0.0, 1.0)


# each class draws its fill from a class-specific color family; the color cue
# keeps the classification task learnable from random init at desk scale
_CLASS_BASE_COLORS = (
    np.array([0.90, 0.12, 0.12]),
    np.array([0.12, 0.85, 0.15]),
    np.array([0.15, 0.25, 0.90]),
    np.array([0.90, 0.80, 0.15]),
    np.array([0.80, 0.20, 0.85]),
    np.array([0.15, 0.80, 0.85]),
)


def _shape_color(rng, class_index, bg_mean):
    """Class-family color, nudged away from the background when possible."""
    base = _CLASS_BASE_COLORS[class_index % len(_CLASS_BASE_COLORS)]
    best = None
    for _ in range(50):
        cand = np.clip(base + rng.uniform(-0.05, 0.05, size=3), 0.05, 0.95)
        dist = np.abs(cand - bg_mean).sum()
        if best is None or dist > best[0]:
            best = (dist, cand)
        if dist >= 0.6:
            return cand
    return best[1]


def make_synthetic(config: SyntheticConfig, out_dir) -> DatasetDescriptor:
    """Generate a shapes dataset under out_dir and return its descriptor.

    Every image holds 1 to k non-overlapping shapes; the first shape of image
    i has class i mod C, which guarantees each class at least
    floor(num_images / C) appearances. Each class paints with its own color
    family (jittered per shape), so geometry and color carry the same label.
    Masks are exact rasterizations of the drawn shapes. Output is
    byte-identical for identical configs.
    """
    rng = np.random.default_rng(config.seed)
    size = config.canvas_size
    classes = tuple(config.shape_classes)
    c = len(classes)
    image_dir = os.path.join(out_dir, "images")
    mask_dir = os.path.join(out_dir, "masks")
    os.makedirs(image_dir, exist_ok=True)
    os.makedirs(mask_dir, exist_ok=True)

    r_lo = max(4, int(size * 0.14))
    r_hi = max(r_lo + 1, int(size * 0.26))
    rows = []
    for i in range(config.num_images):
        canvas = _textured_background(rng, size)
        mask = np.zeros((size, size), dtype=np.uint8)
        n_shapes = int(rng.integers(config.shapes_per_image[0], config.shapes_per_image[1] + 1))
        placed = []  # (cy, cx, r) of accepted shapes
        present = set()
        for j in range(n_shapes):
            cls = (i % c) if j == 0 else int(rng.integers(0, c))
            ok = False
            for _ in range(200):
                r = int(rng.integers(r_lo, r_hi + 1))
                cy = int(rng.integers(r + 1, size - r))
                cx = int(rng.integers(r + 1, size - r))
                if all((cy - py) ** 2 + (cx - px) ** 2 > (r + pr + 2) ** 2 for py, px, pr in placed):
                    ok = True
                    break
            if not ok:
                if j == 0:
                    raise DatasetError(
                        f"canvas {size}x{size} too small to place a shape of radius {r_lo}..{r_hi}"
                    )
                continue  # skip extras that no longer fit
            bg_mean = canvas.mean(axis=(0, 1))
            color = _shape_color(rng, cls, bg_mean)
            _draw_shape(classes[cls], canvas, mask, cls + 1, color, cy, cx, r)
            placed.append((cy, cx, r))
            present.add(cls)
        if config.noise_level > 0:
            canvas = np.clip(canvas + rng.normal(0.0, config.noise_level, size=canvas.shape), 0.0, 1.0)
        image_id = f"syn_{i:05d}"
        save_image(canvas, os.path.join(image_dir, f"{image_id}.png"))
        save_mask(mask, os.path.join(mask_dir, f"{image_id}.png"))
        labels = ";".join(classes[k] for k in sorted(present))
        rows.append(f"{image_id},images/{image_id}.png,{labels},masks/{image_id}.png")

    with open(os.path.join(out_dir, "classes.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(classes) + "\n")
    with open(os.path.join(out_dir, "train.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(rows) + "\n")
    return load_dataset(out_dir, "train")
