"""Class activation maps: computation, normalization, pooling, label masking.

A CAM for class c is the per-pixel dot product of the classifier row for c
with the feature map. All functions here are pure and numpy-facing; the
trainable mirror of the same math lives in the model graph and is cross-checked
against these in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

# Added to the per-class max before dividing, so all-nonpositive maps
# normalize to zeros instead of dividing by zero.
NORM_EPS = 1e-5

GROUND_TRUTH = "ground_truth_multi_hot"
PREDICTION = "prediction_probability"


def _require_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} contains non-finite entries")


@dataclass(frozen=True)
class FeatureMap:
    """Backbone output: (D, h, w) channels-first, plus the source image size.

    source_size is (W, H) in pixels of the image the features came from.
    """

    data: np.ndarray
    source_size: tuple[int, int]

    def __post_init__(self):
        object.__setattr__(self, "data", np.asarray(self.data, dtype=np.float64))
        if self.data.ndim != 3:
            raise ContractError(f"FeatureMap.data must be (D, h, w), got shape {self.data.shape}")
        if min(self.data.shape) < 1:
            raise ContractError(f"FeatureMap dims must all be >= 1, got {self.data.shape}")
        _require_finite("FeatureMap.data", self.data)

    @property
    def channels(self):
        return self.data.shape[0]


@dataclass(frozen=True)
class ClassifierWeights:
    """One weight row per class: theta has shape (C, D)."""

    theta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=np.float64))
        if self.theta.ndim != 2 or self.theta.shape[0] < 1:
            raise ContractError(f"ClassifierWeights.theta must be (C, D) with C >= 1, got {self.theta.shape}")
        _require_finite("ClassifierWeights.theta", self.theta)

    @property
    def num_classes(self):
        return self.theta.shape[0]


@dataclass(frozen=True)
class CAMStack:
    """Per-class activation maps, (C, h, w); ``normalized`` marks [0, 1] maps."""

    maps: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        object.__setattr__(self, "maps", np.asarray(self.maps, dtype=np.float64))
        if self.maps.ndim != 3:
            raise ContractError(f"CAMStack.maps must be (C, h, w), got shape {self.maps.shape}")
        _require_finite("CAMStack.maps", self.maps)
        if self.normalized and (self.maps.min() < 0.0 or self.maps.max() > 1.0):
            raise ContractError("normalized CAMStack entries must lie in [0, 1]")

    @property
    def num_classes(self):
        return self.maps.shape[0]

    @property
    def spatial_shape(self):
        return self.maps.shape[1:]


@dataclass(frozen=True)
class LabelVector:
    """Length-C vector: multi-hot ground truth or sigmoid prediction scores."""

    values: np.ndarray
    kind: str = GROUND_TRUTH

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        if self.values.ndim != 1:
            raise ContractError(f"LabelVector.values must be 1-d, got shape {self.values.shape}")
        if self.kind == GROUND_TRUTH:
            if not np.all(np.isin(self.values, (0.0, 1.0))):
                raise ContractError("ground-truth LabelVector entries must be 0 or 1")
        elif self.kind == PREDICTION:
            if self.values.min() < 0.0 or self.values.max() > 1.0:
                raise ContractError("prediction LabelVector entries must lie in [0, 1]")
        else:
            raise ContractError(f"unknown LabelVector kind {self.kind!r}")

    def __len__(self):
        return self.values.shape[0]


def compute_cams(f: FeatureMap, theta: ClassifierWeights) -> CAMStack:
    """Raw CAMs: maps[c, y, x] = sum_d theta[c, d] * f[d, y, x]."""
    d_feat = f.data.shape[0]
    d_theta = theta.theta.shape[1]
    if d_feat != d_theta:
        raise ContractError(
            f"channel mismatch: features have D={d_feat}, classifier expects D={d_theta}"
        )
    maps = np.tensordot(theta.theta, f.data, axes=([1], [0]))
    return CAMStack(maps=maps, normalized=False)


def normalize_array(raw: np.ndarray) -> np.ndarray:
    """Clamp negatives, then scale each class map by its max (plus NORM_EPS).

    Works on (..., C, h, w); the max is taken over the trailing two axes.
    """
    clamped = np.maximum(raw, 0.0)
    denom = clamped.max(axis=(-2, -1), keepdims=True) + NORM_EPS
    return clamped / denom


def normalize_cams(raw: CAMStack) -> CAMStack:
    """Max-normalize a raw stack into [0, 1]; all-nonpositive classes go to zeros."""
    if raw.normalized:
        raise ContractError("normalize_cams expects a raw (unnormalized) stack")
    return CAMStack(maps=normalize_array(raw.maps), normalized=True)


def gap(maps: CAMStack) -> np.ndarray:
    """Global average pooling: the spatial mean of each class map."""
    if maps.maps.size == 0:
        raise ContractError("gap expects a non-empty CAMStack")
    return maps.maps.mean(axis=(1, 2))


def mask_by_labels(maps: CAMStack, y: LabelVector) -> CAMStack:
    """Zero the maps of classes absent from the ground-truth label vector."""
    if y.kind != GROUND_TRUTH:
        raise ContractError("mask_by_labels needs a ground-truth label vector")
    if len(y) != maps.num_classes:
        raise ContractError(
            f"label length {len(y)} does not match class count {maps.num_classes}"
        )
    masked = maps.maps * y.values[:, None, None]
    return CAMStack(maps=masked, normalized=maps.normalized)
