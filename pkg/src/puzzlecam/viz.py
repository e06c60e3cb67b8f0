"""Heatmap overlays for CAM inspection.

The colormap is a fixed 16-anchor perceptual ramp (dark blue through green to
yellow) shipped as data and linearly interpolated to 256 entries, so overlay
renderings are reproducible with no plotting dependencies.
"""

from __future__ import annotations

import numpy as np

from .data import save_image
from .errors import ContractError

# Anchors of a viridis-like ramp, RGB in [0, 1], low to high.
_ANCHORS = np.array(
    [
        (0.267, 0.005, 0.329),
        (0.283, 0.101, 0.421),
        (0.277, 0.185, 0.490),
        (0.254, 0.265, 0.530),
        (0.221, 0.339, 0.549),
        (0.191, 0.407, 0.556),
        (0.164, 0.471, 0.558),
        (0.140, 0.534, 0.555),
        (0.122, 0.595, 0.543),
        (0.135, 0.659, 0.518),
        (0.208, 0.719, 0.473),
        (0.328, 0.773, 0.407),
        (0.478, 0.821, 0.318),
        (0.647, 0.858, 0.210),
        (0.825, 0.885, 0.106),
        (0.993, 0.906, 0.144),
    ]
)


def colormap_lut() -> np.ndarray:
    """256x3 lookup table interpolated from the anchor ramp."""
    positions = np.linspace(0.0, 1.0, len(_ANCHORS))
    xs = np.linspace(0.0, 1.0, 256)
    lut = np.stack([np.interp(xs, positions, _ANCHORS[:, c]) for c in range(3)], axis=1)
    return lut


_LUT = colormap_lut()


def heatmap_rgb(map01: np.ndarray) -> np.ndarray:
    """Map an (H, W) array in [0, 1] to an (H, W, 3) colormapped image."""
    arr = np.asarray(map01, dtype=np.float64)
    if arr.ndim != 2:
        raise ContractError(f"heatmap_rgb expects an (H, W) map, got shape {arr.shape}")
    idx = np.clip((arr * 255.0 + 0.5).astype(np.int64), 0, 255)
    return _LUT[idx]


def overlay(image: np.ndarray, map01: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """Alpha-blend a heatmap onto an (H, W, 3) image."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ContractError(f"overlay expects an (H, W, 3) image, got shape {image.shape}")
    heat = heatmap_rgb(map01)
    if heat.shape[:2] != image.shape[:2]:
        raise ContractError(
            f"map shape {heat.shape[:2]} does not match image {image.shape[:2]}"
        )
    if not (0.0 <= alpha <= 1.0):
        raise ContractError(f"alpha must be in [0, 1], got {alpha}")
    return np.clip(image * (1.0 - alpha) + heat * alpha, 0.0, 1.0)


def save_overlay(image: np.ndarray, map01: np.ndarray, path, alpha: float = 0.5):
    save_image(overlay(image, map01, alpha), path)
    return path
