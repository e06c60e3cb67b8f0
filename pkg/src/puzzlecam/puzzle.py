"""Tile an image or map stack into four quadrants and merge quadrants back.

Tiles are the contiguous 2x2 partition of the (zero-padded, if odd) input;
merge is its exact inverse, cropping any padding away. Both operate on arrays
whose trailing two axes are spatial, so they apply equally to (H, W) images,
(C, h, w) CAM stacks, and (B, C, H, W) batches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

GRID_POSITIONS = ((1, 1), (1, 2), (2, 1), (2, 2))


@dataclass(frozen=True)
class PuzzleTiles:
    """Four same-shape tiles keyed by grid position (row i, col j) in {1,2}^2.

    tile_size is (tile_w, tile_h), i.e. half the padded input, width first.
    """

    tiles: dict
    tile_size: tuple[int, int]

    def __post_init__(self):
        if set(self.tiles.keys()) != set(GRID_POSITIONS):
            raise ContractError(f"tiles must cover exactly {GRID_POSITIONS}, got {sorted(self.tiles)}")
        shapes = {t.shape for t in self.tiles.values()}
        if len(shapes) != 1:
            raise ContractError(f"tiles must share one shape, got {shapes}")
        tw, th = self.tile_size
        shape = next(iter(shapes))
        if shape[-2:] != (th, tw):
            raise ContractError(f"tile_size {self.tile_size} inconsistent with tile shape {shape}")

    def __getitem__(self, pos):
        return self.tiles[pos]


def tile(x: np.ndarray) -> PuzzleTiles:
    """Split the trailing two axes into four non-overlapping quadrants.

    Odd heights/widths are zero-padded on the bottom/right to the next even
    size first, so the quadrants always partition the (padded) input.
    """
    x = np.asarray(x)
    if x.ndim < 2:
        raise ContractError(f"tile expects at least 2 dims, got shape {x.shape}")
    h, w = x.shape[-2:]
    if h < 2 or w < 2:
        raise ContractError(f"tile needs H >= 2 and W >= 2, got H={h}, W={w}")

    ph, pw = h % 2, w % 2
    if ph or pw:
        width = [(0, 0)] * (x.ndim - 2) + [(0, ph), (0, pw)]
        x = np.pad(x, width)
    th, tw = x.shape[-2] // 2, x.shape[-1] // 2

    tiles = {}
    for i, j in GRID_POSITIONS:
        rows = slice((i - 1) * th, i * th)
        cols = slice((j - 1) * tw, j * tw)
        tiles[(i, j)] = np.ascontiguousarray(x[..., rows, cols])
    return PuzzleTiles(tiles=tiles, tile_size=(tw, th))


def merge(tiles: PuzzleTiles, target_size: tuple[int, int]) -> np.ndarray:
    """Place the four tiles back on their grid and crop to (W, H) target_size."""
    w, h = target_size
    tw, th = tiles.tile_size
    if not (2 * th - 1 <= h <= 2 * th and 2 * tw - 1 <= w <= 2 * tw):
        raise ContractError(
            f"tiles of size {(tw, th)} cannot merge to target (W={w}, H={h})"
        )
    top = np.concatenate([tiles[(1, 1)], tiles[(1, 2)]], axis=-1)
    bottom = np.concatenate([tiles[(2, 1)], tiles[(2, 2)]], axis=-1)
    full = np.concatenate([top, bottom], axis=-2)
    return full[..., :h, :w]


def tile_batch(x: np.ndarray) -> np.ndarray:
    """Stack the four quadrants of a (B, C, H, W) batch along the batch axis.

    Output is (4B, C, ceil(H/2), ceil(W/2)) ordered as four consecutive blocks
    of B, one per grid position in GRID_POSITIONS order. A shared-weight
    forward over this batch realizes the Siamese tiled branch in one pass.
    """
    x = np.asarray(x)
    if x.ndim != 4:
        raise ContractError(f"tile_batch expects (B, C, H, W), got shape {x.shape}")
    t = tile(x)
    return np.concatenate([t[pos] for pos in GRID_POSITIONS], axis=0)


def merge_batch(tiled: np.ndarray, target_size: tuple[int, int]) -> np.ndarray:
    """Inverse of tile_batch on per-tile outputs: (4B, C, h, w) -> (B, C, H, W)."""
    tiled = np.asarray(tiled)
    if tiled.ndim != 4 or tiled.shape[0] % 4 != 0:
        raise ContractError(f"merge_batch expects (4B, C, h, w), got shape {tiled.shape}")
    b = tiled.shape[0] // 4
    th, tw = tiled.shape[-2:]
    tiles = PuzzleTiles(
        tiles={pos: tiled[k * b : (k + 1) * b] for k, pos in enumerate(GRID_POSITIONS)},
        tile_size=(tw, th),
    )
    return merge(tiles, target_size)
