"""Water masks, hull-connectivity bottom band, and pixel clearance maps.

The clearance map assigns every pixel its exact Euclidean distance (between
pixel centers, in pixels) to the nearest non-water pixel; non-water pixels
get 0. A mask with no non-water pixel at all has no nearest obstacle, so
every cell carries the +inf sentinel and any clearance gate passes trivially.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage


@dataclass(frozen=True)
class WaterGrid:
    """Binary water mask plus its clearance map (both row-major, (height, width))."""

    water: np.ndarray
    clearance: np.ndarray

    def __post_init__(self):
        water = np.asarray(self.water, dtype=bool)
        clearance = np.asarray(self.clearance, dtype=float)
        if water.ndim != 2 or water.shape != clearance.shape:
            raise ValueError("water and clearance must be 2-D arrays of equal shape")
        water.flags.writeable = False
        clearance.flags.writeable = False
        object.__setattr__(self, "water", water)
        object.__setattr__(self, "clearance", clearance)

    @property
    def height(self) -> int:
        return self.water.shape[0]

    @property
    def width(self) -> int:
        return self.water.shape[1]

    def water_at(self, u: int, v: int) -> bool:
        return bool(self.water[v, u])

    def clearance_at(self, u: int, v: int) -> float:
        return float(self.clearance[v, u])


def apply_bottom_band(mask: np.ndarray, band_rows: int) -> np.ndarray:
    """Force the lowest band_rows rows of the mask to water.

    The bottom of the image is the highest row index. The band keeps gated
    primitives connected to the hull when the segmentation is noisy near the
    bow.
    """
    mask = np.asarray(mask, dtype=bool)
    if band_rows < 0:
        raise ValueError("band_rows must be >= 0")
    if band_rows > mask.shape[0]:
        raise ValueError(f"band_rows {band_rows} exceeds mask height {mask.shape[0]}")
    out = mask.copy()
    if band_rows > 0:
        out[-band_rows:, :] = True
    return out


def clearance_map(mask: np.ndarray) -> WaterGrid:
    """Exact Euclidean distance transform of a water mask.

    For every pixel the clearance equals the minimum distance between pixel
    centers to any non-water pixel, computed from the integer offsets to the
    nearest-feature transform so values match a brute-force minimum exactly.
    """
    water = np.asarray(mask, dtype=bool)
    if water.ndim != 2 or water.size == 0:
        raise ValueError("mask must be a non-empty 2-D array")
    if water.all():
        clearance = np.full(water.shape, np.inf)
        return WaterGrid(water=water, clearance=clearance)
    nearest = ndimage.distance_transform_edt(water, return_distances=False, return_indices=True)
    rows, cols = np.indices(water.shape)
    dr = nearest[0] - rows
    dc = nearest[1] - cols
    clearance = np.sqrt((dr * dr + dc * dc).astype(float))
    return WaterGrid(water=water, clearance=clearance)


def load_mask(path, water_is_white: bool = True, threshold: int = 128) -> np.ndarray:
    """Read an 8-bit single-channel mask image into a boolean water mask.

    Pixels with value >= threshold are foreground; water_is_white selects
    whether foreground means water (True) or non-water (False).
    """
    with Image.open(path) as img:
        gray = np.asarray(img.convert("L"))
    foreground = gray >= threshold
    return foreground if water_is_white else ~foreground


def save_mask(path, water: np.ndarray, water_is_white: bool = True) -> None:
    water = np.asarray(water, dtype=bool)
    fg = water if water_is_white else ~water
    Image.fromarray((fg * np.uint8(255)), mode="L").save(path)
