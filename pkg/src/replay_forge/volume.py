"""3D voxel grids: validation, face-connected morphology, components, Dice.

Volumes are plain numpy arrays in C order. Probability volumes hold floats in
[0, 1]; label masks hold {0, 1} and are handled internally as ``bool``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatch, InvalidVolume

FACE = ndimage.generate_binary_structure(3, 1)
FULL = ndimage.generate_binary_structure(3, 3)


@dataclass(frozen=True)
class BandSpec:
    inward: int = 4
    outward: int = 4

    def __post_init__(self):
        if self.inward < 0 or self.outward < 0:
            raise ValueError("band steps must be non-negative")

    @property
    def width(self) -> int:
        return self.inward + self.outward + 1


def as_mask(mask) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim != 3 or 0 in m.shape:
        raise InvalidVolume(f"label mask must be a non-empty 3D grid, got shape {m.shape}")
    if m.dtype == bool:
        return m
    if not np.isin(m, (0, 1)).all():
        raise InvalidVolume("label mask values must be 0 or 1")
    return m.astype(bool)


def as_prob(prob) -> np.ndarray:
    p = np.asarray(prob, dtype=np.float64)
    if p.ndim != 3 or 0 in p.shape:
        raise InvalidVolume(f"probability volume must be a non-empty 3D grid, got shape {p.shape}")
    if not np.isfinite(p).all() or p.min() < 0.0 or p.max() > 1.0:
        raise InvalidVolume("probability values must be finite and within [0, 1]")
    return p


def check_same_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionMismatch(f"dims {a.shape} != {b.shape}")


def dice(pred, gt) -> float:
    """Dice overlap 2|P∩G| / (|P|+|G|); two empty masks agree perfectly (1.0)."""
    p, g = as_mask(pred), as_mask(gt)
    check_same_dims(p, g)
    total = int(p.sum()) + int(g.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(p, g).sum()) / total


def connected_components(mask, connectivity: int = 26) -> tuple[np.ndarray, int]:
    """Label foreground components; returns (labels 1..C with background 0, C)."""
    if connectivity not in (6, 26):
        raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")
    m = as_mask(mask)
    labels, count = ndimage.label(m, structure=FACE if connectivity == 6 else FULL)
    return labels, int(count)


def morph_dilate(mask, steps: int) -> np.ndarray:
    m = as_mask(mask)
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if steps == 0 or not m.any():
        # scipy treats iterations=0 as "until stable"
        return m.copy()
    return ndimage.binary_dilation(m, structure=FACE, iterations=steps, border_value=0)


def morph_erode(mask, steps: int) -> np.ndarray:
    m = as_mask(mask)
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if steps == 0 or not m.any():
        return m.copy()
    return ndimage.binary_erosion(m, structure=FACE, iterations=steps, border_value=0)


def boundary_band(gt, spec: BandSpec = BandSpec()) -> np.ndarray:
    """Shell around the lesion surface: dilate(gt, outward) minus erode(gt, inward)."""
    g = as_mask(gt)
    return morph_dilate(g, spec.outward) & ~morph_erode(g, spec.inward)
