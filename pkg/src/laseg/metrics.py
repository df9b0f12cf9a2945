"""Overlap and surface-distance metrics for binary masks."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .volume import LabelVolume, check_same_grid


class EmptyMaskError(ValueError):
    pass


def dice(a: LabelVolume, b: LabelVolume) -> float:
    """2|A∩B| / (|A|+|B|); two empty masks agree perfectly (1.0)."""
    check_same_grid([a.grid, b.grid])
    ma, mb = a.mask, b.mask
    total = int(ma.sum()) + int(mb.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(ma, mb).sum()) / total


def surface_mask(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with at least one face neighbour in the background.

    Voxels on the volume faces count as touching background.
    """
    mask = np.asarray(mask, dtype=bool)
    interior = ndimage.binary_erosion(
        mask, structure=ndimage.generate_binary_structure(3, 1), border_value=0
    )
    return mask & ~interior


def surface_points(lab: LabelVolume) -> np.ndarray:
    """World coordinates (mm) of the surface voxel centers, shape (n, 3)."""
    idx = np.argwhere(surface_mask(lab.mask))
    return idx * np.asarray(lab.grid.spacing) + np.asarray(lab.grid.origin)


def _directed_mean_distance(src: np.ndarray, dst: np.ndarray, spacing) -> float:
    dist = ndimage.distance_transform_edt(~dst, sampling=spacing)
    return float(dist[src].mean())


def apd(a: LabelVolume, b: LabelVolume) -> float:
    """Symmetric mean surface distance in mm: (d(A->B) + d(B->A)) / 2."""
    grid = check_same_grid([a.grid, b.grid])
    if not a.mask.any() or not b.mask.any():
        raise EmptyMaskError("surface distance needs two non-empty masks")
    sa = surface_mask(a.mask)
    sb = surface_mask(b.mask)
    d_ab = _directed_mean_distance(sa, sb, grid.spacing)
    d_ba = _directed_mean_distance(sb, sa, grid.spacing)
    return 0.5 * (d_ab + d_ba)
