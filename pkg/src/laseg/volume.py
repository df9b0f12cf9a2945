"""Regular-grid 3D volumes, coordinate mapping, interpolation and differences.

Arrays are indexed ``data[x, y, z]`` with shape ``grid.dims``; the x-fastest
on-disk order is ``data.ravel(order="F")``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if len(dims) != 3 or len(spacing) != 3 or len(origin) != 3:
            raise ValueError("grid needs three dims, spacings and origin components")
        if min(dims) < 1:
            raise ValueError(f"dims must be >= 1, got {dims}")
        if not all(s > 0 and np.isfinite(s) for s in spacing):
            raise ValueError(f"spacing must be positive, got {spacing}")
        if not all(np.isfinite(o) for o in origin):
            raise ValueError(f"origin must be finite, got {origin}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def size(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def voxel_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def extent(self) -> tuple[np.ndarray, np.ndarray]:
        """World positions of the first and last voxel centers."""
        lo = np.asarray(self.origin)
        hi = lo + (np.asarray(self.dims) - 1) * np.asarray(self.spacing)
        return lo, hi

    @property
    def center(self) -> np.ndarray:
        lo, hi = self.extent
        return 0.5 * (lo + hi)

    def world_coords(self) -> np.ndarray:
        """World coordinates of every voxel center, shape ``dims + (3,)``."""
        axes = [
            self.origin[d] + self.spacing[d] * np.arange(self.dims[d]) for d in range(3)
        ]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def world_to_voxel(grid: Grid, p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return (p - np.asarray(grid.origin)) / np.asarray(grid.spacing)


def voxel_to_world(grid: Grid, v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v * np.asarray(grid.spacing) + np.asarray(grid.origin)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


class Volume:
    """Real-valued scalar volume. Immutable after construction."""

    def __init__(self, grid: Grid, data):
        data = np.asarray(data, dtype=np.float64)
        if data.shape != grid.dims:
            if data.size != grid.size:
                raise ValueError(
                    f"data has {data.size} values, grid {grid.dims} needs {grid.size}"
                )
            data = data.reshape(grid.dims, order="F")
        if not np.all(np.isfinite(data)):
            raise ValueError("volume data must be finite")
        self.grid = grid
        self.data = _frozen(data)

    def __repr__(self):
        return f"Volume(dims={self.grid.dims}, spacing={self.grid.spacing})"

    def with_data(self, data) -> "Volume":
        return Volume(self.grid, data)


class LabelVolume:
    """Binary label volume (0 background, 1 foreground)."""

    def __init__(self, grid: Grid, data):
        arr = np.asarray(data)
        if arr.shape != grid.dims:
            if arr.size != grid.size:
                raise ValueError(
                    f"data has {arr.size} values, grid {grid.dims} needs {grid.size}"
                )
            arr = arr.reshape(grid.dims, order="F")
        if arr.dtype == bool:
            arr = arr.astype(np.uint8)
        if arr.size and (np.any(arr < 0) or np.any(arr > 1) or np.any(arr != np.round(arr))):
            raise ValueError("label values must be 0 or 1")
        self.grid = grid
        self.data = _frozen(arr.astype(np.uint8))

    def __repr__(self):
        return f"LabelVolume(dims={self.grid.dims}, count={int(self.data.sum())})"

    @property
    def mask(self) -> np.ndarray:
        return self.data.astype(bool)


def check_same_grid(grids) -> Grid:
    grids = list(grids)
    first = grids[0]
    for g in grids[1:]:
        if g != first:
            raise GridMismatchError(f"grid mismatch: {g} vs {first}")
    return first


_SNAP = 1e-9


def _trilinear(data: np.ndarray, v: np.ndarray, with_grad: bool = False):
    """Clamped trilinear interpolation of ``data`` at continuous voxel coords ``v`` (m, 3).

    With ``with_grad`` also returns the derivative of the interpolant with
    respect to the voxel coordinates; clamped axes have zero derivative.
    """
    dims = np.asarray(data.shape)
    upper = dims - 1
    vc = np.clip(v, 0.0, upper)
    # world -> voxel round trips leave ~1e-16 residue; snap so nodes sample exactly
    r = np.rint(vc)
    vc = np.where(np.abs(vc - r) < _SNAP, r, vc)
    i0 = np.floor(vc).astype(np.intp)
    i0 = np.minimum(i0, np.maximum(upper - 1, 0))
    f = vc - i0
    i1 = np.minimum(i0 + 1, upper)

    x0, y0, z0 = i0.T
    x1, y1, z1 = i1.T
    fx, fy, fz = f.T
    c000 = data[x0, y0, z0]
    c100 = data[x1, y0, z0]
    c010 = data[x0, y1, z0]
    c110 = data[x1, y1, z0]
    c001 = data[x0, y0, z1]
    c101 = data[x1, y0, z1]
    c011 = data[x0, y1, z1]
    c111 = data[x1, y1, z1]

    gx_, gy_, gz_ = 1.0 - fx, 1.0 - fy, 1.0 - fz
    c00 = gx_ * c000 + fx * c100
    c10 = gx_ * c010 + fx * c110
    c01 = gx_ * c001 + fx * c101
    c11 = gx_ * c011 + fx * c111
    c0 = gy_ * c00 + fy * c10
    c1 = gy_ * c01 + fy * c11
    val = gz_ * c0 + fz * c1
    if not with_grad:
        return val

    gx = (
        (1 - fy) * (1 - fz) * (c100 - c000)
        + fy * (1 - fz) * (c110 - c010)
        + (1 - fy) * fz * (c101 - c001)
        + fy * fz * (c111 - c011)
    )
    gy = (1 - fz) * (c10 - c00) + fz * (c11 - c01)
    gz = c1 - c0
    grad = np.stack([gx, gy, gz], axis=-1)
    inside = (v >= 0.0) & (v <= upper)
    grad = np.where(inside & (dims > 1), grad, 0.0)
    return val, grad


def trilinear_sample(vol: Volume, p):
    """Trilinear value at continuous voxel coordinate(s) ``p``; outside points clamp to the edge."""
    p = np.asarray(p, dtype=np.float64)
    scalar = p.ndim == 1
    out = _trilinear(vol.data, p.reshape(-1, 3))
    return float(out[0]) if scalar else out.reshape(p.shape[:-1])


def nearest_index(dims, p) -> np.ndarray:
    """Nearest voxel index; exact half-way ties go to the lower index."""
    p = np.asarray(p, dtype=np.float64)
    idx = np.ceil(p - 0.5).astype(np.intp)
    return np.clip(idx, 0, np.asarray(dims) - 1)


def nearest_sample(lab: LabelVolume, p):
    p = np.asarray(p, dtype=np.float64)
    scalar = p.ndim == 1
    idx = nearest_index(lab.grid.dims, p.reshape(-1, 3))
    out = lab.data[idx[:, 0], idx[:, 1], idx[:, 2]]
    return int(out[0]) if scalar else out.reshape(p.shape[:-1])


WorldMap = Callable[[np.ndarray], np.ndarray]


def resample(vol: Volume, out_grid: Grid, world_map: WorldMap | None = None) -> Volume:
    """Pull ``vol`` onto ``out_grid``: out[v] = vol(world_map(world(v))).

    ``world_map`` takes and returns (m, 3) world points; None means identity.
    """
    pts = out_grid.world_coords().reshape(-1, 3)
    if world_map is not None:
        pts = world_map(pts)
    vals = _trilinear(vol.data, world_to_voxel(vol.grid, pts))
    return Volume(out_grid, vals.reshape(out_grid.dims))


def resample_label(lab: LabelVolume, out_grid: Grid, world_map: WorldMap | None = None) -> LabelVolume:
    pts = out_grid.world_coords().reshape(-1, 3)
    if world_map is not None:
        pts = world_map(pts)
    idx = nearest_index(lab.grid.dims, world_to_voxel(lab.grid, pts))
    vals = lab.data[idx[:, 0], idx[:, 1], idx[:, 2]]
    return LabelVolume(out_grid, vals.reshape(out_grid.dims))


def gradient_field(data: np.ndarray, spacing) -> np.ndarray:
    """Per-mm gradient of a whole array, shape ``data.shape + (3,)``.

    Central differences inside, one-sided at boundary faces, zero along
    axes of length one.
    """
    out = np.zeros(data.shape + (3,), dtype=np.float64)
    for d in range(3):
        if data.shape[d] > 1:
            out[..., d] = np.gradient(data, spacing[d], axis=d, edge_order=1)
    return out


def gradient_central(vol: Volume, v) -> np.ndarray:
    """Per-mm gradient at voxel index ``v``."""
    v = tuple(int(c) for c in v)
    g = np.zeros(3)
    for d in range(3):
        n = vol.grid.dims[d]
        if n == 1:
            continue
        lo = list(v)
        hi = list(v)
        h = vol.grid.spacing[d]
        if v[d] == 0:
            hi[d] += 1
            denom = h
        elif v[d] == n - 1:
            lo[d] -= 1
            denom = h
        else:
            lo[d] -= 1
            hi[d] += 1
            denom = 2 * h
        g[d] = (vol.data[tuple(hi)] - vol.data[tuple(lo)]) / denom
    return g
