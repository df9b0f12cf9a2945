"""Spatial transforms (affine, cubic B-spline FFD) and their text serialization.

All transforms map target-space world points (mm) into atlas-space world
points. An atlas transform is ``affine(bspline(p))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .volume import Grid


class TransformFormatError(ValueError):
    pass


@dataclass
class AffineTransform:
    matrix: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.matrix = np.array(self.matrix, dtype=np.float64).reshape(3, 3)
        self.translation = np.array(self.translation, dtype=np.float64).reshape(3)
        self.center = np.array(self.center, dtype=np.float64).reshape(3)
        if abs(np.linalg.det(self.matrix)) <= 1e-9:
            raise ValueError("affine matrix must be invertible")

    @classmethod
    def identity(cls, center=(0.0, 0.0, 0.0)) -> "AffineTransform":
        return cls(np.eye(3), np.zeros(3), np.asarray(center, dtype=np.float64))

    def apply(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        # p + (M - I)(p - c) + t: the identity maps every point to itself bit-exactly
        return p + (p - self.center) @ (self.matrix - np.eye(3)).T + self.translation

    def copy(self) -> "AffineTransform":
        return AffineTransform(self.matrix.copy(), self.translation.copy(), self.center.copy())


def bspline_basis(t: np.ndarray) -> np.ndarray:
    """Cubic B-spline weights for fractional offsets ``t`` in [0, 1), shape (..., 4)."""
    t = np.asarray(t, dtype=np.float64)
    t2 = t * t
    t3 = t2 * t
    return np.stack(
        [
            (1 - t) ** 3 / 6.0,
            (3 * t3 - 6 * t2 + 4) / 6.0,
            (-3 * t3 + 3 * t2 + 3 * t + 1) / 6.0,
            t3 / 6.0,
        ],
        axis=-1,
    )


def control_grid_for(grid: Grid, spacing_mm: float) -> Grid:
    """Control lattice covering ``grid``'s extent with one knot of margin per side."""
    lo, hi = grid.extent
    n = np.floor((hi - lo) / spacing_mm + 1e-9).astype(int) + 4
    return Grid(tuple(int(v) for v in n), (spacing_mm,) * 3, tuple(lo - spacing_mm))


@dataclass
class BSplineTransform:
    control_grid: Grid
    coefficients: np.ndarray | None = None

    def __post_init__(self):
        shape = self.control_grid.dims + (3,)
        if self.coefficients is None:
            self.coefficients = np.zeros(shape)
        else:
            self.coefficients = np.array(self.coefficients, dtype=np.float64).reshape(shape)
        if min(self.control_grid.dims) < 4:
            raise ValueError("control grid needs at least 4 knots per axis")

    @classmethod
    def for_grid(cls, grid: Grid, spacing_mm: float) -> "BSplineTransform":
        return cls(control_grid_for(grid, spacing_mm))

    def copy(self) -> "BSplineTransform":
        return BSplineTransform(self.control_grid, self.coefficients.copy())

    def _axis_weights(self, coord: np.ndarray, axis: int):
        n = self.control_grid.dims[axis]
        u = (coord - self.control_grid.origin[axis]) / self.control_grid.spacing[axis]
        u = np.clip(u, 1.0, n - 3.0)
        i = np.minimum(np.floor(u).astype(np.intp), n - 3)
        w = bspline_basis(u - i)
        idx = (i - 1)[..., None] + np.arange(4)
        return idx, w

    def support(self, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Flat control indices and tensor weights for points (m, 3), each (m, 64)."""
        p = np.asarray(p, dtype=np.float64).reshape(-1, 3)
        ix, wx = self._axis_weights(p[:, 0], 0)
        iy, wy = self._axis_weights(p[:, 1], 1)
        iz, wz = self._axis_weights(p[:, 2], 2)
        _, ny, nz = self.control_grid.dims
        idx = (ix[:, :, None, None] * ny + iy[:, None, :, None]) * nz + iz[:, None, None, :]
        w = wx[:, :, None, None] * wy[:, None, :, None] * wz[:, None, None, :]
        m = len(p)
        return idx.reshape(m, 64), w.reshape(m, 64)

    def displacement(self, p: np.ndarray, support=None) -> np.ndarray:
        idx, w = support if support is not None else self.support(p)
        coef = self.coefficients.reshape(-1, 3)
        return np.einsum("mk,mkd->md", w, coef[idx])

    def apply(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        return p + self.displacement(p.reshape(-1, 3)).reshape(p.shape)

    def basis_matrices(self, grid: Grid) -> list[np.ndarray]:
        """Per-axis basis matrices (voxels x knots) for the voxel centers of ``grid``."""
        mats = []
        for axis in range(3):
            coord = grid.origin[axis] + grid.spacing[axis] * np.arange(grid.dims[axis])
            idx, w = self._axis_weights(coord, axis)
            b = np.zeros((grid.dims[axis], self.control_grid.dims[axis]))
            np.add.at(b, (np.arange(grid.dims[axis])[:, None], idx), w)
            mats.append(b)
        return mats

    def dense_displacement(self, grid: Grid, mats=None) -> np.ndarray:
        """Displacement at every voxel of ``grid``, shape ``grid.dims + (3,)``.

        Uses the separable tensor-product structure of the basis.
        """
        bx, by, bz = mats if mats is not None else self.basis_matrices(grid)
        out = np.tensordot(bx, self.coefficients, axes=(1, 0))
        out = np.tensordot(by, out, axes=(1, 1)).transpose(1, 0, 2, 3)
        out = np.tensordot(bz, out, axes=(1, 2)).transpose(1, 2, 0, 3)
        return out


def bspline_adjoint(mats, field: np.ndarray) -> np.ndarray:
    """Transpose of :meth:`BSplineTransform.dense_displacement`: voxel field -> knot field."""
    bx, by, bz = mats
    out = np.tensordot(bx, field, axes=(0, 0))
    out = np.tensordot(by, out, axes=(0, 1)).transpose(1, 0, 2, 3)
    out = np.tensordot(bz, out, axes=(0, 2)).transpose(1, 2, 0, 3)
    return out


@dataclass
class AtlasTransform:
    """Atlas mapping ``affine(bspline(p))``; either part may be absent."""

    affine: AffineTransform
    bspline: BSplineTransform | None = None

    def apply(self, p: np.ndarray) -> np.ndarray:
        q = self.bspline.apply(p) if self.bspline is not None else np.asarray(p, float)
        return self.affine.apply(q)

    def apply_grid(self, grid: Grid) -> np.ndarray:
        """Mapped world points for every voxel of ``grid``, shape (size, 3) in C order."""
        pts = grid.world_coords()
        if self.bspline is not None:
            pts = pts + self.bspline.dense_displacement(grid)
        return self.affine.apply(pts.reshape(-1, 3))

    def copy(self) -> "AtlasTransform":
        return AtlasTransform(
            self.affine.copy(), self.bspline.copy() if self.bspline is not None else None
        )


@dataclass
class GroupTransform:
    """One transform per image: entry 0 is the target (identity), then atlases."""

    atlases: list[AtlasTransform]
    names: list[str] | None = None

    @property
    def n_images(self) -> int:
        return len(self.atlases) + 1

    @classmethod
    def identity(cls, n_atlases: int, center=(0.0, 0.0, 0.0)) -> "GroupTransform":
        return cls([AtlasTransform(AffineTransform.identity(center)) for _ in range(n_atlases)])

    def copy(self) -> "GroupTransform":
        names = list(self.names) if self.names is not None else None
        return GroupTransform([t.copy() for t in self.atlases], names)


# serialization ------------------------------------------------------------


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(values))


def format_group_transform(gt: GroupTransform) -> str:
    lines = ["GroupTransform 1", f"n_images = {gt.n_images}", "", "[image 0]", "kind = identity"]
    for i, t in enumerate(gt.atlases, start=1):
        lines += ["", f"[image {i}]"]
        if gt.names is not None:
            lines.append(f"name = {gt.names[i - 1]}")
        lines.append("kind = affine")
        lines.append(f"matrix = {_fmt(t.affine.matrix)}")
        lines.append(f"translation = {_fmt(t.affine.translation)}")
        lines.append(f"center = {_fmt(t.affine.center)}")
        if t.bspline is not None:
            cg = t.bspline.control_grid
            lines.append("kind = bspline")
            lines.append("order = 3")
            lines.append(f"control_dims = {' '.join(str(d) for d in cg.dims)}")
            lines.append(f"control_spacing = {_fmt(cg.spacing)}")
            lines.append(f"control_origin = {_fmt(cg.origin)}")
            # x-fastest over control points, three components per point
            coef = t.bspline.coefficients.transpose(2, 1, 0, 3).reshape(-1)
            lines.append(f"coefficients = {_fmt(coef)}")
    return "\n".join(lines) + "\n"


def write_group_transform(gt: GroupTransform, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_group_transform(gt))
    return path


def _floats(text: str, n: int | None, what: str) -> np.ndarray:
    try:
        vals = np.array([float(v) for v in text.split()])
    except ValueError:
        raise TransformFormatError(f"non-numeric {what}") from None
    if n is not None and vals.size != n:
        raise TransformFormatError(f"{what}: expected {n} values, got {vals.size}")
    return vals


def parse_group_transform(text: str) -> GroupTransform:
    lines = [ln.strip() for ln in text.splitlines()]
    if not lines or lines[0] != "GroupTransform 1":
        raise TransformFormatError("missing 'GroupTransform 1' header")
    blocks: list[list[tuple[str, str]]] = []
    n_images = None
    for ln in lines[1:]:
        if not ln:
            continue
        if ln.startswith("[image"):
            blocks.append([])
            continue
        key, sep, value = ln.partition("=")
        if not sep:
            raise TransformFormatError(f"malformed line {ln!r}")
        key, value = key.strip(), value.strip()
        if not blocks:
            if key == "n_images":
                n_images = int(value)
            continue
        blocks[-1].append((key, value))
    if n_images is None or len(blocks) != n_images:
        raise TransformFormatError("image count does not match n_images")
    if [v for k, v in blocks[0] if k == "kind"] != ["identity"]:
        raise TransformFormatError("image 0 must be the identity target transform")

    atlases = []
    names = []
    for block in blocks[1:]:
        d: dict[str, str] = {}
        kinds = []
        for k, v in block:
            if k == "kind":
                kinds.append(v)
            else:
                d[k] = v
        if "affine" not in kinds:
            raise TransformFormatError("atlas entry lacks an affine part")
        affine = AffineTransform(
            _floats(d["matrix"], 9, "matrix").reshape(3, 3),
            _floats(d["translation"], 3, "translation"),
            _floats(d["center"], 3, "center"),
        )
        bspline = None
        if "bspline" in kinds:
            dims = tuple(int(v) for v in d["control_dims"].split())
            cg = Grid(dims, _floats(d["control_spacing"], 3, "control_spacing"),
                      _floats(d["control_origin"], 3, "control_origin"))
            coef = _floats(d["coefficients"], int(np.prod(dims)) * 3, "coefficients")
            coef = coef.reshape(dims[2], dims[1], dims[0], 3).transpose(2, 1, 0, 3)
            bspline = BSplineTransform(cg, coef)
        atlases.append(AtlasTransform(affine, bspline))
        names.append(d.get("name"))
    if all(n is None for n in names):
        return GroupTransform(atlases)
    if any(n is None for n in names):
        raise TransformFormatError("either every atlas entry is named or none is")
    return GroupTransform(atlases, names)


def read_group_transform(path) -> GroupTransform:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"transform file not found: {path}")
    return parse_group_transform(path.read_text())
