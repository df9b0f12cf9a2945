"""Synthetic atrium-like phantoms: an ellipsoidal body with tubular veins.

Stand-in for clinical scans. Everything is seeded and deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .volume import Grid, LabelVolume, Volume, nearest_index, resample, resample_label


@dataclass(frozen=True)
class PhantomParams:
    dims: tuple[int, int, int] = (48, 48, 48)
    spacing: tuple[float, float, float] = (2.0, 2.0, 2.0)
    semi_axes: tuple[float, float, float] = (22.0, 18.0, 16.0)
    center: tuple[float, float, float] | None = None
    n_tubes: int = 4
    tube_radius: float = 4.0
    tube_length: float = 16.0
    intensity_inside: float = 200.0
    intensity_outside: float = 60.0
    noise_sigma: float = 8.0
    bias_amplitude: float = 0.2
    deformation_amplitude: float = 4.0
    deformation_smoothness: float = 16.0
    seed: int = 0

    def __post_init__(self):
        if min(self.semi_axes) <= 0 or self.tube_radius <= 0:
            raise ValueError("semi-axes and tube radius must be positive")
        if self.n_tubes < 0 or self.tube_length < 0:
            raise ValueError("n_tubes and tube_length must be non-negative")
        if self.noise_sigma < 0 or self.bias_amplitude < 0:
            raise ValueError("noise and bias must be non-negative")
        if self.deformation_amplitude < 0 or self.deformation_smoothness <= 0:
            raise ValueError("deformation amplitude must be >= 0, smoothness > 0")
        if self.deformation_amplitude >= self.deformation_smoothness / 2:
            raise ValueError("deformation amplitude must stay below smoothness / 2")

    @property
    def grid(self) -> Grid:
        return Grid(self.dims, self.spacing, (0.0, 0.0, 0.0))

    @property
    def body_center(self) -> np.ndarray:
        if self.center is not None:
            return np.asarray(self.center, dtype=np.float64)
        return self.grid.center


def tube_directions(n: int) -> np.ndarray:
    """Unit vectors of a cone of n tubes, spread evenly around +z."""
    phi = 2 * np.pi * (np.arange(n) + 0.5) / max(n, 1)
    d = np.stack([np.cos(phi), np.sin(phi), np.full(n, 0.6)], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def phantom_inside(params: PhantomParams, pts: np.ndarray) -> np.ndarray:
    """Analytic indicator of the phantom body at world points (..., 3)."""
    c = params.body_center
    rel = pts - c
    axes = np.asarray(params.semi_axes)
    inside = np.sum((rel / axes) ** 2, axis=-1) <= 1.0
    for d in tube_directions(params.n_tubes):
        reach = 1.0 / np.sqrt(np.sum((d / axes) ** 2)) + params.tube_length
        t = rel @ d
        radial = np.linalg.norm(rel - t[..., None] * d, axis=-1)
        inside |= (t >= 0) & (t <= reach) & (radial <= params.tube_radius)
    return inside


def smooth_bias(grid: Grid, amplitude: float, rng: np.random.Generator) -> np.ndarray:
    """Multiplicative field exp(amplitude * s) with s a smooth pattern in [-1, 1]."""
    if amplitude == 0:
        return np.ones(grid.dims)
    x = grid.world_coords()
    lo, hi = grid.extent
    span = np.maximum(hi - lo, 1e-9)
    s = np.zeros(grid.dims)
    for _ in range(3):
        freq = rng.uniform(0.3, 1.0, size=3)
        phase = rng.uniform(0, 2 * np.pi, size=3)
        s += np.prod(np.cos(np.pi * freq * (x - lo) / span + phase), axis=-1)
    s /= max(np.abs(s).max(), 1e-12)
    return np.exp(amplitude * s)


def generate_phantom(params: PhantomParams = PhantomParams()) -> tuple[Volume, LabelVolume]:
    grid = params.grid
    label = phantom_inside(params, grid.world_coords())
    img = np.where(label, params.intensity_inside, params.intensity_outside).astype(np.float64)
    rng = np.random.default_rng(params.seed)
    bias = smooth_bias(grid, params.bias_amplitude, rng)
    if params.noise_sigma > 0:
        img = img + rng.normal(0.0, params.noise_sigma, size=grid.dims)
    img = img * bias
    return Volume(grid, img), LabelVolume(grid, label)


def random_displacement(grid: Grid, amplitude: float, smoothness: float,
                        rng: np.random.Generator) -> np.ndarray:
    """Gaussian-smoothed random displacement field (mm), max magnitude ``amplitude``."""
    if amplitude == 0:
        return np.zeros(grid.dims + (3,))
    sigma = [smoothness / s for s in grid.spacing]
    field = np.stack(
        [ndimage.gaussian_filter(rng.normal(size=grid.dims), sigma, mode="wrap") for _ in range(3)],
        axis=-1,
    )
    peak = np.linalg.norm(field, axis=-1).max()
    return field * (amplitude / max(peak, 1e-12))


def warp_pair(img: Volume, lab: LabelVolume, disp: np.ndarray) -> tuple[Volume, LabelVolume]:
    """Backward warp: out(x) = in(x + disp(x))."""
    flat = disp.reshape(-1, 3)

    def world_map(pts):
        return pts + flat

    return resample(img, img.grid, world_map), resample_label(lab, lab.grid, world_map)


def generate_cohort(base: PhantomParams, n: int, seed: int) -> list[tuple[Volume, LabelVolume]]:
    if n < 1:
        raise ValueError("cohort size must be >= 1")
    img, lab = generate_phantom(base)
    cases = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        disp = random_displacement(
            img.grid, base.deformation_amplitude, base.deformation_smoothness, rng
        )
        cases.append(warp_pair(img, lab, disp))
    return cases


def translated_phantom(params: PhantomParams, shift_mm) -> tuple[Volume, LabelVolume]:
    """Same phantom with its body moved by ``shift_mm`` (noise pattern regenerated)."""
    moved = replace(params, center=tuple(params.body_center + np.asarray(shift_mm, float)))
    return generate_phantom(moved)


def corrupt_label(lab: LabelVolume, severity: float, seed: int) -> LabelVolume:
    """Displace and rescale the mask about its centroid.

    The displacement grows linearly with ``severity`` up to the mask's
    bounding-box size along a random direction; the scale factor moves away
    from one in a random sense. Severity 0 returns the input unchanged.
    """
    if not 0.0 <= severity <= 1.0:
        raise ValueError("severity must lie in [0, 1]")
    mask = lab.mask
    if severity == 0 or not mask.any():
        return LabelVolume(lab.grid, lab.data)
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    grow = rng.random() < 0.5

    spacing = np.asarray(lab.grid.spacing)
    idx = np.argwhere(mask)
    centroid = idx.mean(axis=0) * spacing
    size = (idx.max(axis=0) - idx.min(axis=0) + 1) * spacing
    shift = severity * float(np.abs(direction) @ size) * direction
    scale = 1.0 + 0.5 * severity if grow else 1.0 / (1.0 + 0.5 * severity)

    pts = lab.grid.world_coords().reshape(-1, 3) - np.asarray(lab.grid.origin)
    src = centroid + (pts - centroid - shift) / scale
    v = src / spacing
    ok = np.all((v > -0.5) & (v < np.asarray(lab.grid.dims) - 0.5), axis=1)
    near = nearest_index(lab.grid.dims, v)
    out = np.zeros(len(v), dtype=np.uint8)
    out[ok] = lab.data[near[ok, 0], near[ok, 1], near[ok, 2]]
    return LabelVolume(lab.grid, out.reshape(lab.grid.dims))
