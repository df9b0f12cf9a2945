"""Groupwise variance-minimizing registration of atlases to a target.

The group cost is the voxel-averaged variance-style sum

    C = mean_x [ (I - m)^2 + sum_i (A_i(T_i x) - m)^2 ],   m = (I + sum_i A_i(T_i x)) / (N + 1)

with the target's transform pinned to the identity. Because the residuals
around the mean sum to zero, dC/dA_i(T_i x) = 2 (A_i(T_i x) - m) / |x|, which
gives the analytic parameter gradients used by the optimizer.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .transforms import (
    AffineTransform,
    AtlasTransform,
    BSplineTransform,
    GroupTransform,
    bspline_adjoint,
)
from .volume import (
    Grid,
    GridMismatchError,
    LabelVolume,
    Volume,
    _trilinear,
    check_same_grid,
    resample_label,
    world_to_voxel,
)

log = logging.getLogger(__name__)


class RegistrationError(RuntimeError):
    pass


class NonFiniteCostError(RegistrationError):
    pass


@dataclass(frozen=True)
class RegParams:
    # (smoothing sigma in mm, downsample factor) per level, coarse to fine
    pyramid: tuple[tuple[float, int], ...] = ((4.0, 4), (2.0, 2), (1.0, 1))
    affine_iters: int = 200
    bspline_iters: int = 300
    # largest parameter move per iteration (mm) at factor 1; scaled by the level factor
    affine_step: float = 1.0
    bspline_step: float = 0.5
    step_decay: float = 0.99
    control_spacing: float = 16.0
    sample_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if len(self.pyramid) < 1:
            raise ValueError("pyramid needs at least one level")
        for sigma, factor in self.pyramid:
            if sigma < 0 or int(factor) < 1:
                raise ValueError(f"bad pyramid level ({sigma}, {factor})")
        if not 0 < self.sample_fraction <= 1:
            raise ValueError("sample_fraction must lie in (0, 1]")
        if self.affine_iters < 0 or self.bspline_iters < 0:
            raise ValueError("iteration counts must be non-negative")
        if not 0 < self.step_decay <= 1:
            raise ValueError("step_decay must lie in (0, 1]")
        if self.control_spacing <= 0:
            raise ValueError("control_spacing must be positive")


@dataclass
class RegistrationResult:
    transform: GroupTransform
    cost: float
    identity_cost: float
    # (stage label, full-resolution cost) for every candidate considered
    candidates: list[tuple[str, float]] = field(default_factory=list)


# cost ----------------------------------------------------------------------


def group_mean(images: list[Volume]) -> Volume:
    """Voxelwise arithmetic mean of images sharing one grid."""
    if not images:
        raise ValueError("group_mean needs at least one image")
    grid = check_same_grid([im.grid for im in images])
    acc = np.zeros(grid.dims, dtype=np.float64)
    for im in images:
        acc += im.data
    return Volume(grid, acc / len(images))


def warp_to_target(atlas: Volume, t: AtlasTransform, target_grid: Grid) -> np.ndarray:
    pts = t.apply_grid(target_grid)
    vals = _trilinear(atlas.data, world_to_voxel(atlas.grid, pts))
    return vals.reshape(target_grid.dims)


def _centered_mean(arrays):
    # offsets from the first image; identical images give their value back exactly
    base = arrays[0]
    acc = np.zeros_like(base, dtype=np.float64)
    for a in arrays[1:]:
        acc += a - base
    return base + acc / len(arrays)


def groupwise_cost(target: Volume, atlases: list[Volume], gt: GroupTransform) -> float:
    if len(gt.atlases) != len(atlases):
        raise ValueError("one transform per atlas required")
    warped = [target.data] + [warp_to_target(a, t, target.grid) for a, t in zip(atlases, gt.atlases)]
    mean = _centered_mean(warped)
    total = np.zeros(target.grid.dims)
    for w in warped:
        total += (w - mean) ** 2
    return float(total.mean(dtype=np.float64))


def _evaluate(target_vals, qs, atlases, affines, want_grad: bool):
    """Group cost at target points whose B-spline-displaced positions are ``qs``.

    ``qs[i]`` are the (m, 3) points of atlas i after its free-form part;
    ``affines[i]`` maps them into atlas space. Returns the cost and, with
    ``want_grad``, dC/dy for each atlas (m, 3), y being the atlas-space point.
    """
    m = len(target_vals)
    vals = []
    grads = []
    for (data, grid), aff, q in zip(atlases, affines, qs):
        y = aff.apply(q)
        if want_grad:
            v, g = _trilinear(data, world_to_voxel(grid, y), with_grad=True)
            grads.append(g / np.asarray(grid.spacing))
        else:
            v = _trilinear(data, world_to_voxel(grid, y))
        vals.append(v)

    mean = _centered_mean([target_vals] + vals)
    cost = np.sum((target_vals - mean) ** 2, dtype=np.float64)
    resid = []
    for v in vals:
        r = v - mean
        cost += np.sum(r * r, dtype=np.float64)
        resid.append(r)
    cost /= m
    if not np.isfinite(cost):
        raise NonFiniteCostError("group cost became non-finite")
    if not want_grad:
        return float(cost), None
    return float(cost), [(2.0 / m) * r[:, None] * g for r, g in zip(resid, grads)]


def _affine_grad(aff: AffineTransform, dy: np.ndarray, q: np.ndarray):
    return dy.T @ (q - aff.center), dy.sum(axis=0)


class _Level:
    """Target and atlases at one pyramid level, plus the B-spline basis on its grid."""

    def __init__(self, target: Volume, atlases: list[Volume], sigma: float, factor: int,
                 gt: GroupTransform):
        tdata, self.grid = _pyramid_level(target, sigma, factor)
        self.tvals = tdata.reshape(-1)
        self.atlases = [_pyramid_level(a, sigma, factor) for a in atlases]
        self.pts = self.grid.world_coords().reshape(-1, 3)
        first = gt.atlases[0].bspline
        self.mats = first.basis_matrices(self.grid) if first is not None else None

    def displaced(self, t: AtlasTransform) -> np.ndarray:
        if t.bspline is None:
            return self.pts
        return self.pts + t.bspline.dense_displacement(self.grid, self.mats).reshape(-1, 3)


def _full_grid(target: Volume, atlases: list[Volume], gt: GroupTransform):
    lvl = _Level(target, atlases, 0.0, 1, gt)
    qs = [lvl.displaced(t) for t in gt.atlases]
    affines = [t.affine for t in gt.atlases]
    cost, dys = _evaluate(lvl.tvals, qs, lvl.atlases, affines, True)
    return lvl, qs, cost, dys


def groupwise_cost_gradient(target: Volume, atlases: list[Volume], gt: GroupTransform):
    """Full-grid cost and analytic affine gradients [(d_matrix, d_translation), ...]."""
    _, qs, cost, dys = _full_grid(target, atlases, gt)
    return cost, [_affine_grad(t.affine, dy, q) for t, dy, q in zip(gt.atlases, dys, qs)]


def groupwise_cost_bspline_gradient(target: Volume, atlases: list[Volume], gt: GroupTransform):
    """Full-grid cost and analytic B-spline coefficient gradients (atlases need a B-spline part)."""
    lvl, _, cost, dys = _full_grid(target, atlases, gt)
    out = []
    for t, dy in zip(gt.atlases, dys):
        back = (dy @ t.affine.matrix).reshape(lvl.grid.dims + (3,))
        out.append(bspline_adjoint(lvl.mats, back))
    return cost, out


# optimizer -----------------------------------------------------------------


def _pyramid_level(vol: Volume, sigma_mm: float, factor: int) -> tuple[np.ndarray, Grid]:
    data = vol.data
    if sigma_mm > 0:
        data = ndimage.gaussian_filter(data, [sigma_mm / s for s in vol.grid.spacing], mode="nearest")
    f = int(factor)
    data = np.ascontiguousarray(data[::f, ::f, ::f])
    grid = Grid(data.shape, tuple(s * f for s in vol.grid.spacing), vol.grid.origin)
    return data, grid


def _affine_scale(grid: Grid) -> float:
    lo, hi = grid.extent
    return max(float(np.mean(hi - lo)) / 2.0, 1.0)


def _affine_stage(lvl: _Level, gt: GroupTransform, iters, step, decay, n_samples, rng):
    radius = _affine_scale(lvl.grid)
    # the free-form part is frozen during this stage
    qs_full = [lvl.displaced(t) for t in gt.atlases]
    for _ in range(iters):
        s = rng.integers(0, len(lvl.pts), size=n_samples)
        qs = [q[s] for q in qs_full]
        affines = [t.affine for t in gt.atlases]
        _, dys = _evaluate(lvl.tvals[s], qs, lvl.atlases, affines, True)
        for t, dy, q in zip(gt.atlases, dys, qs):
            d_m, d_t = _affine_grad(t.affine, dy, q)
            scaled = np.concatenate([d_m.ravel() / radius, d_t])
            norm = np.linalg.norm(scaled)
            if norm == 0 or not np.isfinite(norm):
                continue
            scaled *= -step / norm
            t.affine.matrix = t.affine.matrix + scaled[:9].reshape(3, 3) / radius
            t.affine.translation = t.affine.translation + scaled[9:]
        step *= decay


def _bspline_stage(lvl: _Level, gt: GroupTransform, iters, step, decay, n_samples, rng):
    n = len(lvl.pts)
    shape = lvl.grid.dims + (3,)
    affines = [t.affine for t in gt.atlases]
    for _ in range(iters):
        s = rng.integers(0, n, size=n_samples)
        qs = [lvl.displaced(t)[s] for t in gt.atlases]
        _, dys = _evaluate(lvl.tvals[s], qs, lvl.atlases, affines, True)
        for t, dy in zip(gt.atlases, dys):
            back = dy @ t.affine.matrix
            dense = np.zeros((n, 3))
            for d in range(3):
                dense[:, d] = np.bincount(s, weights=back[:, d], minlength=n)
            g = bspline_adjoint(lvl.mats, dense.reshape(shape))
            peak = np.sqrt((g * g).sum(axis=-1)).max()
            if peak == 0 or not np.isfinite(peak):
                continue
            t.bspline.coefficients = t.bspline.coefficients - (step / peak) * g
        step *= decay


def groupwise_register(target: Volume, atlases: list[Volume], params: RegParams = RegParams()) -> RegistrationResult:
    """Jointly align ``atlases`` to ``target`` by minimizing the group cost.

    Coarse to fine; per level an affine stage then a B-spline stage, each
    driven by normalized stochastic gradient steps on a seeded voxel
    subsample. The returned transform is the candidate (identity included)
    with the lowest full-resolution cost.
    """
    if len(atlases) == 0:
        raise RegistrationError("groupwise registration needs at least one atlas")
    rng = np.random.default_rng(params.seed)
    center = target.grid.center
    gt = GroupTransform(
        [
            AtlasTransform(
                AffineTransform.identity(center),
                BSplineTransform.for_grid(target.grid, params.control_spacing)
                if params.bspline_iters > 0
                else None,
            )
            for _ in atlases
        ]
    )
    identity = GroupTransform.identity(len(atlases), center)
    identity_cost = groupwise_cost(target, atlases, identity)
    best = (identity_cost, identity.copy(), "identity")
    candidates = [("identity", identity_cost)]

    for level, (sigma, factor) in enumerate(params.pyramid):
        lvl = _Level(target, atlases, sigma, factor, gt)
        n_samples = max(1, int(np.ceil(params.sample_fraction * len(lvl.pts))))
        stages = [
            ("affine", _affine_stage, params.affine_iters, params.affine_step),
            ("bspline", _bspline_stage, params.bspline_iters, params.bspline_step),
        ]
        for kind, run, iters, step0 in stages:
            if iters == 0:
                continue
            run(lvl, gt, iters, step0 * factor, params.step_decay, n_samples, rng)
            cost = groupwise_cost(target, atlases, gt)
            label = f"level{level}-{kind}"
            candidates.append((label, cost))
            log.debug("%s cost %.6g", label, cost)
            if not np.isfinite(cost):
                raise NonFiniteCostError(f"non-finite cost after {label}")
            if cost < best[0]:
                best = (cost, gt.copy(), label)

    cost, transform, label = best
    log.info("registration: identity cost %.6g -> %.6g (%s)", identity_cost, cost, label)
    return RegistrationResult(transform, cost, identity_cost, candidates)


def propagate_label(atlas_label: LabelVolume, t: AtlasTransform, target_grid: Grid) -> LabelVolume:
    """Nearest-neighbour pull of an atlas label into target space."""
    pts = t.apply_grid(target_grid)
    return resample_label(atlas_label, target_grid, lambda _: pts)


__all__ = [
    "GridMismatchError",
    "NonFiniteCostError",
    "RegParams",
    "RegistrationError",
    "RegistrationResult",
    "group_mean",
    "groupwise_cost",
    "groupwise_cost_gradient",
    "groupwise_register",
    "propagate_label",
    "warp_to_target",
]
