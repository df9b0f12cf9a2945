"""Two-phase piecewise-constant level-set refinement of a binary mask.

Sign convention: phi > 0 inside the object. phi is kept in units of the
smallest voxel spacing; spatial derivatives are taken in mm.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .volume import LabelVolume, Volume, check_same_grid, gradient_field

log = logging.getLogger(__name__)

_GRAD_FLOOR = 1e-8
# a side of the interface counts as empty below this many voxels of Heaviside mass
_MIN_MASS = 1e-3


class LevelSetError(ValueError):
    pass


@dataclass(frozen=True)
class CvParams:
    mu: float | None = None  # None: 0.2 * (intensity range)^2
    nu: float = 0.0
    lambda1: float = 1.0
    lambda2: float = 1.0
    epsilon: float = 1.5
    dt: float = 0.45
    n_iters: int = 100
    reinit_every: int = 25

    def __post_init__(self):
        if self.mu is not None and self.mu < 0:
            raise ValueError("mu must be >= 0")
        if self.nu < 0:
            raise ValueError("nu must be >= 0")
        if not (self.lambda1 > 0 and self.lambda2 > 0):
            raise ValueError("lambda1 and lambda2 must be > 0")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.dt < 0:
            raise ValueError("dt must be >= 0")
        if self.n_iters < 0 or self.reinit_every < 1:
            raise ValueError("n_iters must be >= 0 and reinit_every >= 1")

    def resolved(self, image: Volume) -> "CvParams":
        if self.mu is not None:
            return self
        rng = float(image.data.max() - image.data.min())
        return replace(self, mu=0.2 * rng * rng)


@dataclass
class LevelSetField:
    phi: Volume

    @property
    def grid(self):
        return self.phi.grid


@dataclass
class RefineResult:
    mask: LabelVolume
    phi: LevelSetField
    # (iteration, energy, c1, c2); iteration 0 is the initial state
    trace: list[tuple[int, float, float, float]] = field(default_factory=list)
    reinit_iterations: list[int] = field(default_factory=list)


def heaviside(phi: np.ndarray, eps: float) -> np.ndarray:
    return 0.5 * (1.0 + (2.0 / np.pi) * np.arctan(phi / eps))


def dirac(phi: np.ndarray, eps: float) -> np.ndarray:
    return (eps / np.pi) / (eps * eps + phi * phi)


def _signed_distance(mask: np.ndarray, spacing) -> np.ndarray:
    h = min(spacing)
    d_in = ndimage.distance_transform_edt(mask, sampling=spacing)
    d_out = ndimage.distance_transform_edt(~mask, sampling=spacing)
    # half a voxel puts the zero level midway between opposite face neighbours
    phi = np.where(mask, d_in - 0.5 * h, -(d_out - 0.5 * h))
    return phi / h


def init_sdf_from_mask(mask: LabelVolume) -> LevelSetField:
    m = mask.mask
    if not m.any():
        raise LevelSetError("cannot initialize a level set from an empty mask")
    if m.all():
        raise LevelSetError("cannot initialize a level set from a full mask")
    return LevelSetField(Volume(mask.grid, _signed_distance(m, mask.grid.spacing)))


def reinitialize_sdf(ls: LevelSetField) -> LevelSetField:
    inside = ls.phi.data > 0
    if inside.all() or not inside.any():
        raise LevelSetError("level set has no zero crossing")
    return LevelSetField(Volume(ls.grid, _signed_distance(inside, ls.grid.spacing)))


def cv_means(image: Volume, ls: LevelSetField, eps: float = 1.5) -> tuple[float, float]:
    check_same_grid([image.grid, ls.grid])
    h = heaviside(ls.phi.data, eps)
    inside = float(h.sum(dtype=np.float64))
    outside = float((1.0 - h).sum(dtype=np.float64))
    if inside < _MIN_MASS:
        raise LevelSetError("inside region has vanishing mass")
    if outside < _MIN_MASS:
        raise LevelSetError("outside region has vanishing mass")
    img = image.data
    c1 = float((img * h).sum(dtype=np.float64) / inside)
    c2 = float((img * (1.0 - h)).sum(dtype=np.float64) / outside)
    return c1, c2


def _energy(img, phi, spacing, p: CvParams, c1, c2) -> float:
    h = heaviside(phi, p.epsilon)
    vox = float(np.prod(spacing))
    terms = 0.0
    if p.mu:
        grad_h = gradient_field(h, spacing)
        terms += p.mu * np.sqrt((grad_h * grad_h).sum(axis=-1)).sum(dtype=np.float64)
    if p.nu:
        terms += p.nu * h.sum(dtype=np.float64)
    terms += p.lambda1 * ((img - c1) ** 2 * h).sum(dtype=np.float64)
    terms += p.lambda2 * ((img - c2) ** 2 * (1.0 - h)).sum(dtype=np.float64)
    return float(terms * vox)


def cv_energy(image: Volume, ls: LevelSetField, params: CvParams) -> float:
    p = params.resolved(image)
    c1, c2 = cv_means(image, ls, p.epsilon)
    return _energy(image.data, ls.phi.data, image.grid.spacing, p, c1, c2)


def curvature(phi: np.ndarray, spacing) -> np.ndarray:
    """div(grad phi / |grad phi|) by central differences, in 1/mm."""
    g = gradient_field(phi, spacing)
    norm = np.maximum(np.sqrt((g * g).sum(axis=-1)), _GRAD_FLOOR)
    k = np.zeros(phi.shape)
    for d in range(3):
        if phi.shape[d] > 1:
            k += np.gradient(g[..., d] / norm, spacing[d], axis=d, edge_order=1)
    return k


def cv_step(image: Volume, ls: LevelSetField, params: CvParams) -> LevelSetField:
    """One explicit gradient-flow step of the region energy."""
    p = params.resolved(image)
    c1, c2 = cv_means(image, ls, p.epsilon)
    phi = ls.phi.data
    img = image.data
    force = -p.lambda1 * (img - c1) ** 2 + p.lambda2 * (img - c2) ** 2 - p.nu
    if p.mu:
        force = force + p.mu * curvature(phi, image.grid.spacing)
    new = phi + p.dt * dirac(phi, p.epsilon) * force
    if not np.all(np.isfinite(new)):
        raise LevelSetError("level-set update produced non-finite values")
    return LevelSetField(Volume(ls.grid, new))


def cv_refine(image: Volume, mask: LabelVolume, params: CvParams = CvParams(),
              max_halvings: int = 30) -> RefineResult:
    """Evolve the mask's signed distance under the region flow and threshold at zero.

    Each step uses the configured time step unless that would raise the
    energy, in which case the step is halved until it does not (or skipped).
    """
    check_same_grid([image.grid, mask.grid])
    p = params.resolved(image)
    ls = init_sdf_from_mask(mask)
    spacing = image.grid.spacing

    def measure(field):
        c1, c2 = cv_means(image, field, p.epsilon)
        return _energy(image.data, field.phi.data, spacing, p, c1, c2), c1, c2

    energy, c1, c2 = measure(ls)
    trace = [(0, energy, c1, c2)]
    reinits = []
    for it in range(1, p.n_iters + 1):
        dt = p.dt
        accepted = None
        for _ in range(max_halvings + 1):
            cand = cv_step(image, ls, replace(p, dt=dt))
            try:
                e_new, n1, n2 = measure(cand)
            except LevelSetError:
                e_new = np.inf
            if e_new <= energy:
                accepted = (cand, e_new, n1, n2)
                break
            dt *= 0.5
        if accepted is not None:
            ls, energy, c1, c2 = accepted
        trace.append((it, energy, c1, c2))
        if it % p.reinit_every == 0 and it < p.n_iters:
            ls = reinitialize_sdf(ls)
            energy, c1, c2 = measure(ls)
            reinits.append(it)

    out = LabelVolume(mask.grid, ls.phi.data > 0)
    return RefineResult(out, ls, trace, reinits)


def format_trace(result: RefineResult) -> str:
    lines = ["iteration,energy,c1,c2"]
    for it, e, c1, c2 in result.trace:
        lines.append(f"{it},{e:.10g},{c1:.10g},{c2:.10g}")
    return "\n".join(lines) + "\n"
