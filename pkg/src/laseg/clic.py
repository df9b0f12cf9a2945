"""Bias-corrected fuzzy clustering and the 0-100 tissue probability map.

The clustering minimizes a coherent-local fuzzy c-means energy

    E = sum_y sum_k u_k(y)^q  sum_x K(x - y) (I(y) - b(x) c_k)^2

with K a cubic box window. Each of the three block updates (memberships,
centers, bias) is the exact minimizer of E with the other blocks fixed, so
the energy never increases. The bias update is the window-weighted average
of the per-voxel estimate I * J1 / J2.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .volume import Volume

log = logging.getLogger(__name__)

_BIAS_FLOOR = 1e-6


class ClicError(ValueError):
    pass


class ClicDegenerateError(ClicError):
    pass


@dataclass(frozen=True)
class ClicParams:
    n_classes: int = 3
    fuzzifier: float = 2.0
    window_radius: int = 2
    max_iters: int = 50
    tol: float = 1e-4

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if not self.fuzzifier > 1:
            raise ValueError("fuzzifier must be > 1")
        if self.window_radius < 1:
            raise ValueError("window_radius must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")


@dataclass
class ClicResult:
    memberships: list[Volume]
    centers: np.ndarray
    bias: Volume
    converged: bool
    n_iters: int
    objective: list[float] = field(default_factory=list)


def _box_sum(a: np.ndarray, radius: int) -> np.ndarray:
    size = 2 * radius + 1
    return ndimage.uniform_filter(a, size=size, mode="constant") * float(size**3)


def initial_centers(values: np.ndarray, k: int) -> np.ndarray:
    """Centers at the k/(K+1) intensity quantiles.

    Falls back to quantiles of the distinct values when the histogram is so
    concentrated that plain quantiles coincide.
    """
    qs = np.arange(1, k + 1) / (k + 1)
    centers = np.quantile(values, qs)
    if np.all(np.diff(centers) > 0):
        return centers
    return np.quantile(np.unique(values), qs)


class _Energy:
    """Distance terms e_k(y) of the local energy for fixed bias."""

    def __init__(self, img: np.ndarray, bias: np.ndarray, radius: int):
        self.img = img
        self.s1 = _box_sum(np.ones_like(img), radius)
        self.sb = _box_sum(bias, radius)
        self.sb2 = _box_sum(bias * bias, radius)

    def distances(self, centers: np.ndarray) -> np.ndarray:
        img = self.img
        c = centers[:, None, None, None]
        e = img * img * self.s1 - 2.0 * img * c * self.sb + c * c * self.sb2
        return np.maximum(e, 0.0)


def _memberships(e: np.ndarray, q: float) -> np.ndarray:
    # u_k = e_k^(-1/(q-1)) / sum_j e_j^(-1/(q-1)), evaluated relative to the
    # smallest distance so exact zeros do not divide by zero
    e_min = e.min(axis=0)
    tiny = 1e-300
    ratio = (e_min + tiny) / (e + tiny)
    w = ratio ** (1.0 / (q - 1.0))
    return w / w.sum(axis=0)


def _objective(u: np.ndarray, e: np.ndarray, q: float, window: int) -> float:
    return float(np.sum(u**q * e, dtype=np.float64) / window)


def _rel_change(new: np.ndarray, old: np.ndarray) -> float:
    return float(np.max(np.abs(new - old) / np.maximum(np.abs(new), 1e-12)))


def clic_fit(vol: Volume, params: ClicParams = ClicParams()) -> ClicResult:
    img = np.asarray(vol.data, dtype=np.float64)
    k = params.n_classes
    q = params.fuzzifier
    r = params.window_radius
    window = (2 * r + 1) ** 3

    n_distinct = np.unique(img).size
    if n_distinct < k:
        raise ClicDegenerateError(
            f"image has {n_distinct} distinct values, need at least {k} for {k} classes"
        )

    centers = initial_centers(img.ravel(), k)
    bias = np.ones_like(img)
    objective: list[float] = []
    converged = False
    warm = True
    it = 0
    unit = _Energy(img, bias, r)
    for it in range(1, params.max_iters + 1):
        energy = unit if warm else _Energy(img, bias, r)
        u = _memberships(energy.distances(centers), q)
        uq = u**q

        # centers
        num = np.einsum("kxyz,xyz->k", uq, img * energy.sb)
        den = np.einsum("kxyz,xyz->k", uq, energy.sb2)
        new_centers = num / den

        if warm:
            # plain fuzzy c-means (bias held at one) until the centers settle,
            # otherwise the bias can swallow the class contrast early on
            objective.append(_objective(u, unit.distances(new_centers), q, window))
            rel = _rel_change(new_centers, centers)
            centers = new_centers
            if rel < params.tol:
                warm = False
            continue

        # bias: window-weighted average of the per-voxel estimate
        cq = new_centers[:, None, None, None]
        j1 = np.sum(uq * cq, axis=0)
        j2 = np.sum(uq * cq * cq, axis=0)
        bias = _box_sum(img * j1, r) / np.maximum(_box_sum(j2, r), 1e-300)
        bias = np.maximum(bias, _BIAS_FLOOR)
        # b and c only enter through their product; pin the mean bias to one
        scale = float(bias.mean())
        bias /= scale
        new_centers = new_centers * scale

        energy = _Energy(img, bias, r)
        objective.append(_objective(u, energy.distances(new_centers), q, window))

        rel = _rel_change(new_centers, centers)
        centers = new_centers
        if rel < params.tol:
            converged = True
            break

    # final membership pass for the returned centers and bias
    energy = _Energy(img, bias, r)
    u = _memberships(energy.distances(centers), q)

    order = np.argsort(centers, kind="stable")
    centers = centers[order]
    u = u[order]
    if not converged:
        log.info("clustering stopped after %d iterations without converging", it)
    return ClicResult(
        memberships=[Volume(vol.grid, u[i]) for i in range(k)],
        centers=centers,
        bias=Volume(vol.grid, bias),
        converged=converged,
        n_iters=it,
        objective=objective,
    )


def probability_map(res: ClicResult) -> Volume:
    """Membership of the brightest class, scaled to [0, 100]."""
    brightest = int(np.argmax(res.centers))
    m = res.memberships[brightest]
    return Volume(m.grid, np.clip(100.0 * m.data, 0.0, 100.0))


def normalize(vol: Volume, params: ClicParams = ClicParams()) -> Volume:
    return probability_map(clic_fit(vol, params))
