from dataclasses import replace

import numpy as np
import pytest
from scipy import ndimage

from laseg.metrics import dice
from laseg.phantom import PhantomParams, generate_phantom, translated_phantom
from laseg.registration import (
    RegistrationError,
    RegParams,
    group_mean,
    groupwise_cost,
    groupwise_cost_bspline_gradient,
    groupwise_cost_gradient,
    groupwise_register,
    propagate_label,
)
from laseg.transforms import AffineTransform, AtlasTransform, BSplineTransform, GroupTransform
from laseg.volume import Grid, LabelVolume, Volume
from oracles import groupwise_cost_loop

FAST = RegParams(pyramid=((2.0, 2), (1.0, 1)), affine_iters=60, bspline_iters=0)


def smooth_volume(grid, seed, sigma=2.0):
    rng = np.random.default_rng(seed)
    return Volume(grid, 50 * ndimage.gaussian_filter(rng.normal(size=grid.dims), sigma, mode="wrap"))


def test_group_mean_examples():
    g = Grid((2, 2, 2), (1, 1, 1), (0, 0, 0))
    rng = np.random.default_rng(0)
    a, b, c = (Volume(g, rng.normal(size=g.dims)) for _ in range(3))
    np.testing.assert_allclose(group_mean([a, b]).data, (a.data + b.data) / 2)
    assert np.array_equal(group_mean([a, a]).data, a.data)
    np.testing.assert_allclose(group_mean([a, b, c]).data, (a.data + b.data + c.data) / 3, rtol=1e-15)


def test_cost_identical_zero_and_two_constants():
    g = Grid((4, 4, 4), (1, 1, 1), (0, 0, 0))
    v = smooth_volume(g, 1)
    assert groupwise_cost(v, [v, v], GroupTransform.identity(2)) == 0.0
    a, b = 3.0, 11.0
    cost = groupwise_cost(Volume(g, np.full(g.dims, a)), [Volume(g, np.full(g.dims, b))],
                          GroupTransform.identity(1))
    assert cost == 2 * ((a - b) / 2) ** 2


def test_cost_matches_voxel_loop_and_is_permutation_invariant():
    g = Grid((4, 4, 4), (1, 1, 1), (0, 0, 0))
    rng = np.random.default_rng(2)
    t, a1, a2 = (Volume(g, rng.normal(size=g.dims)) for _ in range(3))
    gt = GroupTransform.identity(2)
    c = groupwise_cost(t, [a1, a2], gt)
    assert c == pytest.approx(groupwise_cost_loop([t.data, a1.data, a2.data]), abs=1e-9)
    assert c == pytest.approx(groupwise_cost(t, [a2, a1], gt), abs=1e-12)
    assert c >= 0


def _random_affine_group(rng, center, n):
    return GroupTransform([
        AtlasTransform(AffineTransform(np.eye(3) + 0.04 * rng.normal(size=(3, 3)),
                                       rng.normal(size=3), center))
        for _ in range(n)
    ])


def test_affine_gradient_matches_central_differences():
    g = Grid((12, 11, 10), (1.5, 1.5, 2.0), (0, 0, 0))
    target = smooth_volume(g, 3)
    atlases = [smooth_volume(g, 4), smooth_volume(g, 5)]
    rng = np.random.default_rng(6)
    gt = _random_affine_group(rng, g.center, 2)
    _, grads = groupwise_cost_gradient(target, atlases, gt)
    h = 1e-6
    for i, (d_m, d_t) in enumerate(grads):
        analytic = np.r_[d_m.ravel(), d_t]
        numeric = np.zeros(12)
        for k in range(12):
            cost = []
            for sgn in (1, -1):
                gp = gt.copy()
                aff = gp.atlases[i].affine
                if k < 9:
                    m = aff.matrix.copy().ravel()
                    m[k] += sgn * h
                    aff.matrix = m.reshape(3, 3)
                else:
                    tr = aff.translation.copy()
                    tr[k - 9] += sgn * h
                    aff.translation = tr
                cost.append(groupwise_cost(target, atlases, gp))
            numeric[k] = (cost[0] - cost[1]) / (2 * h)
        rel = np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric)
        assert rel < 1e-3


def test_bspline_gradient_matches_central_differences():
    g = Grid((14, 12, 10), (2.0, 2.0, 2.0), (0, 0, 0))
    target = smooth_volume(g, 7)
    atlas = smooth_volume(g, 8)
    rng = np.random.default_rng(9)
    gt = _random_affine_group(rng, g.center, 1)
    bs = BSplineTransform.for_grid(g, 8.0)
    bs.coefficients[...] = 0.5 * rng.normal(size=bs.coefficients.shape)
    gt.atlases[0].bspline = bs
    _, (grad,) = groupwise_cost_bspline_gradient(target, [atlas], gt)
    h = 1e-6
    picks = [tuple(int(rng.integers(0, n)) for n in bs.coefficients.shape) for _ in range(12)]
    for idx in picks:
        cost = []
        for sgn in (1, -1):
            gp = gt.copy()
            gp.atlases[0].bspline.coefficients[idx] += sgn * h
            cost.append(groupwise_cost(target, [atlas], gp))
        numeric = (cost[0] - cost[1]) / (2 * h)
        assert grad[idx] == pytest.approx(numeric, rel=1e-3, abs=1e-7)


def test_register_needs_atlases():
    g = Grid((4, 4, 4), (1, 1, 1), (0, 0, 0))
    with pytest.raises(RegistrationError):
        groupwise_register(Volume(g, np.zeros(g.dims)), [], FAST)


def test_identical_atlas_stays_at_identity():
    p = PhantomParams(dims=(32, 32, 32), spacing=(3.0, 3.0, 3.0))
    img, _ = generate_phantom(p)
    res = groupwise_register(img, [img], FAST)
    assert res.cost <= res.identity_cost
    assert res.identity_cost == 0.0
    aff = res.transform.atlases[0].affine
    assert np.linalg.norm(aff.translation) < 0.5 * 3.0


def test_translation_recovered_and_deterministic():
    p = PhantomParams(dims=(32, 32, 32), spacing=(3.0, 3.0, 3.0), noise_sigma=0.0)
    img, lab = generate_phantom(p)
    moved, _ = translated_phantom(p, (-6.0, 3.0, 0.0))
    res = groupwise_register(img, [moved], FAST)
    t = res.transform.atlases[0]
    pts = lab.grid.world_coords()[lab.mask]
    shift = (t.apply(pts) - pts).mean(axis=0)
    assert np.all(np.abs(shift - [-6.0, 3.0, 0.0]) < 0.5 * 3.0)
    again = groupwise_register(img, [moved], FAST)
    assert np.array_equal(again.transform.atlases[0].affine.matrix, t.affine.matrix)
    assert res.cost <= res.identity_cost


def test_propagate_label_examples():
    g = Grid((8, 7, 6), (2.0, 1.0, 1.0), (0, 0, 0))
    rng = np.random.default_rng(10)
    lab = LabelVolume(g, rng.random(g.dims) > 0.5)
    ident = AtlasTransform(AffineTransform.identity(g.center))
    assert np.array_equal(propagate_label(lab, ident, g).data, lab.data)
    shift = AtlasTransform(AffineTransform(np.eye(3), (2.0, 0, 0)))
    assert np.array_equal(propagate_label(lab, shift, g).data[:-1], lab.data[1:])
    empty = LabelVolume(g, np.zeros(g.dims))
    assert not propagate_label(empty, shift, g).data.any()


def test_bspline_stage_improves_deformed_pair():
    from laseg.phantom import random_displacement, warp_pair

    p = PhantomParams(dims=(32, 32, 32), spacing=(3.0, 3.0, 3.0))
    img, lab = generate_phantom(p)
    disp = random_displacement(img.grid, 5.0, 16.0, np.random.default_rng(11))
    wimg, wlab = warp_pair(img, lab, disp)
    params = replace(RegParams(), pyramid=((2.0, 2), (1.0, 1)), affine_iters=50, bspline_iters=150)
    res = groupwise_register(img, [wimg], params)
    before = dice(propagate_label(wlab, AtlasTransform(AffineTransform.identity()), img.grid), lab)
    after = dice(propagate_label(wlab, res.transform.atlases[0], img.grid), lab)
    assert after > before
