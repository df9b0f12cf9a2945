import numpy as np
import pytest

from laseg.transforms import (
    AffineTransform,
    AtlasTransform,
    BSplineTransform,
    GroupTransform,
    TransformFormatError,
    bspline_adjoint,
    bspline_basis,
    control_grid_for,
    format_group_transform,
    parse_group_transform,
    read_group_transform,
    write_group_transform,
)
from laseg.volume import Grid

GRID = Grid((20, 18, 16), (2.0, 2.0, 2.5), (-5.0, 0.0, 3.0))


def test_affine_examples():
    rng = np.random.default_rng(0)
    p = rng.normal(size=(10, 3))
    np.testing.assert_array_equal(AffineTransform.identity((1, 2, 3)).apply(p), p)
    t = AffineTransform(np.eye(3), (3, 0, 0))
    np.testing.assert_array_equal(t.apply(np.array([1.0, 1.0, 1.0])), [4, 1, 1])
    rot = AffineTransform([[0, -1, 0], [1, 0, 0], [0, 0, 1]], (0, 0, 0), (1, 1, 0))
    np.testing.assert_allclose(rot.apply(np.array([2.0, 1.0, 0.0])), [1, 2, 0])


def test_affine_singular_rejected():
    with pytest.raises(ValueError):
        AffineTransform(np.zeros((3, 3)))


def test_basis_partition_of_unity():
    t = np.linspace(0, 1, 50, endpoint=False)
    np.testing.assert_allclose(bspline_basis(t).sum(axis=-1), 1.0, atol=1e-15)


def test_control_grid_covers_extent_with_margin():
    cg = control_grid_for(GRID, 16.0)
    lo, hi = GRID.extent
    clo, chi = cg.extent
    assert np.all(clo <= lo - 16.0 + 1e-9)
    assert np.all(chi >= hi + 16.0 - 1e-9)


def test_constant_coefficients_translate():
    bs = BSplineTransform.for_grid(GRID, 16.0)
    d = np.array([1.5, -2.0, 0.25])
    bs.coefficients[...] = d
    pts = GRID.world_coords().reshape(-1, 3)
    np.testing.assert_allclose(bs.apply(pts), pts + d, atol=1e-12)


def test_dense_displacement_matches_pointwise_and_adjoint():
    rng = np.random.default_rng(1)
    bs = BSplineTransform.for_grid(GRID, 16.0)
    bs.coefficients[...] = rng.normal(size=bs.coefficients.shape)
    dense = bs.dense_displacement(GRID)
    pts = GRID.world_coords().reshape(-1, 3)
    np.testing.assert_allclose(dense.reshape(-1, 3), bs.displacement(pts), atol=1e-12)
    # <B c, f> == <c, B^T f>
    f = rng.normal(size=dense.shape)
    mats = bs.basis_matrices(GRID)
    lhs = float((dense * f).sum())
    rhs = float((bs.coefficients * bspline_adjoint(mats, f)).sum())
    assert lhs == pytest.approx(rhs, rel=1e-12)


def _random_group(rng, with_bspline=True, names=None):
    ats = []
    for _ in range(3):
        aff = AffineTransform(np.eye(3) + 0.05 * rng.normal(size=(3, 3)), rng.normal(size=3),
                              rng.normal(size=3))
        bs = None
        if with_bspline:
            bs = BSplineTransform.for_grid(GRID, 16.0)
            bs.coefficients[...] = rng.normal(size=bs.coefficients.shape) / 3
        ats.append(AtlasTransform(aff, bs))
    return GroupTransform(ats, names)


@pytest.mark.parametrize("with_bspline", [True, False])
def test_serialization_round_trip_bit_exact(tmp_path, with_bspline):
    gt = _random_group(np.random.default_rng(2), with_bspline, names=["a", "b", "c"])
    path = write_group_transform(gt, tmp_path / "t.txt")
    back = read_group_transform(path)
    assert back.names == ["a", "b", "c"]
    pts = GRID.world_coords().reshape(-1, 3)[::37]
    for t0, t1 in zip(gt.atlases, back.atlases):
        assert np.array_equal(t0.apply(pts), t1.apply(pts))
    assert format_group_transform(back) == path.read_text()


def test_parse_rejects_garbage():
    with pytest.raises(TransformFormatError):
        parse_group_transform("not a transform\n")
    text = format_group_transform(_random_group(np.random.default_rng(3), False))
    with pytest.raises(TransformFormatError):
        parse_group_transform(text.replace("kind = affine", "kind = spline", 1))
