import numpy as np
import pytest

from laseg.clic import (
    ClicDegenerateError,
    ClicParams,
    ClicResult,
    clic_fit,
    initial_centers,
    probability_map,
)
from laseg.volume import Grid, Volume

G = Grid((24, 24, 24), (1, 1, 1), (0, 0, 0))


def ball_image(bias=None):
    w = G.world_coords()
    r = np.linalg.norm(w - 11.5, axis=-1)
    inside = r < 7
    img = np.where(inside, 10.0, 100.0)
    if bias is not None:
        img = img * bias
    return Volume(G, img), inside


def smooth_bias(lo=0.8, hi=1.25):
    x = G.world_coords()[..., 0] / (G.dims[0] - 1)
    return lo + (hi - lo) * x


def test_two_value_ball_recovers_indicators():
    vol, inside = ball_image()
    res = clic_fit(vol, ClicParams(n_classes=2))
    np.testing.assert_allclose(res.centers, [10, 100], rtol=0.01)
    dark, bright = res.memberships
    assert np.all(dark.data[inside] >= 0.99)
    assert np.all(bright.data[~inside] >= 0.99)
    pm = probability_map(res).data
    assert pm[~inside].min() >= 99 and pm[inside].max() <= 1


def test_biased_ball_centers_within_five_percent():
    vol, inside = ball_image(smooth_bias())
    res = clic_fit(vol, ClicParams(n_classes=2))
    np.testing.assert_allclose(res.centers, [10, 100], rtol=0.05)
    assert res.bias.data.min() > 0


def test_result_invariants():
    rng = np.random.default_rng(0)
    vol, _ = ball_image(smooth_bias())
    vol = vol.with_data(vol.data + rng.normal(0, 3, G.dims))
    res = clic_fit(vol, ClicParams(n_classes=3, max_iters=30))
    total = sum(m.data for m in res.memberships)
    np.testing.assert_allclose(total, 1.0, atol=1e-6)
    assert np.all(np.diff(res.centers) > 0)
    assert np.all(res.bias.data > 0)
    obj = np.array(res.objective)
    assert np.all(np.diff(obj) <= 1e-9 + 1e-12 * np.abs(obj[:-1]))


def test_constant_image_is_degenerate():
    with pytest.raises(ClicDegenerateError):
        clic_fit(Volume(G, np.full(G.dims, 4.0)), ClicParams(n_classes=2))


def test_initial_centers_quantiles_and_fallback():
    vals = np.arange(1, 101, dtype=float)
    c = initial_centers(vals, 3)
    np.testing.assert_allclose(c, np.quantile(vals, [0.25, 0.5, 0.75]))
    # heavily tied data: quantiles coincide, distinct centers still come out
    tied = np.r_[np.zeros(1000), [1.0, 2.0]]
    c = initial_centers(tied, 3)
    assert np.all(np.diff(c) > 0)


def _result_with(memberships, centers):
    vols = [Volume(G, m) for m in memberships]
    return ClicResult(vols, np.asarray(centers, float), Volume(G, np.ones(G.dims)), True, 1)


def test_probability_map_trivial_cases():
    one, zero = np.ones(G.dims), np.zeros(G.dims)
    assert np.all(probability_map(_result_with([zero, one], [1, 5])).data == 100)
    third = np.full(G.dims, 1 / 3)
    pm = probability_map(_result_with([third] * 3, [1, 2, 3])).data
    np.testing.assert_allclose(pm, 100 / 3)


def test_map_invariant_to_intensity_scale():
    rng = np.random.default_rng(1)
    vol, _ = ball_image(smooth_bias())
    vol = vol.with_data(vol.data + rng.normal(0, 2, G.dims))
    a = probability_map(clic_fit(vol, ClicParams(n_classes=2))).data
    b = probability_map(clic_fit(vol.with_data(3.7 * vol.data), ClicParams(n_classes=2))).data
    assert np.abs(a - b).max() < 1e-3


def test_deterministic():
    vol, _ = ball_image(smooth_bias())
    a = probability_map(clic_fit(vol)).data
    b = probability_map(clic_fit(vol)).data
    assert a.tobytes() == b.tobytes()
