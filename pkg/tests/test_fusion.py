import itertools

import numpy as np
import pytest

from laseg.fusion import (
    AtlasRecord,
    FusionError,
    SimpleParams,
    format_history,
    majority_vote,
    random_select,
    simple_select,
    weighted_majority_vote,
)
from laseg.phantom import PhantomParams, corrupt_label, generate_phantom
from laseg.volume import Grid, LabelVolume

G1 = Grid((1, 1, 1), (1, 1, 1), (0, 0, 0))
G = Grid((6, 5, 4), (1, 1, 1), (0, 0, 0))

# first run of random_select(range(99), 10, seed=42), frozen
GOLDEN_RANDOM = [8, 9, 19, 40, 60, 67, 70, 81, 93, 95]


def voxel(v):
    return LabelVolume(G1, np.full((1, 1, 1), v))


def test_majority_vote_examples():
    rng = np.random.default_rng(0)
    lab = LabelVolume(G, rng.random(G.dims) > 0.5)
    assert np.array_equal(majority_vote([lab]).data, lab.data)
    assert majority_vote([voxel(1), voxel(1), voxel(0)]).data.item() == 1
    for a, b in itertools.product((0, 1), repeat=2):
        assert majority_vote([voxel(a), voxel(b)]).data.item() == int(a and b)
    with pytest.raises(FusionError):
        majority_vote([])


def test_weighted_vote_examples():
    recs = [AtlasRecord(0, voxel(1), 3.0), AtlasRecord(1, voxel(0), 1.0), AtlasRecord(2, voxel(0), 1.0)]
    assert weighted_majority_vote(recs).data.item() == 1
    assert weighted_majority_vote([AtlasRecord(5, voxel(1), 0.01)]).data.item() == 1
    with pytest.raises(FusionError):
        weighted_majority_vote([AtlasRecord(0, voxel(1), 0.0)])


@pytest.mark.parametrize("seed", range(5))
def test_equal_weights_reduce_to_majority_and_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    labs = [LabelVolume(G, rng.random(G.dims) > 0.5) for _ in range(int(rng.integers(1, 8)))]
    w = float(rng.uniform(0.1, 2))
    recs = [AtlasRecord(i, l, w) for i, l in enumerate(labs)]
    assert np.array_equal(weighted_majority_vote(recs).data, majority_vote(labs).data)
    weighted = [AtlasRecord(i, l, float(rng.random())) for i, l in enumerate(labs)]
    perm = [weighted[i] for i in rng.permutation(len(weighted))]
    assert np.array_equal(weighted_majority_vote(weighted).data, weighted_majority_vote(perm).data)


def test_simple_identical_records_converge_immediately():
    lab = LabelVolume(G, np.random.default_rng(1).random(G.dims) > 0.4)
    res = simple_select([AtlasRecord(i, lab) for i in range(6)], SimpleParams())
    assert res.converged and len(res.history) == 1
    assert res.selected == list(range(6))
    assert all(p == 1.0 for p in res.history[0].performance.values())


def test_simple_min_alive_equals_count():
    rng = np.random.default_rng(2)
    recs = [AtlasRecord(i, LabelVolume(G, rng.random(G.dims) > 0.5)) for i in range(3)]
    res = simple_select(recs, SimpleParams(min_alive=3))
    assert res.converged and len(res.history) == 1 and res.selected == [0, 1, 2]
    with pytest.raises(FusionError):
        simple_select(recs[:2], SimpleParams(min_alive=3))


def test_simple_removes_blobs():
    p = PhantomParams(dims=(32, 32, 32), spacing=(3.0, 3.0, 3.0))
    _, lab = generate_phantom(p)
    good = [AtlasRecord(i, lab) for i in range(10)]
    bad = [AtlasRecord(10 + j, corrupt_label(lab, 0.9, seed=j)) for j in range(5)]
    res = simple_select(good + bad, SimpleParams())
    dead = set(range(15)) - set(res.history[-1].alive) | set(res.history[-1].removed)
    assert set(range(10, 15)) <= dead
    assert set(res.selected) <= set(range(10))
    sizes = [len(h.alive) for h in res.history]
    assert sizes == sorted(sizes, reverse=True)
    report = format_history(res)
    assert report.splitlines()[0] == "iteration\tid\tperformance\talive"
    assert len(report.splitlines()) == 1 + sum(sizes)


def test_random_select():
    ids = list(range(7))
    assert random_select(ids, 7, seed=3) == ids
    assert random_select(range(99), 10, 42) == random_select(range(99), 10, 42)
    with pytest.raises(FusionError):
        random_select(ids, 8, 0)


def test_random_select_golden():
    got = random_select(range(99), 10, seed=42)
    assert len(set(got)) == 10 and got == sorted(got)
    assert got == GOLDEN_RANDOM
