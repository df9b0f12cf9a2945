"""Label fusion by (weighted) majority vote and SIMPLE atlas selection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .metrics import dice
from .volume import LabelVolume, check_same_grid


class FusionError(ValueError):
    pass


@dataclass
class AtlasRecord:
    id: int
    propagated_label: LabelVolume
    weight: float = 1.0
    alive: bool = True

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("atlas weight must be >= 0")


@dataclass(frozen=True)
class SimpleParams:
    alpha: float = 1.0
    max_iters: int = 10
    min_alive: int = 3
    final_count: int = 10

    def __post_init__(self):
        if not self.final_count >= self.min_alive >= 1:
            raise ValueError("need final_count >= min_alive >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class SimpleIteration:
    iteration: int
    alive: list[int]
    performance: dict[int, float]
    removed: list[int]


@dataclass
class SimpleResult:
    selected: list[int]
    weights: dict[int, float]
    history: list[SimpleIteration] = field(default_factory=list)
    converged: bool = False


def majority_vote(labels: list[LabelVolume]) -> LabelVolume:
    """Foreground where strictly more than half the labels vote 1; ties go to background."""
    if not labels:
        raise FusionError("majority vote needs at least one label")
    grid = check_same_grid([lab.grid for lab in labels])
    votes = np.zeros(grid.dims, dtype=np.int64)
    for lab in labels:
        votes += lab.data
    return LabelVolume(grid, 2 * votes > len(labels))


def weighted_majority_vote(records: list[AtlasRecord]) -> LabelVolume:
    alive = [r for r in records if r.alive]
    if not alive:
        raise FusionError("no alive records to fuse")
    total = float(sum(r.weight for r in alive))
    if total <= 0:
        raise FusionError("all alive records have zero weight")
    grid = check_same_grid([r.propagated_label.grid for r in alive])
    # sort by id so the float accumulation order does not depend on input order
    mass = np.zeros(grid.dims, dtype=np.float64)
    for r in sorted(alive, key=lambda r: r.id):
        mass += r.weight * r.propagated_label.data
    return LabelVolume(grid, mass > 0.5 * total)


def simple_select(records: list[AtlasRecord], params: SimpleParams = SimpleParams()) -> SimpleResult:
    """Iteratively fuse, score each atlas by Dice against the fusion, drop outliers.

    Atlases scoring below mean - alpha * std are discarded, never leaving
    fewer than ``min_alive``. Stops when an iteration removes nothing.
    """
    if len(records) < params.min_alive:
        raise FusionError(
            f"SIMPLE needs at least min_alive={params.min_alive} atlases, got {len(records)}"
        )
    recs = {r.id: AtlasRecord(r.id, r.propagated_label, 1.0, True) for r in records}
    if len(recs) != len(records):
        raise FusionError("atlas ids must be unique")
    history: list[SimpleIteration] = []
    perf: dict[int, float] = {}
    converged = False

    for it in range(1, params.max_iters + 1):
        alive = sorted(i for i, r in recs.items() if r.alive)
        fused = weighted_majority_vote([recs[i] for i in alive])
        perf = {i: dice(recs[i].propagated_label, fused) for i in alive}
        for i in alive:
            recs[i].weight = perf[i]

        p = np.array([perf[i] for i in alive])
        threshold = p.mean() - params.alpha * p.std()
        losers = [i for i in alive if perf[i] < threshold]
        room = len(alive) - params.min_alive
        if len(losers) > room:
            # drop the worst, keep the best-scoring survivors
            losers = sorted(losers, key=lambda i: (perf[i], i))[:max(room, 0)]
        for i in losers:
            recs[i].alive = False
        history.append(SimpleIteration(it, alive, dict(perf), sorted(losers)))
        if not losers:
            converged = True
            break
        if all(recs[i].weight == 0 for i in recs if recs[i].alive):
            break

    alive = [i for i, r in recs.items() if r.alive]
    ranked = sorted(alive, key=lambda i: (-perf.get(i, 0.0), i))
    selected = sorted(ranked[: params.final_count])
    return SimpleResult(selected, {i: recs[i].weight for i in selected}, history, converged)


def random_select(ids, k: int, seed: int) -> list[int]:
    ids = list(ids)
    if k > len(ids):
        raise FusionError(f"cannot pick {k} atlases from {len(ids)}")
    if k < 0:
        raise FusionError("k must be non-negative")
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(ids), size=k, replace=False)
    return sorted(ids[i] for i in picked)


def format_history(result: SimpleResult) -> str:
    """Line-oriented report: iteration, id, performance, alive flag after the iteration."""
    lines = ["iteration\tid\tperformance\talive"]
    for h in result.history:
        for i in h.alive:
            lines.append(f"{h.iteration}\t{i}\t{h.performance[i]:.6f}\t{int(i not in h.removed)}")
    return "\n".join(lines) + "\n"
