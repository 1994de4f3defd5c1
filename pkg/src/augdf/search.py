"""Population-based learning of a per-layer augmentation policy schedule.

Policies live on a discrete ``P x M`` grid of (prob, mag) values. Layer 1 is
chosen by an exhaustive grid scan with cheap probe forests; every later layer
is chosen by a population of ``2k`` cascades that grow one layer at a time:
the weaker half is replaced by copies of the current best cascade, those
copies get fresh policies sampled near the stronger half's policies, and
everyone trains its next layer and is re-ranked on validation accuracy.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ._rng import derive_seed, substream
from .augment import Policy
from .cascade import CascadeModel, CascadeParams, ForwardState, accuracy, new_model, train_layer
from .errors import EmptyModel, GridExhausted, IndexOutOfGrid, ScheduleMismatch

TOP_HALF = "top-half"
BEST_ONLY = "best-only"


@dataclass(frozen=True)
class PolicyGrid:
    P: tuple
    M: tuple

    def __post_init__(self):
        P = tuple(float(p) for p in self.P)
        M = tuple(float(m) for m in self.M)
        if any(b <= a for a, b in zip(P, P[1:])) or any(b <= a for a, b in zip(M, M[1:])):
            raise ValueError("grid axes must be strictly increasing")
        if any(not 0.0 <= p <= 1.0 for p in P) or any(m <= 0 for m in M):
            raise ValueError("probabilities must lie in [0, 1] and magnitudes be positive")
        if not P or not M:
            raise ValueError("grid needs at least one cell")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "M", M)

    @property
    def shape(self):
        return len(self.P), len(self.M)

    @property
    def size(self):
        return len(self.P) * len(self.M)

    def policy(self, cell):
        i, j = cell
        self.check(cell)
        return Policy(self.P[i], self.M[j])

    def check(self, cell):
        i, j = cell
        if not (0 <= i < len(self.P) and 0 <= j < len(self.M)):
            raise IndexOutOfGrid(f"cell {cell} outside a {self.shape} grid")

    def cells(self):
        """All cells in row-major order."""
        return [(i, j) for i in range(len(self.P)) for j in range(len(self.M))]

    def locate(self, policy, tol=1e-9):
        i = [k for k, p in enumerate(self.P) if abs(p - policy.prob) <= tol]
        j = [k for k, m in enumerate(self.M) if abs(m - policy.mag) <= tol * max(1.0, m)]
        if not i or not j:
            raise ScheduleMismatch(f"policy {policy} is not on the grid")
        return i[0], j[0]

    def log10_schedule_count(self, K):
        """log10 of ``(M * N) ** K``, the number of distinct schedules."""
        return K * math.log10(self.size)

    def to_dict(self):
        return {"P": list(self.P), "M": list(self.M)}


def default_grid():
    """10 x 10: prob 0.05..0.95 by 0.1, mag 10 log-spaced values in [0.1, 4]."""
    P = tuple(round(0.05 + 0.1 * i, 10) for i in range(10))
    M = tuple(float(m) for m in np.geomspace(0.1, 4.0, 10))
    return PolicyGrid(P, M)


@dataclass(frozen=True)
class PolicySchedule:
    grid: PolicyGrid
    cells: tuple

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(tuple(int(v) for v in c) for c in self.cells))
        for c in self.cells:
            self.grid.check(c)

    @property
    def policies(self):
        return [self.grid.policy(c) for c in self.cells]

    def __len__(self):
        return len(self.cells)

    def to_json(self, seed=None, score=None):
        obj = {
            "grid": self.grid.to_dict(),
            "entries": [{"layer": k + 1, "prob": p.prob, "mag": p.mag} for k, p in enumerate(self.policies)],
            "seed": seed,
            "score": score,
        }
        return json.dumps(obj, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text, grid=None):
        obj = json.loads(text)
        file_grid = PolicyGrid(tuple(obj["grid"]["P"]), tuple(obj["grid"]["M"]))
        target = grid or file_grid
        entries = sorted(obj["entries"], key=lambda e: e["layer"])
        cells = [target.locate(Policy(e["prob"], e["mag"])) for e in entries]
        return cls(target, tuple(cells)), obj


def save_schedule(schedule, path, seed=None, score=None):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(schedule.to_json(seed, score))


def load_schedule(path, grid=None):
    with open(path, encoding="utf-8") as fh:
        return PolicySchedule.from_json(fh.read(), grid)


@dataclass
class SearchCounter:
    """Instrumentation: how many layers were trained, and at which size."""

    probe_trainings: int = 0
    full_trainings: int = 0


@dataclass
class Individual:
    model: CascadeModel
    cells: list
    score: Optional[float] = None
    state: Optional[ForwardState] = None   # cached validation pass

    def clone(self):
        # models, layers and forests are immutable, so sharing them is a deep copy
        return Individual(self.model, list(self.cells), None, self.state)


@dataclass
class Population:
    members: list
    k: int

    def __post_init__(self):
        if len(self.members) != 2 * self.k:
            raise ValueError(f"population of {len(self.members)} does not match k={self.k}")

    def sort(self):
        # stable: equal scores keep the lower member index first
        self.members.sort(key=lambda m: -m.score)

    @property
    def scores(self):
        return [m.score for m in self.members]


def probe_params(params, fraction=0.25):
    return params.scaled(fraction)


def grid_search_first_layer(train, val, grid, params=CascadeParams(), seed=0, counter=None,
                            probe_fraction=0.25, schema_digest=None):
    """Cell whose layer-1 probe model scores best on ``val``; ties go to the
    earliest cell in row-major order. All probes share one seed."""
    probe = probe_params(params, probe_fraction)
    best, best_acc = None, -1.0
    probe_seed = derive_seed(seed, "probe")
    for cell in grid.cells():
        model = train_layer(new_model(train.d, train.C, probe, schema_digest), train, grid.policy(cell), probe_seed)
        if counter is not None:
            counter.probe_trainings += 1
        acc = accuracy(ForwardState.start(val.X).advance(model.layers[0]).per_layer[0], val.labels)
        if acc > best_acc:
            best, best_acc = cell, acc
    return best


def neighbour_weights(seed_cell, grid):
    """Normalized sampling weights ``1 / (|i-x| + |j-y| + 1)`` around ``seed_cell``.

    The seed cell itself gets weight zero so that draws always differ from it.
    """
    grid.check(seed_cell)
    i, j = seed_cell
    x = np.arange(len(grid.P))[:, None]
    y = np.arange(len(grid.M))[None, :]
    w = 1.0 / (np.abs(i - x) + np.abs(j - y) + 1.0)
    w[i, j] = 0.0
    return w / w.sum()


def neighbour_search(seed_cells, count, grid, rng, exclude=()):
    """Collect ``count`` distinct cells by drawing around the seeds in turn.

    Seeds are visited round-robin. Cells already drawn, the seeds themselves and
    anything in ``exclude`` are rejected; rejection is done by zeroing those
    cells and renormalizing, which gives the same conditional distribution as
    redrawing.
    """
    seeds = [tuple(c) for c in seed_cells]
    if not seeds:
        raise ValueError("need at least one seed cell")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    banned = set(seeds) | {tuple(c) for c in exclude}
    if grid.size - len(banned) < count:
        raise GridExhausted(f"only {grid.size - len(banned)} free cells for {count} draws")
    n_cols = len(grid.M)
    out = []
    turn = 0
    while len(out) < count:
        seed = seeds[turn % len(seeds)]
        turn += 1
        w = neighbour_weights(seed, grid).ravel().copy()
        for c in banned:
            w[c[0] * n_cols + c[1]] = 0.0
        total = w.sum()
        if total <= 0.0:
            continue
        flat = int(rng.choice(w.size, p=w / total))
        cell = (flat // n_cols, flat % n_cols)
        out.append(cell)
        banned.add(cell)
    return out


def explore(pop, grid, rng, seed_mode=TOP_HALF):
    """``k`` new distinct cells sampled near the top half's latest policies
    (or near the best individual's only, with ``seed_mode="best-only"``)."""
    top = pop.members[:pop.k] if seed_mode == TOP_HALF else pop.members[:1]
    seeds = [m.cells[-1] for m in top]
    return neighbour_search(seeds, pop.k, grid, rng)


def exploit(pop):
    """Replace the lower half by copies of the best individual; keep the top half."""
    best = pop.members[0]
    members = pop.members[:pop.k] + [best.clone() for _ in range(pop.k)]
    return Population(members, pop.k)


def eval_individual(ind, val):
    """Validation accuracy of the checkpoint ensemble."""
    if not ind.model.layers:
        raise EmptyModel("individual has no trained layers")
    if ind.state is None or len(ind.state.per_layer) != ind.model.n_layers:
        ind.state = ForwardState.start(val.X)
        for layer in ind.model.layers:
            ind.state = ind.state.advance(layer)
    ind.score = accuracy(ind.state.ensemble(), val.labels)
    return ind.score


def _grow(ind, train, val, grid, cell, seed, counter):
    ind.model = train_layer(ind.model, train, grid.policy(cell), seed)
    ind.cells = ind.cells + [cell]
    base = ind.state if ind.state is not None else ForwardState.start(val.X)
    ind.state = base.advance(ind.model.layers[-1])
    counter.full_trainings += 1
    eval_individual(ind, val)


@dataclass
class SearchResult:
    best: Individual
    schedule: PolicySchedule
    population: Population
    counter: SearchCounter
    history: list = field(default_factory=list)   # per layer: sorted population scores


def run_schedule_search(train, val, grid=None, K=15, k2=8, params=CascadeParams(), seed=0,
                        explore_seed=TOP_HALF, probe_fraction=0.25, schema_digest=None, log=None):
    """Learn a ``K``-layer schedule with a population of ``k2`` cascades."""
    grid = grid or default_grid()
    if k2 < 2 or k2 % 2:
        raise ValueError("population size must be even and at least 2")
    if K < 1:
        raise ValueError("K must be >= 1")
    params = replace(params, max_layers=K)
    k = k2 // 2
    counter = SearchCounter()
    rng = substream(seed, "search")

    first = grid_search_first_layer(train, val, grid, params, seed, counter, probe_fraction, schema_digest)
    cells = [first] + neighbour_search([first], k2 - 1, grid, rng)
    members = []
    for slot, cell in enumerate(cells):
        ind = Individual(new_model(train.d, train.C, params, schema_digest), [])
        _grow(ind, train, val, grid, cell, derive_seed(seed, "train", 1, slot), counter)
        members.append(ind)
    pop = Population(members, k)
    pop.sort()
    history = [pop.scores]
    if log:
        log(f"layer 1: best {pop.members[0].score:.4f} policy {grid.policy(pop.members[0].cells[-1])}")

    for layer in range(2, K + 1):
        pop = exploit(pop)
        fresh = explore(pop, grid, rng, explore_seed)
        assigned = [m.cells[-1] for m in pop.members[:k]] + fresh
        for slot, (ind, cell) in enumerate(zip(pop.members, assigned)):
            _grow(ind, train, val, grid, cell, derive_seed(seed, "train", layer, slot), counter)
        pop.sort()
        history.append(pop.scores)
        if log:
            log(f"layer {layer}: best {pop.members[0].score:.4f} policy {grid.policy(pop.members[0].cells[-1])}")

    best = pop.members[0]
    return SearchResult(best, PolicySchedule(grid, tuple(best.cells)), pop, counter, history)


def apply_schedule(schedule, train, params=CascadeParams(), seed=0, schema_digest=None):
    """Train a fresh cascade layer by layer under a fixed schedule."""
    policies = schedule.policies if isinstance(schedule, PolicySchedule) else list(schedule)
    if not policies:
        raise ValueError("schedule is empty")
    params = replace(params, max_layers=len(policies))
    model = new_model(train.d, train.C, params, schema_digest)
    for layer, policy in enumerate(policies, start=1):
        model = train_layer(model, train, policy, derive_seed(seed, "train", layer, 0))
    return model


def vanilla_cascade(train, params=CascadeParams(), seed=0, schema_digest=None):
    """Cascade trained without augmentation on every layer."""
    return apply_schedule([Policy(0.0, 1.0)] * params.max_layers, train, params, seed, schema_digest)
