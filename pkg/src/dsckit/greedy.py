"""Greedy iterative descent over WZ-maps, bit-subset selectors and codebooks.

Each sweep applies, in a fixed order, the three locally optimal updates
(relabel quantizer regions, reselect decoded bit subsets, recompute centroid
tables).  Every individual update leaves the objective ``D + lam * C``
non-increasing, so the run terminates at a fixed point of all three.

Candidate bit subsets are always scored with freshly computed centroid
tables for that candidate (one pass over the training samples per
candidate); the accepted subset is committed together with its fresh table,
which is what makes the descent guarantee hold even when the incumbent
table is stale.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from . import model
from .curves import TradeoffPoint
from .model import (
    BitSubsetSelector,
    DecoderCodebook,
    DecodeTask,
    SourceSystem,
    TrainingSet,
    WzMap,
    own_positions,
    pack_cells,
    pack_cells_split,
)

__all__ = [
    "GreedyConfig",
    "GreedyResult",
    "run_greedy",
    "update_wz_map",
    "update_selector_full",
    "update_selector_hamming1",
    "update_codebooks",
    "correlation_groups",
    "grouping_baseline",
    "GroupingBaselineResult",
]


@dataclass(frozen=True)
class GreedyConfig:
    """Knobs for one greedy design run.

    ``selector_search`` is ``"hamming1"`` (score the current subset plus the
    subsets differing in exactly one position), ``"full"`` (exact minimizer
    over all subsets; refused above ``full_search_cap`` total bits) or
    ``"fixed"`` (selector never updated).  With ``own_bits_mandatory`` every
    source's subset always contains the bits its own encoder emits.
    """

    lam: float = 0.0
    restarts: int = 25
    max_sweeps: int = 100
    rng_seed: int = 0
    selector_search: str = "hamming1"
    own_bits_mandatory: bool = True
    full_search_cap: int = 16
    track_descent: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.selector_search not in ("hamming1", "full", "fixed"):
            raise ValueError(f"unknown selector_search: {self.selector_search}")


@dataclass
class _State:
    """Mutable working copy of one design (training tensors are shared, read-only)."""

    X: np.ndarray            # (T, N) samples
    regions: np.ndarray      # (T, N) quantizer regions, fixed
    K: np.ndarray            # (T, N) current transmission indices
    rates: tuple
    quantizers: tuple
    labels: list             # per source int64 arrays
    subsets: list            # per source sorted position tuples
    tables: list             # per source dense reconstruction tables
    populated: list
    fallbacks: np.ndarray    # per source training means
    weights: np.ndarray

    @property
    def n_sources(self):
        return self.X.shape[1]

    @property
    def total_rate(self):
        return sum(self.rates)

    def tasks(self):
        return [DecodeTask(i, float(self.weights[i]), self.subsets[i], self.tables[i])
                for i in range(self.n_sources)]


def _normalize_rates(rates, n_sources):
    if np.isscalar(rates):
        return tuple([int(rates)] * n_sources)
    rates = tuple(int(r) for r in rates)
    if len(rates) != n_sources:
        raise ValueError("rates length must equal the source count")
    return rates


def _fresh_state(base: _State) -> _State:
    """Fresh working state sharing the read-only training tensors of ``base``."""
    return _State(
        X=base.X, regions=base.regions, K=np.empty_like(base.regions),
        rates=base.rates, quantizers=base.quantizers,
        labels=[l.copy() for l in base.labels], subsets=list(base.subsets),
        tables=list(base.tables), populated=list(base.populated),
        fallbacks=base.fallbacks, weights=base.weights)


def _init_state(data: TrainingSet, quantizers, rates, weights) -> _State:
    rates = _normalize_rates(rates, data.n_sources)
    if weights is None:
        weights = model.uniform_weights(data.n_sources)
    weights = np.asarray(weights, dtype=np.float64)
    regions = model.region_matrix(data.samples, quantizers)
    n = data.n_sources
    return _State(
        X=data.samples,
        regions=regions,
        K=np.zeros_like(regions),
        rates=rates,
        quantizers=tuple(quantizers),
        labels=[np.zeros(quantizers[i].region_count, dtype=np.int64) for i in range(n)],
        subsets=[own_positions(rates, i) for i in range(n)],
        tables=[np.zeros(1) for _ in range(n)],
        populated=[np.zeros(1, dtype=bool) for _ in range(n)],
        fallbacks=data.samples.mean(axis=0),
        weights=weights,
    )


def _state_from_system(system: SourceSystem, data: TrainingSet) -> _State:
    # fallbacks stay the means of `data`: updates computed against one
    # dataset must use that dataset's zero-information reconstruction
    state = _init_state(data, system.quantizers, system.rates, system.weights)
    state.labels = [w.labels.copy() for w in system.wz_maps]
    state.subsets = list(system.selector.subsets)
    state.tables = [t.copy() for t in system.codebooks.tables]
    state.populated = [p.copy() for p in system.codebooks.populated]
    _refresh_indices(state)
    return state


def _refresh_indices(state: _State, source=None):
    if source is None:
        for i in range(state.n_sources):
            state.K[:, i] = state.labels[i][state.regions[:, i]]
    else:
        state.K[:, source] = state.labels[source][state.regions[:, source]]


def _centroid_table(cells: np.ndarray, x: np.ndarray, n_cells: int, fallback: float):
    counts = np.bincount(cells, minlength=n_cells)
    sums = np.bincount(cells, weights=x, minlength=n_cells)
    populated = counts > 0
    table = np.full(n_cells, fallback, dtype=np.float64)
    table[populated] = sums[populated] / counts[populated]
    return table, populated, counts, sums


def _refresh_codebook(state: _State, i: int):
    cells = pack_cells(state.K, state.rates, state.subsets[i])
    n_cells = 1 << len(state.subsets[i])
    table, populated, _, _ = _centroid_table(
        cells, state.X[:, i], n_cells, float(state.fallbacks[i]))
    state.tables[i] = table
    state.populated[i] = populated


def _subset_score(state: _State, i: int, positions, lam: float):
    """Score a candidate subset with its own fresh centroid table.

    Returns ``(score, table, populated)`` where score is the source's
    contribution to the Lagrangian: weight * MSE + lam * 2**|subset| / N.
    """
    positions = tuple(sorted(positions))
    cells = pack_cells(state.K, state.rates, positions)
    n_cells = 1 << len(positions)
    x = state.X[:, i]
    table, populated, counts, sums = _centroid_table(
        cells, x, n_cells, float(state.fallbacks[i]))
    sse = float(np.dot(x, x))
    pop = populated
    sse -= float(np.sum(sums[pop] * sums[pop] / counts[pop]))
    score = float(state.weights[i]) * sse / state.X.shape[0] \
        + lam * float(n_cells) / state.n_sources
    return score, table, populated


def _distortion(state: _State) -> float:
    total = 0.0
    n = state.X.shape[0]
    for i in range(state.n_sources):
        if state.weights[i] == 0.0:
            continue
        cells = pack_cells(state.K, state.rates, state.subsets[i])
        err = state.X[:, i] - state.tables[i][cells]
        total += float(state.weights[i]) * float(np.dot(err, err)) / n
    return total


def _complexity(state: _State) -> float:
    return sum(2.0 ** len(s) for s in state.subsets) / state.n_sources


def _lagrangian(state: _State, lam: float) -> float:
    return _distortion(state) + lam * _complexity(state)


# ---------------------------------------------------------------------------
# The three update operations (task-parameterized cores, reused by `dir`)
# ---------------------------------------------------------------------------

def wz_label_scores(X, regions, K, rates, tasks, i: int, n_regions: int):
    """Per-region, per-candidate-label weighted squared error sums for source ``i``.

    Only decode tasks whose positions include bits of source ``i`` vary with
    the label, so the others are omitted; the returned scores therefore
    differ from the full objective by a label-independent constant per
    region.  Returns None when no task reads any bit of source ``i``.
    """
    own = set(own_positions(rates, i))
    k_count = 1 << rates[i]
    per_sample = None
    for task in tasks:
        if task.weight == 0.0 or not own.intersection(task.positions):
            continue
        if per_sample is None:
            per_sample = np.zeros((X.shape[0], k_count))
        other, contribs = pack_cells_split(K, rates, task.positions, i)
        x = X[:, task.target]
        for k in range(k_count):
            err = x - task.table[other + contribs[k]]
            per_sample[:, k] += task.weight * err * err
    if per_sample is None:
        return None
    scores = np.empty((n_regions, k_count))
    for k in range(k_count):
        scores[:, k] = np.bincount(regions[:, i], weights=per_sample[:, k],
                                   minlength=n_regions)
    return scores


def _update_wz(state: _State, i: int) -> bool:
    scores = wz_label_scores(state.X, state.regions, state.K, state.rates,
                             state.tasks(), i, state.quantizers[i].region_count)
    if scores is None:
        return False  # nobody decodes these bits; any labeling is equivalent
    counts = np.bincount(state.regions[:, i],
                         minlength=state.quantizers[i].region_count)
    new = np.argmin(scores, axis=1).astype(np.int64)  # ties -> smallest label
    empty = counts == 0
    new[empty] = state.labels[i][empty]  # regions unseen in training keep their label
    changed = bool(np.any(new != state.labels[i]))
    if changed:
        state.labels[i] = new
        _refresh_indices(state, i)
    return changed


def _selector_candidates(state: _State, i: int, search: str,
                         own_mandatory: bool, cap: int):
    total = state.total_rate
    own = own_positions(state.rates, i) if own_mandatory else ()
    current = state.subsets[i]
    if search == "full":
        if total > cap:
            raise ValueError(
                f"full selector search over 2**{total} subsets exceeds the cap "
                f"({cap} total bits); use hamming1")
        own_mask = 0
        for p in own:
            own_mask |= 1 << p
        cands = []
        for mask in range(1 << total):
            if mask & own_mask != own_mask:
                continue
            cands.append(tuple(p for p in range(total) if (mask >> p) & 1))
        return cands
    cands = [current]
    cur = set(current)
    for p in range(total):
        if p in cur:
            if p in own:
                continue  # mandated own bits are never dropped
            cands.append(tuple(sorted(cur - {p})))
        else:
            cands.append(tuple(sorted(cur | {p})))
    return cands


def _update_selector(state: _State, i: int, lam: float, search: str,
                     own_mandatory: bool, cap: int) -> bool:
    cands = _selector_candidates(state, i, search, own_mandatory, cap)
    best = None
    for cand in cands:
        score, table, populated = _subset_score(state, i, cand, lam)
        key = (score, cand)
        if best is None or key < best[0]:
            best = (key, cand, table, populated)
    _, cand, table, populated = best
    changed = cand != state.subsets[i]
    state.subsets[i] = cand
    state.tables[i] = table
    state.populated[i] = populated
    return changed


def _sweep(state: _State, config: GreedyConfig, trace=None) -> bool:
    """One full sweep (all WZ-maps, all selectors, all codebooks).

    Returns True when any discrete assignment changed.  ``trace`` collects
    ``(op, lagrangian)`` pairs after every individual update.
    """
    lam = config.lam
    changed = False

    def log(op):
        if trace is not None:
            trace.append((op, _lagrangian(state, lam)))

    for i in range(state.n_sources):
        changed |= _update_wz(state, i)
        log(f"wz[{i}]")
    if config.selector_search != "fixed":
        for i in range(state.n_sources):
            changed |= _update_selector(state, i, lam, config.selector_search,
                                        config.own_bits_mandatory,
                                        config.full_search_cap)
            log(f"selector[{i}]")
    for i in range(state.n_sources):
        _refresh_codebook(state, i)
    log("codebooks")
    return changed


def _state_system(state: _State) -> SourceSystem:
    return SourceSystem(
        quantizers=state.quantizers,
        wz_maps=tuple(WzMap(state.labels[i].copy(), state.rates[i])
                      for i in range(state.n_sources)),
        selector=BitSubsetSelector(tuple(state.subsets)),
        codebooks=DecoderCodebook(tuple(t.copy() for t in state.tables),
                                  tuple(p.copy() for p in state.populated),
                                  state.fallbacks.copy()),
        weights=state.weights,
    )


@dataclass(frozen=True)
class GreedyResult:
    system: SourceSystem
    point: TradeoffPoint
    descent: list
    sweeps: int
    restart_lagrangians: list


def run_greedy(data: TrainingSet, quantizers, rates, config: GreedyConfig,
               init_selector=None, init_labels=None, weights=None) -> GreedyResult:
    """Best-of-restarts greedy design.

    WZ-maps start from seeded uniform-random labels per restart; selectors
    start at each source's own bits (or ``init_selector``).  Identical
    ``rng_seed`` gives a bit-identical result.
    """
    t0 = time.perf_counter()
    base = _init_state(data, quantizers, rates, weights)
    if init_selector is not None:
        init_selector = [tuple(sorted(s)) for s in init_selector]
    best = None
    restart_finals = []
    for r in range(config.restarts):
        state = _fresh_state(base)
        rng = np.random.default_rng([config.rng_seed, r])
        if init_labels is not None:
            state.labels = [np.asarray(l, dtype=np.int64).copy() for l in init_labels]
        else:
            state.labels = [rng.integers(0, 1 << state.rates[i],
                                         size=state.quantizers[i].region_count,
                                         dtype=np.int64)
                            for i in range(state.n_sources)]
        state.subsets = list(init_selector) if init_selector is not None \
            else [own_positions(state.rates, i) for i in range(state.n_sources)]
        state.tables = [None] * state.n_sources
        state.populated = [None] * state.n_sources
        _refresh_indices(state)
        for i in range(state.n_sources):
            _refresh_codebook(state, i)

        trace = [] if config.track_descent else None
        if trace is not None:
            trace.append(("init", _lagrangian(state, config.lam)))
        sweeps = 0
        for sweeps in range(1, config.max_sweeps + 1):
            if not _sweep(state, config, trace):
                break
        final = _lagrangian(state, config.lam)
        restart_finals.append(final)
        if best is None or final < best[0]:
            best = (final, state, trace, sweeps)

    final, state, trace, sweeps = best
    d = _distortion(state)
    point = TradeoffPoint.make(
        lam=config.lam, distortion=d, size=_complexity(state),
        size_kind="complexity", optimizer="greedy", seed=config.rng_seed,
        wall_time_s=time.perf_counter() - t0, split="train")
    return GreedyResult(_state_system(state), point, trace or [], sweeps,
                        restart_finals)


# ---------------------------------------------------------------------------
# Public single-step operators (used by tests and by the annealer's finish)
# ---------------------------------------------------------------------------

def update_wz_map(i: int, system: SourceSystem, data: TrainingSet) -> WzMap:
    """Locally optimal relabeling of source ``i``'s regions, all else fixed.

    Each region takes the label minimizing the summed weighted squared error
    of the training samples in that region, with ties broken toward the
    smallest label; empty regions keep their current label.
    """
    state = _state_from_system(system, data)
    _update_wz(state, i)
    return WzMap(state.labels[i], state.rates[i])


def update_selector_full(i: int, system: SourceSystem, data: TrainingSet,
                         lam: float, own_bits_mandatory: bool = False,
                         full_search_cap: int = 16) -> tuple:
    """Exact best bit subset for source ``i`` over all 2**R_r candidates."""
    state = _state_from_system(system, data)
    _update_selector(state, i, lam, "full", own_bits_mandatory, full_search_cap)
    return state.subsets[i]


def update_selector_hamming1(i: int, system: SourceSystem, data: TrainingSet,
                             lam: float, own_bits_mandatory: bool = False) -> tuple:
    """Best subset among the current one and its Hamming-distance-1 neighbors."""
    state = _state_from_system(system, data)
    _update_selector(state, i, lam, "hamming1", own_bits_mandatory, 0)
    return state.subsets[i]


def update_codebooks(system: SourceSystem, data: TrainingSet) -> DecoderCodebook:
    """Centroid tables for every source: each populated cell holds the mean of
    the training samples mapping to it; unpopulated cells hold the fallback."""
    state = _state_from_system(system, data)
    for i in range(state.n_sources):
        _refresh_codebook(state, i)
    return DecoderCodebook(tuple(state.tables), tuple(state.populated),
                           state.fallbacks)


# ---------------------------------------------------------------------------
# Correlation-grouping baseline
# ---------------------------------------------------------------------------

def correlation_groups(data: TrainingSet, group_sizes) -> list:
    """Partition sources into groups of the given sizes, greedily keeping the
    most correlated sources together.

    Groups are filled largest first: each group is seeded with the unassigned
    source having the largest total absolute correlation to the other
    unassigned sources, then grown by the source most correlated (on average)
    with the current members.  Ties break toward the smallest index.
    """
    sizes = sorted((int(s) for s in group_sizes), reverse=True)
    n = data.n_sources
    if sum(sizes) != n or any(s < 1 for s in sizes):
        raise ValueError("group sizes must be positive and partition the sources")
    if n == 1:
        return [[0]]
    corr = np.abs(np.corrcoef(data.samples.T))
    np.fill_diagonal(corr, 0.0)
    unassigned = list(range(n))
    groups = []
    for s in sizes:
        seed = min(unassigned, key=lambda i: (-corr[i, unassigned].sum(), i))
        group = [seed]
        while len(group) < s:
            rest = [i for i in unassigned if i not in group]
            group.append(min(rest, key=lambda i: (-corr[i, group].mean(), i)))
        groups.append(sorted(group))
        unassigned = [i for i in unassigned if i not in group]
    return groups


@dataclass(frozen=True)
class GroupingBaselineResult:
    groups: list
    systems: list       # one designed SourceSystem per group
    points: list        # one TradeoffPoint per requested lam (same D and C)
    distortion: float
    complexity: float


def grouping_distortion(groups, systems, data: TrainingSet, weights=None) -> float:
    """Weighted MSE of a per-group design evaluated jointly on ``data``."""
    if weights is None:
        weights = model.uniform_weights(data.n_sources)
    total = 0.0
    for group, system in zip(groups, systems):
        sub = TrainingSet(data.samples[:, group])
        ev = model.evaluate(sub, system)
        for pos, src in enumerate(group):
            total += float(weights[src]) * float(ev.per_source_mse[pos])
    return total


def grouping_baseline(data: TrainingSet, quantizers, rates, group_sizes,
                      lambdas, config: GreedyConfig, groups=None,
                      weights=None) -> GroupingBaselineResult:
    """Conventional full-complexity DSC designed independently per source group.

    Within each group every source decodes from all of the group's bits, so a
    group with total rate R_g contributes |group| * 2**R_g stored codewords.
    The trade-off against complexity comes from varying the group sizes, not
    from ``lambdas`` (which only shift the reported Lagrangians).
    """
    rates = _normalize_rates(rates, data.n_sources)
    if groups is None:
        groups = correlation_groups(data, group_sizes)
    if sorted(i for g in groups for i in g) != list(range(data.n_sources)):
        raise ValueError("groups must partition the sources")
    if weights is None:
        weights = model.uniform_weights(data.n_sources)
    t0 = time.perf_counter()
    systems = []
    for group in groups:
        sub = TrainingSet(data.samples[:, group])
        sub_quant = [quantizers[i] for i in group]
        sub_rates = tuple(rates[i] for i in group)
        r_g = sum(sub_rates)
        full = [tuple(range(r_g))] * len(group)
        sub_config = replace(config, lam=0.0, selector_search="fixed")
        res = run_greedy(sub, sub_quant, sub_rates, sub_config, init_selector=full)
        systems.append(res.system)
    d = grouping_distortion(groups, systems, data, weights)
    c = sum(len(g) * 2.0 ** sum(rates[i] for i in g) for g in groups) / data.n_sources
    wall = time.perf_counter() - t0
    points = [TradeoffPoint.make(lam=float(lam), distortion=d, size=c,
                                 size_kind="complexity", optimizer="grouping",
                                 seed=config.rng_seed, wall_time_s=wall,
                                 split="train",
                                 extra={"groups": [list(g) for g in groups]})
              for lam in lambdas]
    return GroupingBaselineResult(groups, systems, points, d, c)
