"""Deterministic-annealing design of WZ-maps and codebooks.

During design the hard region-to-index maps are replaced by per-source
probabilistic maps.  At each temperature the index probabilities follow a
Gibbs distribution in the conditional distortions and the codebooks follow a
probability-weighted centroid rule; both are iterated to equilibrium, the
temperature is lowered geometrically, and the bit subsets are nudged by a
single low-complexity (Hamming-distance-1) update between temperatures.  At
the end the maps are hardened and polished with plain greedy sweeps.

The factorized distortion evaluation here is the workhorse: because the bit
subsets are deterministic while all randomness sits in the per-source index
maps, the expected squared error of each table decoder marginalizes source
by source, costing O(T * 2**|subset|) per decoder instead of an exponential
sum over all index tuples.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from . import greedy as _greedy
from . import model
from .curves import TradeoffPoint
from .greedy import GreedyConfig
from .model import (
    BitSubsetSelector,
    DecoderCodebook,
    DecodeTask,
    TrainingSet,
    index_subbits,
    own_positions,
)

__all__ = [
    "SoftEncoder",
    "AnnealSchedule",
    "DaResult",
    "soft_distortion",
    "conditional_distortion",
    "gibbs_update",
    "soft_codebook_update",
    "entropy",
    "run_da",
]

_CHUNK_BUDGET = 4_000_000  # cap on chunk_rows * n_cells working-set entries
_EMPTY_CELL_MASS = 1e-12


def _auto_chunk(n_rows: int, n_cells: int) -> int:
    return max(1024, min(n_rows, _CHUNK_BUDGET // max(n_cells, 1)))


@dataclass(frozen=True)
class SoftEncoder:
    """Per-source probabilistic WZ-maps: probs[i][q, k] = P(index k | region q)."""

    probs: tuple

    def __post_init__(self):
        probs = tuple(np.asarray(p, dtype=np.float64) for p in self.probs)
        for p in probs:
            if p.ndim != 2:
                raise ValueError("each probability table must be 2-D (regions x indices)")
            if np.any(p < 0):
                raise ValueError("probabilities must be non-negative")
            if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9):
                raise ValueError("each row must sum to 1 (within 1e-9)")
        object.__setattr__(self, "probs", probs)

    @staticmethod
    def uniform(quantizers, rates) -> "SoftEncoder":
        rates = [int(r) for r in (rates if not np.isscalar(rates)
                                  else [rates] * len(quantizers))]
        return SoftEncoder(tuple(
            np.full((q.region_count, 1 << r), 1.0 / (1 << r))
            for q, r in zip(quantizers, rates)))

    @staticmethod
    def from_labels(labels, rates) -> "SoftEncoder":
        """One-hot (deterministic) encoder from hard label arrays."""
        rates = [int(r) for r in (rates if not np.isscalar(rates)
                                  else [rates] * len(labels))]
        probs = []
        for lab, r in zip(labels, rates):
            p = np.zeros((len(lab), 1 << r))
            p[np.arange(len(lab)), np.asarray(lab, dtype=np.int64)] = 1.0
            probs.append(p)
        return SoftEncoder(tuple(probs))

    def harden(self) -> list:
        """Hard labels: per-row argmax, ties toward the smallest index."""
        return [np.argmax(p, axis=1).astype(np.int64) for p in self.probs]


@dataclass(frozen=True)
class AnnealSchedule:
    """Cooling schedule and equilibrium knobs.

    ``t_init`` defaults to twice the largest per-source training variance and
    ``t_min`` to ``t_min_factor * t_init``.  ``perturbation`` is the relative
    amplitude of the multiplicative noise applied to the probabilities at
    each new temperature.  Annealing exits early once every occupied row is
    one-hot beyond ``entropy_floor`` (continuing would be a no-op).
    """

    t_init: float | None = None
    alpha: float = 0.9
    t_min: float | None = None
    t_min_factor: float = 1e-4
    equilibrium_tol: float = 1e-5
    max_inner: int = 50
    perturbation: float = 1e-3
    entropy_floor: float = 1e-10

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if self.t_init is not None and self.t_init <= 0:
            raise ValueError("t_init must be positive")

    def resolve(self, samples: np.ndarray):
        t0 = self.t_init if self.t_init is not None else 2.0 * float(
            np.max(samples.var(axis=0)))
        tmin = self.t_min if self.t_min is not None else self.t_min_factor * t0
        if not 0.0 < tmin < t0:
            raise ValueError("need 0 < t_min < t_init")
        return t0, tmin


# ---------------------------------------------------------------------------
# Factorized soft evaluation over decode tasks
# ---------------------------------------------------------------------------

def _group_tasks(tasks):
    """Group tasks by identical positions so cell probabilities are shared."""
    groups = {}
    for task in tasks:
        groups.setdefault(task.positions, []).append(task)
    return sorted(groups.items())


def _source_groups(rates, positions):
    """Sorted positions split per contributing source: [(src, locals, shifts)].

    ``shifts`` are the output bit shifts of each local bit inside the packed
    cell index (positions ascending, smallest position most significant).
    """
    positions = sorted(positions)
    m = len(positions)
    pos_src, pos_local = model._position_map(rates)
    by_src = {}
    for idx, p in enumerate(positions):
        src, loc = int(pos_src[p]), int(pos_local[p])
        by_src.setdefault(src, ([], []))
        by_src[src][0].append(loc)
        by_src[src][1].append(m - 1 - idx)
    return [(src, tuple(by_src[src][0]), tuple(by_src[src][1]))
            for src in sorted(by_src)]


def _factor_matrix(p: np.ndarray, rate: int, local_bits) -> np.ndarray:
    """Aggregate an index distribution onto the extracted-bit patterns.

    Entry [q, b] is the probability that the bits of the index at
    ``local_bits`` equal pattern ``b`` given region ``q``.  Rows sum to 1.
    """
    m = len(local_bits)
    out = np.zeros((p.shape[0], 1 << m))
    for k in range(p.shape[1]):
        out[:, index_subbits(k, local_bits, rate)] += p[:, k]
    return out


def _spread(shifts) -> np.ndarray:
    """Map a packed sub-pattern to its additive contribution in the full cell."""
    m = len(shifts)
    vs = np.arange(1 << m, dtype=np.int64)
    out = np.zeros(1 << m, dtype=np.int64)
    for j, sh in enumerate(shifts):
        out += ((vs >> (m - 1 - j)) & 1) << sh
    return out


def _cell_prob_chunk(regions_chunk, factors):
    """(chunk, prod sizes) joint probability over the concatenated patterns.

    ``factors`` is a list of (src, factor_matrix); sources must be ascending
    so the product index equals the packed cell index.
    """
    out = np.ones((regions_chunk.shape[0], 1))
    for src, fm in factors:
        rows = fm[regions_chunk[:, src]]
        out = (out[:, :, None] * rows[:, None, :]).reshape(out.shape[0], -1)
    return out


def _soft_tasks_distortion(X, regions, probs, rates, tasks) -> float:
    n = X.shape[0]
    total = 0.0
    for positions, group in _group_tasks(tasks):
        groups = _source_groups(rates, positions)
        factors = [(src, _factor_matrix(probs[src], rates[src], locs))
                   for src, locs, _ in groups]
        accs = [0.0] * len(group)
        chunk = _auto_chunk(n, 1 << len(positions))
        for lo in range(0, n, chunk):
            sl = slice(lo, lo + chunk)
            p_cells = _cell_prob_chunk(regions[sl], factors)
            for gi, task in enumerate(group):
                if task.weight == 0.0:
                    continue
                x = X[sl, task.target]
                e_sq = p_cells @ (task.table * task.table)
                e_mean = p_cells @ task.table
                accs[gi] += float(np.sum(e_sq - 2.0 * x * e_mean) + np.dot(x, x))
        for gi, task in enumerate(group):
            total += task.weight * accs[gi] / n
    return total


def _forced_scores(X, regions, probs, rates, tasks, i,
                   include_constant_tasks=True):
    """Per-sample cost under every forced index of source ``i``, shape (T, K_i).

    Entry [t, k] is sum_j weight_j * E[(x_j - xhat_j)^2 | source i sends k],
    the expectation taken over the other sources' soft maps; tasks that read
    no bit of source ``i`` contribute the same (fully soft) term to every
    column.  The annealing loop passes ``include_constant_tasks=False`` to
    skip those terms: they are row constants, so the Gibbs rows are unchanged
    while the dominant cost of a sweep drops sharply.
    """
    n = X.shape[0]
    k_count = probs[i].shape[1]
    out = np.zeros((n, k_count))
    for positions, group in _group_tasks(tasks):
        groups = _source_groups(rates, positions)
        i_part = [(locs, shifts) for src, locs, shifts in groups if src == i]
        rest = [(src, locs, shifts) for src, locs, shifts in groups if src != i]
        if not i_part and not include_constant_tasks:
            continue
        rest_factors = [(src, _factor_matrix(probs[src], rates[src], locs))
                        for src, locs, _ in rest]
        chunk = _auto_chunk(n, 1 << len(positions))
        if not i_part:
            # constant in k: fully soft expected error, same for every column
            for task in group:
                if task.weight == 0.0:
                    continue
                for lo in range(0, n, chunk):
                    sl = slice(lo, lo + chunk)
                    p_cells = _cell_prob_chunk(regions[sl], rest_factors)
                    x = X[sl, task.target]
                    e = (p_cells @ (task.table * task.table)
                         - 2.0 * x * (p_cells @ task.table) + x * x)
                    out[sl] += task.weight * e[:, None]
            continue
        locs, shifts = i_part[0]
        i_spread = _spread(shifts)
        rest_shifts = [sh for _, _, shs in rest for sh in shs]
        rest_spread = _spread(tuple(rest_shifts))
        cell_of = rest_spread[:, None] + i_spread[None, :]
        bmap = np.array([index_subbits(k, locs, rates[i]) for k in range(k_count)])
        for task in group:
            if task.weight == 0.0:
                continue
            tbl = task.table[cell_of]          # (2^rest, 2^|i bits|)
            tbl2 = tbl * tbl
            for lo in range(0, n, chunk):
                sl = slice(lo, lo + chunk)
                p_rest = _cell_prob_chunk(regions[sl], rest_factors)
                a = p_rest @ tbl2              # E[xhat^2 | pattern b]
                b = p_rest @ tbl               # E[xhat   | pattern b]
                x = X[sl, task.target]
                e = a[:, bmap] - 2.0 * x[:, None] * b[:, bmap] + (x * x)[:, None]
                out[sl] += task.weight * e
    return out


def _soft_tasks_codebooks(X, regions, probs, rates, position_groups):
    """Probability-weighted cell sums for each (positions, targets) group.

    Returns, per group, ``(mass, {target: weighted_sum})`` where ``mass`` is
    sum_t P(cell | t) and ``weighted_sum`` is sum_t P(cell | t) * x_t.
    """
    n = X.shape[0]
    results = []
    for positions, targets in position_groups:
        groups = _source_groups(rates, positions)
        factors = [(src, _factor_matrix(probs[src], rates[src], locs))
                   for src, locs, _ in groups]
        n_cells = 1 << len(positions)
        mass = np.zeros(n_cells)
        sums = {t: np.zeros(n_cells) for t in targets}
        chunk = _auto_chunk(n, n_cells)
        for lo in range(0, n, chunk):
            sl = slice(lo, lo + chunk)
            p_cells = _cell_prob_chunk(regions[sl], factors)
            mass += p_cells.sum(axis=0)
            for t in targets:
                sums[t] += p_cells.T @ X[sl, t]
        results.append((mass, sums))
    return results


def _table_from_mass(mass, weighted_sum, fallback):
    populated = mass >= _EMPTY_CELL_MASS
    table = np.full(mass.shape, fallback, dtype=np.float64)
    table[populated] = weighted_sum[populated] / mass[populated]
    return table, populated


def _soft_sse_from_stats(mass, weighted_sum, table, x_sq_sum):
    """Soft SSE of a freshly updated table, straight from the cell statistics.

    sum_t sum_c P(c|t)(table[c] - x_t)^2 = sum x^2 + sum_c (table[c]^2 * mass
    - 2 table[c] * weighted_sum[c]); no extra pass over the samples needed.
    """
    return float(x_sq_sum + np.dot(table * table, mass)
                 - 2.0 * np.dot(table, weighted_sum))


def _row_entropies(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return -terms.sum(axis=1)


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

def _build_tasks(selector, codebooks, weights):
    return [DecodeTask(i, float(weights[i]), selector.subsets[i], codebooks.tables[i])
            for i in range(selector.n_sources)]


def soft_distortion(data: TrainingSet, quantizers, soft: SoftEncoder,
                    selector: BitSubsetSelector, codebooks: DecoderCodebook,
                    weights=None) -> float:
    """Expected weighted MSE under the soft encoder.

    Equals :func:`dsckit.model.distortion` exactly when the encoder is
    one-hot, and equals the direct sum over all index tuples in general,
    while costing only O(T * sum_i 2**|S(i)|).
    """
    if weights is None:
        weights = model.uniform_weights(data.n_sources)
    rates = tuple(int(math.log2(p.shape[1])) for p in soft.probs)
    regions = model.region_matrix(data.samples, quantizers)
    tasks = _build_tasks(selector, codebooks, weights)
    return _soft_tasks_distortion(data.samples, regions, soft.probs, rates, tasks)


def conditional_distortion(i: int, q: int, k: int, data: TrainingSet, quantizers,
                           soft: SoftEncoder, selector: BitSubsetSelector,
                           codebooks: DecoderCodebook, weights=None) -> float:
    """Soft distortion restricted to the samples of region ``q`` of source ``i``,
    with source ``i`` forced to send index ``k`` (all other sources soft).

    Keeps the global 1/|T| normalization of :func:`soft_distortion`, so
    summing over regions with the soft row weights recovers the full
    distortion.  An empty region returns 0.
    """
    if weights is None:
        weights = model.uniform_weights(data.n_sources)
    rates = tuple(int(math.log2(p.shape[1])) for p in soft.probs)
    regions = model.region_matrix(data.samples, quantizers)
    mask = regions[:, i] == q
    if not np.any(mask):
        return 0.0
    tasks = _build_tasks(selector, codebooks, weights)
    scores = _forced_scores(data.samples[mask], regions[mask], soft.probs,
                            rates, tasks, i)
    return float(scores[:, k].sum()) / data.sample_count


def _gibbs_rows(scores, regions_i, n_regions, n_sources, temperature):
    """Gibbs rows from per-sample forced scores.

    Each row uses the region-conditional mean score scaled by the source
    count; that scaling makes the update the exact minimizer of the free
    energy D - T*H, so the free energy cannot increase.  Rows of regions
    unseen in training are uniform.
    """
    k_count = scores.shape[1]
    counts = np.bincount(regions_i, minlength=n_regions).astype(np.float64)
    sums = np.empty((n_regions, k_count))
    for k in range(k_count):
        sums[:, k] = np.bincount(regions_i, weights=scores[:, k], minlength=n_regions)
    occupied = counts > 0
    g = np.zeros_like(sums)
    g[occupied] = n_sources * sums[occupied] / counts[occupied, None]
    g -= g.min(axis=1, keepdims=True)
    rows = np.exp(-g / temperature)
    rows /= rows.sum(axis=1, keepdims=True)
    rows[~occupied] = 1.0 / k_count
    return rows


def gibbs_update(i: int, data: TrainingSet, quantizers, soft: SoftEncoder,
                 selector: BitSubsetSelector, codebooks: DecoderCodebook,
                 temperature: float, weights=None) -> np.ndarray:
    """New probability rows for source ``i`` at the given temperature.

    Row ``q`` is proportional to ``exp(-G[q, k] / T)`` where ``G[q, k]`` is
    the mean cost over region-``q`` training samples of deterministically
    sending ``k`` (max-subtracted for numerical stability).  As ``T`` grows
    the rows approach uniform; as ``T -> 0`` they harden onto the argmin,
    uniform over exact ties.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if weights is None:
        weights = model.uniform_weights(data.n_sources)
    rates = tuple(int(math.log2(p.shape[1])) for p in soft.probs)
    regions = model.region_matrix(data.samples, quantizers)
    tasks = _build_tasks(selector, codebooks, weights)
    scores = _forced_scores(data.samples, regions, soft.probs, rates, tasks, i)
    return _gibbs_rows(scores, regions[:, i], quantizers[i].region_count,
                       data.n_sources, temperature)


def soft_codebook_update(data: TrainingSet, quantizers, soft: SoftEncoder,
                         selector: BitSubsetSelector) -> DecoderCodebook:
    """Probability-weighted centroid tables.

    Each cell holds sum_t P(cell|t) x_t normalized by sum_t P(cell|t); cells
    with total probability mass below 1e-12 fall back to the per-source
    training mean.  With a one-hot encoder this is exactly the hard centroid
    update.
    """
    rates = tuple(int(math.log2(p.shape[1])) for p in soft.probs)
    regions = model.region_matrix(data.samples, quantizers)
    fallbacks = data.samples.mean(axis=0)
    position_groups = [(subset, [i]) for i, subset in enumerate(selector.subsets)]
    stats = _soft_tasks_codebooks(data.samples, regions, soft.probs, rates,
                                  position_groups)
    tables, populated = [], []
    for i, (mass, sums) in enumerate(stats):
        t, p = _table_from_mass(mass, sums[i], float(fallbacks[i]))
        tables.append(t)
        populated.append(p)
    return DecoderCodebook(tuple(tables), tuple(populated), fallbacks)


def entropy(data: TrainingSet, quantizers, soft: SoftEncoder) -> float:
    """Average index randomness: -(1/(N|T|)) sum over samples, sources and
    indices of P log P (natural log, 0 log 0 = 0)."""
    regions = model.region_matrix(data.samples, quantizers)
    total = 0.0
    for i, p in enumerate(soft.probs):
        counts = np.bincount(regions[:, i], minlength=p.shape[0])
        total += float(np.dot(counts, _row_entropies(p)))
    return total / (data.n_sources * data.sample_count)


# ---------------------------------------------------------------------------
# The annealing loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DaResult:
    system: object
    point: TradeoffPoint
    anneal_trace: list      # one dict per temperature step
    finish: object          # GreedyResult of the hardened polish


def run_da(data: TrainingSet, quantizers, rates, lam: float,
           schedule: AnnealSchedule | None = None,
           config: GreedyConfig | None = None, weights=None,
           init_selector=None) -> DaResult:
    """Anneal WZ-maps and codebooks, nudging the bit subsets while cooling.

    At each temperature the probabilities are perturbed, then Gibbs and
    codebook updates alternate to equilibrium (relative free-energy change
    below ``equilibrium_tol``); a Hamming-distance-1 subset update runs
    between temperature steps, scored on the hardened snapshot.  Below
    ``t_min`` the maps are hardened and polished with greedy sweeps.
    """
    t_start = time.perf_counter()
    if schedule is None:
        schedule = AnnealSchedule()
    if config is None:
        config = GreedyConfig(lam=lam)
    config = replace(config, lam=lam)
    rates = _greedy._normalize_rates(rates, data.n_sources)
    if weights is None:
        weights = model.uniform_weights(data.n_sources)
    weights = np.asarray(weights, dtype=np.float64)

    X = data.samples
    regions = model.region_matrix(X, quantizers)
    n = data.n_sources
    fallbacks = X.mean(axis=0)
    t_now, t_min = schedule.resolve(X)
    rng = np.random.default_rng([config.rng_seed, 1000003])

    probs = [np.full((quantizers[i].region_count, 1 << rates[i]),
                     1.0 / (1 << rates[i])) for i in range(n)]
    subsets = [tuple(sorted(s)) for s in init_selector] if init_selector is not None \
        else [own_positions(rates, i) for i in range(n)]

    # hard working state shared with the greedy machinery, used for the
    # between-temperature subset updates
    hard = _greedy._init_state(data, quantizers, rates, weights)
    x_sq = np.einsum("ti,ti->i", X, X)

    def rebuild_tables():
        """Fresh soft-centroid tables plus the distortion they achieve."""
        groups = [(subset, [i]) for i, subset in enumerate(subsets)]
        stats = _soft_tasks_codebooks(X, regions, probs, rates, groups)
        tables = []
        d_avg = 0.0
        for i, (mass, sums) in enumerate(stats):
            t, _ = _table_from_mass(mass, sums[i], float(fallbacks[i]))
            tables.append(t)
            d_avg += float(weights[i]) * _soft_sse_from_stats(
                mass, sums[i], t, x_sq[i]) / X.shape[0]
        return tables, d_avg

    def tasks_for(tables):
        return [DecodeTask(i, float(weights[i]), subsets[i], tables[i])
                for i in range(n)]

    tables, _ = rebuild_tables()
    occupied = [np.bincount(regions[:, i], minlength=quantizers[i].region_count) > 0
                for i in range(n)]
    trace = []
    while True:
        # perturb, then settle to equilibrium at this temperature
        for i in range(n):
            noise = 1.0 + schedule.perturbation * rng.uniform(-1.0, 1.0,
                                                              size=probs[i].shape)
            p = probs[i] * noise
            probs[i] = p / p.sum(axis=1, keepdims=True)
        # tables must reflect the perturbed probabilities before the first
        # Gibbs pass, otherwise a symmetric table erases the perturbation
        tables, d_avg = rebuild_tables()
        inner_j = []
        prev_j = None
        for _ in range(schedule.max_inner):
            for i in range(n):
                scores = _forced_scores(X, regions, probs, rates,
                                        tasks_for(tables), i,
                                        include_constant_tasks=False)
                probs[i] = _gibbs_rows(scores, regions[:, i],
                                       quantizers[i].region_count, n, t_now)
            tables, d_avg = rebuild_tables()
            h_counts = sum(float(np.dot(np.bincount(regions[:, i],
                                                    minlength=probs[i].shape[0]),
                                        _row_entropies(probs[i])))
                           for i in range(n))
            h = h_counts / (n * X.shape[0])
            j = d_avg - t_now * h
            inner_j.append(j)
            if prev_j is not None and abs(prev_j - j) <= \
                    schedule.equilibrium_tol * max(abs(prev_j), 1e-12):
                break
            prev_j = j

        equilibrium_d = d_avg

        # low-complexity subset update on the hardened snapshot
        subset_changed = False
        if config.selector_search != "fixed":
            hard.labels = [np.argmax(probs[i], axis=1).astype(np.int64)
                           for i in range(n)]
            hard.subsets = list(subsets)
            _greedy._refresh_indices(hard)
            for i in range(n):
                subset_changed |= _greedy._update_selector(
                    hard, i, lam, "hamming1", config.own_bits_mandatory,
                    config.full_search_cap)
            if subset_changed:
                subsets = list(hard.subsets)
                tables, d_avg = rebuild_tables()

        trace.append({"temperature": t_now, "distortion": equilibrium_d,
                      "entropy": h, "free_energy": j,
                      "inner_free_energy": inner_j,
                      "subsets": tuple(subsets)})
        if t_now <= t_min:
            break
        max_row_entropy = max(
            (float(_row_entropies(probs[i])[occupied[i]].max())
             for i in range(n) if occupied[i].any()), default=0.0)
        if max_row_entropy < schedule.entropy_floor:
            # every occupied row is one-hot: Gibbs and codebook updates now
            # coincide with the hard updates, so the remaining descent
            # (including any further subset growth) is exactly what the
            # hardened greedy polish below performs, at a fraction of the cost
            break
        t_now *= schedule.alpha

    # harden and polish with plain greedy sweeps from this initialization
    labels = [np.argmax(probs[i], axis=1).astype(np.int64) for i in range(n)]
    finish = _greedy.run_greedy(data, quantizers, rates,
                                replace(config, restarts=1),
                                init_selector=subsets, init_labels=labels,
                                weights=weights)
    point = TradeoffPoint.make(
        lam=lam, distortion=finish.point.distortion, size=finish.point.size,
        size_kind="complexity", optimizer="da", seed=config.rng_seed,
        wall_time_s=time.perf_counter() - t_start, split="train")
    return DaResult(finish.system, point, trace, finish)
