"""Domain types and exact evaluation for table-decoded distributed coders.

A fully specified system consists of, per source: a frozen high-rate scalar
quantizer, a relabeling map ("Wyner-Ziv map") from quantizer regions onto a
small transmission-index alphabet, a selection of received bit positions used
to decode that source, and a reconstruction table indexed by the packed
selected bits.

Bit conventions (fixed globally so every module agrees bit-exactly):

* The transmitted bit vector concatenates the sources' index bits in source
  order, most-significant bit first within each source.  Source ``i`` owns
  the global positions ``offset_i .. offset_i + R_i - 1`` where
  ``offset_i = sum(rates[:i])``.
* Extracting a subset of positions packs them in ascending position order,
  the bit at the smallest position becoming the most significant bit of the
  resulting cell index.  The empty subset packs to index 0.

All functions here are pure and safe to call concurrently; design algorithms
(which mutate working copies) live in :mod:`dsckit.greedy`,
:mod:`dsckit.anneal` and :mod:`dsckit.dir`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DegenerateDataError",
    "TrainingSet",
    "HighRateQuantizer",
    "WzMap",
    "BitSubsetSelector",
    "DecoderCodebook",
    "SourceSystem",
    "SystemEvaluation",
    "DecodeTask",
    "source_bit_offsets",
    "own_positions",
    "region_matrix",
    "index_matrix",
    "pack_cells",
    "pack_cells_split",
    "extract_bits",
    "encode",
    "decode",
    "complexity",
    "naive_decoder_storage",
    "distortion",
    "evaluate",
    "lagrangian",
    "uniform_weights",
]


class DegenerateDataError(ValueError):
    """Raised when the input data cannot support the requested operation."""


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainingSet:
    """Sample matrix with one row per observation and one column per source."""

    samples: np.ndarray

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 2:
            raise ValueError("samples must be a 2-D matrix (rows = observations)")
        if samples.shape[0] < 1 or samples.shape[1] < 1:
            raise ValueError("need at least one sample and one source")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")
        object.__setattr__(self, "samples", samples)

    @property
    def n_sources(self) -> int:
        return self.samples.shape[1]

    @property
    def sample_count(self) -> int:
        return self.samples.shape[0]

    def column(self, i: int) -> np.ndarray:
        return self.samples[:, i]


@dataclass(frozen=True)
class HighRateQuantizer:
    """Scalar partition of the real line into contiguous regions.

    ``boundaries`` has one entry fewer than ``codewords``.  A boundary belongs
    to the region on its right (left-closed intervals), so ``quantize(b) ==
    quantize(b + eps)`` for a boundary ``b``.
    """

    boundaries: np.ndarray
    codewords: np.ndarray

    def __post_init__(self):
        boundaries = np.asarray(self.boundaries, dtype=np.float64)
        codewords = np.asarray(self.codewords, dtype=np.float64)
        if codewords.ndim != 1 or boundaries.ndim != 1:
            raise ValueError("boundaries and codewords must be 1-D")
        if codewords.size < 2:
            raise ValueError("need at least 2 regions")
        if boundaries.size != codewords.size - 1:
            raise ValueError("boundaries must have one entry fewer than codewords")
        if not (np.all(np.isfinite(boundaries)) and np.all(np.isfinite(codewords))):
            raise ValueError("quantizer parameters must be finite")
        if np.any(np.diff(boundaries) <= 0):
            raise ValueError("boundaries must be strictly increasing")
        if np.any(np.diff(codewords) <= 0):
            raise ValueError("codewords must be strictly increasing")
        object.__setattr__(self, "boundaries", boundaries)
        object.__setattr__(self, "codewords", codewords)

    @property
    def region_count(self) -> int:
        return self.codewords.size


@dataclass(frozen=True)
class WzMap:
    """Relabels the quantizer regions with ``2**rate`` transmission indices.

    Distant regions may share a label; ambiguity is resolved at the decoder
    through bits received from correlated sources.
    """

    labels: np.ndarray
    rate: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1 or labels.size < 1:
            raise ValueError("labels must be a non-empty 1-D array")
        if self.rate < 1:
            raise ValueError("rate must be >= 1")
        if np.any(labels < 0) or np.any(labels >= (1 << self.rate)):
            raise ValueError("labels must lie in [0, 2**rate)")
        object.__setattr__(self, "labels", labels)

    @property
    def index_count(self) -> int:
        return 1 << self.rate


@dataclass(frozen=True)
class BitSubsetSelector:
    """Per-source choice of received bit positions feeding that source's table."""

    subsets: tuple

    def __post_init__(self):
        norm = []
        for s in self.subsets:
            positions = tuple(sorted(set(int(p) for p in s)))
            if positions and positions[0] < 0:
                raise ValueError("bit positions must be non-negative")
            norm.append(positions)
        object.__setattr__(self, "subsets", tuple(norm))

    @property
    def n_sources(self) -> int:
        return len(self.subsets)

    def sizes(self) -> list:
        return [len(s) for s in self.subsets]


@dataclass(frozen=True)
class DecoderCodebook:
    """Reconstruction tables, one per source, indexed by the packed selected bits.

    Unpopulated cells hold the per-source fallback value so lookups never
    miss; ``populated`` records which cells were backed by training data.
    """

    tables: tuple
    populated: tuple
    fallbacks: np.ndarray

    def __post_init__(self):
        tables = tuple(np.asarray(t, dtype=np.float64) for t in self.tables)
        populated = tuple(np.asarray(p, dtype=bool) for p in self.populated)
        fallbacks = np.asarray(self.fallbacks, dtype=np.float64)
        if len(tables) != len(populated) or fallbacks.size != len(tables):
            raise ValueError("tables, populated and fallbacks must align")
        for t, p in zip(tables, populated):
            if t.shape != p.shape:
                raise ValueError("table and populated mask shapes must match")
            if not np.all(np.isfinite(t)):
                raise ValueError("reconstruction values must be finite")
        object.__setattr__(self, "tables", tables)
        object.__setattr__(self, "populated", populated)
        object.__setattr__(self, "fallbacks", fallbacks)


@dataclass(frozen=True)
class SourceSystem:
    """A complete designed coder for a single sink.

    ``weights`` are the per-source importance weights; they must be
    non-negative and sum to 1 (within 1e-12).
    """

    quantizers: tuple
    wz_maps: tuple
    selector: BitSubsetSelector
    codebooks: DecoderCodebook
    weights: np.ndarray

    def __post_init__(self):
        quantizers = tuple(self.quantizers)
        wz_maps = tuple(self.wz_maps)
        weights = np.asarray(self.weights, dtype=np.float64)
        n = len(quantizers)
        if len(wz_maps) != n or self.selector.n_sources != n or weights.size != n:
            raise ValueError("per-source components must all have the same length")
        for q, w in zip(quantizers, wz_maps):
            if w.labels.size != q.region_count:
                raise ValueError("wz_map labels must cover every quantizer region")
        total = sum(w.rate for w in wz_maps)
        for i, subset in enumerate(self.selector.subsets):
            if subset and subset[-1] >= total:
                raise ValueError(f"selector for source {i} uses a position >= {total}")
            if self.codebooks.tables[i].size != (1 << len(subset)):
                raise ValueError(f"codebook table size mismatch for source {i}")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to 1")
        object.__setattr__(self, "quantizers", quantizers)
        object.__setattr__(self, "wz_maps", wz_maps)
        object.__setattr__(self, "weights", weights)

    @property
    def n_sources(self) -> int:
        return len(self.quantizers)

    @property
    def rates(self) -> tuple:
        return tuple(w.rate for w in self.wz_maps)

    @property
    def total_rate(self) -> int:
        return sum(self.rates)


@dataclass(frozen=True)
class SystemEvaluation:
    """Distortion breakdown of one system over one dataset."""

    distortion: float
    per_source_mse: np.ndarray
    fallback_hits: np.ndarray


@dataclass(frozen=True)
class DecodeTask:
    """One table decoder: estimate source ``target`` from the bits at ``positions``.

    ``table`` must be dense (fallback-filled) with ``2**len(positions)``
    entries.  A weighted list of tasks describes any decoder layout: the
    single-sink system uses one task per source; a multi-sink system uses one
    task per (source, sink) pair.
    """

    target: int
    weight: float
    positions: tuple
    table: np.ndarray


# ---------------------------------------------------------------------------
# Bit layout helpers
# ---------------------------------------------------------------------------

def source_bit_offsets(rates) -> np.ndarray:
    """First global bit position of each source, plus the total in the last slot."""
    rates = np.asarray(rates, dtype=np.int64)
    out = np.zeros(rates.size + 1, dtype=np.int64)
    np.cumsum(rates, out=out[1:])
    return out


def own_positions(rates, i: int) -> tuple:
    """Global positions of the bits emitted by encoder ``i``."""
    offsets = source_bit_offsets(rates)
    return tuple(range(int(offsets[i]), int(offsets[i + 1])))


def _position_map(rates):
    """Arrays mapping a global position to (source, local bit index)."""
    rates = [int(r) for r in rates]
    pos_src = np.repeat(np.arange(len(rates)), rates)
    pos_local = np.concatenate([np.arange(r) for r in rates])
    return pos_src, pos_local


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------

def region_matrix(samples: np.ndarray, quantizers) -> np.ndarray:
    """Quantizer region index of every sample, shape (T, N)."""
    samples = np.asarray(samples, dtype=np.float64)
    out = np.empty(samples.shape, dtype=np.int64)
    for i, q in enumerate(quantizers):
        out[:, i] = np.searchsorted(q.boundaries, samples[:, i], side="right")
    return out


def index_matrix(regions: np.ndarray, wz_maps) -> np.ndarray:
    """Transmission index of every sample, shape (T, N)."""
    out = np.empty(regions.shape, dtype=np.int64)
    for i, w in enumerate(wz_maps):
        out[:, i] = w.labels[regions[:, i]]
    return out


def pack_cells(indices: np.ndarray, rates, positions) -> np.ndarray:
    """Packed cell index of every sample for the given bit positions.

    ``indices`` is the (T, N) transmission-index matrix.  Positions are
    packed ascending, smallest position most significant.
    """
    positions = sorted(set(int(p) for p in positions))
    m = len(positions)
    cells = np.zeros(indices.shape[0], dtype=np.int64)
    if m == 0:
        return cells
    pos_src, pos_local = _position_map(rates)
    rates = [int(r) for r in rates]
    for out_pos, p in enumerate(positions):
        src = int(pos_src[p])
        loc = int(pos_local[p])
        bits = (indices[:, src] >> (rates[src] - 1 - loc)) & 1
        cells += bits << (m - 1 - out_pos)
    return cells


def pack_cells_split(indices: np.ndarray, rates, positions, source: int):
    """Split cell packing into a fixed part and a per-candidate part.

    Returns ``(other, contribs)`` where ``other`` (shape (T,)) packs the
    positions not owned by ``source`` and ``contribs[k]`` is the additive
    contribution of transmission index ``k`` of ``source``, so that the cell
    under candidate ``k`` is ``other + contribs[k]``.
    """
    positions = sorted(set(int(p) for p in positions))
    m = len(positions)
    pos_src, pos_local = _position_map(rates)
    rates_l = [int(r) for r in rates]
    other = np.zeros(indices.shape[0], dtype=np.int64)
    k_count = 1 << rates_l[source]
    contribs = np.zeros(k_count, dtype=np.int64)
    ks = np.arange(k_count, dtype=np.int64)
    for out_pos, p in enumerate(positions):
        src = int(pos_src[p])
        loc = int(pos_local[p])
        shift = m - 1 - out_pos
        if src == source:
            contribs += ((ks >> (rates_l[src] - 1 - loc)) & 1) << shift
        else:
            other += ((indices[:, src] >> (rates_l[src] - 1 - loc)) & 1) << shift
    return other, contribs


def index_subbits(k: int, local_bits, rate: int) -> int:
    """Pack the given local bit positions of transmission index ``k``."""
    local_bits = sorted(local_bits)
    m = len(local_bits)
    out = 0
    for j, loc in enumerate(local_bits):
        out |= ((k >> (rate - 1 - loc)) & 1) << (m - 1 - j)
    return out


def extract_bits(bits, positions) -> int:
    """Pack the bits of a transmitted vector at ``positions`` into an integer.

    Positions are taken in ascending order; the bit at the smallest position
    becomes the most significant.  The empty subset packs to 0.
    """
    bits = np.asarray(bits)
    positions = sorted(set(int(p) for p in positions))
    if positions and (positions[0] < 0 or positions[-1] >= bits.size):
        raise ValueError(f"bit position out of range [0, {bits.size})")
    out = 0
    m = len(positions)
    for j, p in enumerate(positions):
        out |= int(bits[p]) << (m - 1 - j)
    return out


def encode(x, system: SourceSystem) -> np.ndarray:
    """Encode one observation vector into the transmitted bit vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.size != system.n_sources:
        raise ValueError("observation length must equal the source count")
    bits = np.empty(system.total_rate, dtype=np.uint8)
    pos = 0
    for i, (q, w) in enumerate(zip(system.quantizers, system.wz_maps)):
        region = int(np.searchsorted(q.boundaries, x[i], side="right"))
        k = int(w.labels[region])
        for l in range(w.rate):
            bits[pos + l] = (k >> (w.rate - 1 - l)) & 1
        pos += w.rate
    return bits


def decode(bits, system: SourceSystem) -> np.ndarray:
    """Reconstruct all sources from a received bit vector."""
    out = np.empty(system.n_sources, dtype=np.float64)
    for i, subset in enumerate(system.selector.subsets):
        cell = extract_bits(bits, subset)
        out[i] = system.codebooks.tables[i][cell]
    return out


# ---------------------------------------------------------------------------
# Cost measures
# ---------------------------------------------------------------------------

def complexity(selector: BitSubsetSelector) -> float:
    """Average decoder codebook size, (1/N) * sum_i 2**|S(i)|."""
    sizes = selector.sizes()
    return sum(2.0 ** s for s in sizes) / len(sizes)


def naive_decoder_storage(n_sources: int, rates) -> int:
    """Codeword count of the monolithic lookup decoder: N * 2**(sum of rates)."""
    return int(n_sources) * (1 << int(sum(int(r) for r in rates)))


def lagrangian(distortion_value: float, size: float, lam: float) -> float:
    """Weighted design objective ``D + lam * size`` (size = complexity or cost)."""
    if lam < 0:
        raise ValueError("lam must be non-negative")
    return distortion_value + lam * size


def uniform_weights(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


# ---------------------------------------------------------------------------
# Distortion
# ---------------------------------------------------------------------------

def system_tasks(system: SourceSystem) -> list:
    """The per-source decode tasks of a single-sink system."""
    return [
        DecodeTask(i, float(system.weights[i]), system.selector.subsets[i],
                   system.codebooks.tables[i])
        for i in range(system.n_sources)
    ]


def tasks_distortion(samples: np.ndarray, indices: np.ndarray, rates, tasks) -> float:
    """Weighted empirical MSE of a set of decode tasks."""
    total = 0.0
    n = samples.shape[0]
    for task in tasks:
        if task.weight == 0.0:
            continue
        cells = pack_cells(indices, rates, task.positions)
        err = samples[:, task.target] - task.table[cells]
        total += task.weight * float(np.dot(err, err)) / n
    return total


def distortion(data: TrainingSet, system: SourceSystem) -> float:
    """Weighted empirical MSE of the system over a dataset.

    With uniform weights this is the plain per-source-and-sample average of
    squared reconstruction error.
    """
    if data.n_sources != system.n_sources:
        raise ValueError("dataset and system source counts differ")
    regions = region_matrix(data.samples, system.quantizers)
    indices = index_matrix(regions, system.wz_maps)
    return tasks_distortion(data.samples, indices, system.rates, system_tasks(system))


def evaluate(data: TrainingSet, system: SourceSystem) -> SystemEvaluation:
    """Like :func:`distortion` but with per-source MSE and fallback-hit counts."""
    if data.n_sources != system.n_sources:
        raise ValueError("dataset and system source counts differ")
    regions = region_matrix(data.samples, system.quantizers)
    indices = index_matrix(regions, system.wz_maps)
    rates = system.rates
    n = data.sample_count
    mse = np.zeros(system.n_sources)
    hits = np.zeros(system.n_sources, dtype=np.int64)
    for i in range(system.n_sources):
        cells = pack_cells(indices, rates, system.selector.subsets[i])
        err = data.samples[:, i] - system.codebooks.tables[i][cells]
        mse[i] = float(np.dot(err, err)) / n
        hits[i] = int(np.count_nonzero(~system.codebooks.populated[i][cells]))
    d = float(np.dot(system.weights, mse))
    return SystemEvaluation(d, mse, hits)
