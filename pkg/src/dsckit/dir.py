"""Network model, exact Steiner costs and dispersive routing design.

Each transmitted bit is assigned a destination set of sinks and travels
along a minimum Steiner tree to them, so the communication cost of a system
is the sum of per-bit tree costs.  The joint design minimizes
``D + lam * W`` with the same sweep structure as the single-sink designers:
WZ-map updates, per-bit destination updates (scored with fresh centroid
tables at the affected sinks) and codebook refreshes, each leaving the
objective non-increasing.

Conventional routing (every bit of a source delivered to exactly its
requesting sinks) is a point of the feasible set, so a dispersive design
initialized from the conventional solution can never end up worse.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from . import anneal as _anneal
from . import greedy as _greedy
from . import model
from .curves import TradeoffPoint
from .greedy import GreedyConfig
from .model import DecodeTask, TrainingSet, WzMap, pack_cells

__all__ = [
    "InfeasibleNetworkError",
    "NetworkGraph",
    "TrafficMatrix",
    "RouterAssignment",
    "SteinerCostTable",
    "DirCodebooks",
    "DirSystem",
    "DirResult",
    "steiner_table",
    "steiner_tables",
    "communication_cost",
    "dir_distortion",
    "update_router",
    "run_dir_design",
    "conventional_baseline",
    "broadcast_baseline",
    "load_network",
    "random_deployment",
    "nearest_sink_traffic",
]

_MAX_EXACT_SINKS = 12


class InfeasibleNetworkError(ValueError):
    """Raised when the network cannot carry the requested traffic."""


# ---------------------------------------------------------------------------
# Network types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NetworkGraph:
    """Weighted undirected graph with designated source and sink nodes."""

    n_nodes: int
    edges: tuple                 # (u, v, weight) triples
    source_nodes: tuple          # node id of source i
    sink_nodes: tuple            # node id of sink j

    def __post_init__(self):
        edges = []
        for u, v, w in self.edges:
            u, v, w = int(u), int(v), float(w)
            if not 0 <= u < self.n_nodes or not 0 <= v < self.n_nodes:
                raise ValueError(f"edge ({u},{v}) references an unknown node")
            if u == v:
                raise ValueError("self-loops are not allowed")
            if not math.isfinite(w) or w < 0:
                raise ValueError("edge weights must be finite and non-negative")
            edges.append((u, v, w))
        sources = tuple(int(s) for s in self.source_nodes)
        sinks = tuple(int(s) for s in self.sink_nodes)
        roles = list(sources) + list(sinks)
        if len(set(roles)) != len(roles):
            raise ValueError("source and sink nodes must be distinct")
        for nid in roles:
            if not 0 <= nid < self.n_nodes:
                raise ValueError(f"role node {nid} out of range")
        object.__setattr__(self, "edges", tuple(edges))
        object.__setattr__(self, "source_nodes", sources)
        object.__setattr__(self, "sink_nodes", sinks)
        if not self._connected():
            raise InfeasibleNetworkError("graph is not connected")

    def _connected(self) -> bool:
        adj = [[] for _ in range(self.n_nodes)]
        for u, v, _ in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        seen = [False] * self.n_nodes
        stack = [0]
        seen[0] = True
        while stack:
            node = stack.pop()
            for nxt in adj[node]:
                if not seen[nxt]:
                    seen[nxt] = True
                    stack.append(nxt)
        return all(seen)

    @property
    def n_sources(self) -> int:
        return len(self.source_nodes)

    @property
    def n_sinks(self) -> int:
        return len(self.sink_nodes)

    def distance_matrix(self) -> np.ndarray:
        best = {}
        for u, v, w in self.edges:  # parallel edges collapse to the cheapest
            key = (u, v) if u < v else (v, u)
            if key not in best or w < best[key]:
                best[key] = w
        rows = [k[0] for k in best] + [k[1] for k in best]
        cols = [k[1] for k in best] + [k[0] for k in best]
        vals = list(best.values()) * 2
        mat = csr_matrix((vals, (rows, cols)), shape=(self.n_nodes, self.n_nodes))
        return dijkstra(mat, directed=False)


@dataclass(frozen=True)
class TrafficMatrix:
    """Binary request matrix: requests[i, j] == 1 when sink j reconstructs source i."""

    requests: np.ndarray

    def __post_init__(self):
        req = np.asarray(self.requests, dtype=np.int64)
        if req.ndim != 2:
            raise ValueError("requests must be an N x M matrix")
        if not np.all((req == 0) | (req == 1)):
            raise ValueError("requests must be 0/1")
        if np.any(req.sum(axis=1) < 1):
            raise ValueError("every source must be requested by at least one sink")
        object.__setattr__(self, "requests", req)

    @property
    def n_sources(self) -> int:
        return self.requests.shape[0]

    @property
    def n_sinks(self) -> int:
        return self.requests.shape[1]

    def requested_sinks(self, i: int) -> tuple:
        return tuple(int(j) for j in np.flatnonzero(self.requests[i]))

    def uniform_weights(self) -> np.ndarray:
        """Importance weights: uniform over the requested (source, sink) pairs."""
        w = self.requests.astype(np.float64)
        return w / w.sum()


@dataclass(frozen=True)
class RouterAssignment:
    """Destination sink set of every transmitted bit.

    ``dests[i][b]`` is the sorted tuple of sink indices receiving local bit
    ``b`` of source ``i``.  The empty tuple means the bit is sent nowhere
    (zero cost, unavailable to every decoder).
    """

    dests: tuple

    def __post_init__(self):
        norm = tuple(tuple(tuple(sorted(set(int(s) for s in bit))) for bit in src)
                     for src in self.dests)
        object.__setattr__(self, "dests", norm)

    @staticmethod
    def conventional(traffic: TrafficMatrix, rates) -> "RouterAssignment":
        """Every bit of source i goes to exactly the sinks requesting source i."""
        return RouterAssignment(tuple(
            tuple(traffic.requested_sinks(i) for _ in range(int(rates[i])))
            for i in range(traffic.n_sources)))

    @staticmethod
    def broadcast(n_sources: int, n_sinks: int, rates) -> "RouterAssignment":
        every = tuple(range(n_sinks))
        return RouterAssignment(tuple(
            tuple(every for _ in range(int(rates[i]))) for i in range(n_sources)))

    @staticmethod
    def silent(n_sources: int, rates) -> "RouterAssignment":
        return RouterAssignment(tuple(
            tuple(() for _ in range(int(rates[i]))) for i in range(n_sources)))

    def sink_positions(self, rates, n_sinks=None) -> list:
        """Global bit positions arriving at each sink, ascending."""
        if n_sinks is None:
            n_sinks = max((s + 1 for src in self.dests for bit in src for s in bit),
                          default=0)
        return _positions_of(self.dests, rates, n_sinks)


@dataclass(frozen=True)
class SteinerCostTable:
    """Minimum tree cost from one source to every subset of sinks.

    ``costs[mask]`` is the weight of the cheapest tree connecting the source
    node to the sinks in ``mask``; the empty set costs 0.  The table is
    monotone and subadditive in the sink set by construction.
    """

    costs: np.ndarray
    n_sinks: int

    def cost(self, sinks) -> float:
        mask = 0
        for j in sinks:
            if not 0 <= int(j) < self.n_sinks:
                raise ValueError(f"sink index {j} out of range")
            mask |= 1 << int(j)
        return float(self.costs[mask])


def _steiner_dp(graph: NetworkGraph) -> np.ndarray:
    """Exact tree costs dp[mask][v] connecting node v to the sinks in mask.

    Subset dynamic program over the sink set on the metric closure: merge two
    complementary sub-trees at a node, then re-root through the all-pairs
    shortest-path matrix.  Exponential in the sink count, exact; refused
    above _MAX_EXACT_SINKS sinks.
    """
    m = graph.n_sinks
    if m > _MAX_EXACT_SINKS:
        raise InfeasibleNetworkError(
            f"exact Steiner costs limited to {_MAX_EXACT_SINKS} sinks (got {m})")
    dist = graph.distance_matrix()
    if not np.all(np.isfinite(dist)):
        raise InfeasibleNetworkError("graph is not connected")
    n = graph.n_nodes
    dp = np.zeros((1 << m, n))
    for j, sink in enumerate(graph.sink_nodes):
        dp[1 << j] = dist[sink]
    for mask in range(1, 1 << m):
        if mask & (mask - 1) == 0:
            continue  # singletons are shortest paths, already set
        merge = np.full(n, np.inf)
        sub = (mask - 1) & mask
        while sub:
            other = mask ^ sub
            if sub <= other:
                np.minimum(merge, dp[sub] + dp[other], out=merge)
            sub = (sub - 1) & mask
        dp[mask] = np.min(merge[:, None] + dist, axis=0)
    return dp


def steiner_tables(graph: NetworkGraph) -> list:
    """One exact cost table per source (the subset program is shared)."""
    dp = _steiner_dp(graph)
    return [SteinerCostTable(dp[:, node].copy(), graph.n_sinks)
            for node in graph.source_nodes]


def steiner_table(graph: NetworkGraph, source_i: int) -> SteinerCostTable:
    return steiner_tables(graph)[source_i]


def communication_cost(routers: RouterAssignment, tables) -> float:
    """Total cost: each bit pays the Steiner cost of its destination set."""
    total = 0.0
    for i, src in enumerate(routers.dests):
        for sinks in src:
            total += tables[i].cost(sinks)
    return total


# ---------------------------------------------------------------------------
# Multi-sink systems
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DirCodebooks:
    """Per-sink reconstruction tables over the bits arriving at that sink.

    ``tables[j]`` has one row per source, ``2**len(sink_positions[j])``
    columns; ``populated[j]`` marks cells visited by training data (shared
    across sources at a sink).
    """

    sink_positions: tuple
    tables: tuple
    populated: tuple
    fallbacks: np.ndarray


@dataclass(frozen=True)
class DirSystem:
    """A complete multi-sink coder with per-bit dispersive routing."""

    quantizers: tuple
    wz_maps: tuple
    routers: RouterAssignment
    codebooks: DirCodebooks
    weights: np.ndarray          # (N, M) importance of source i at sink j

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64)
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be non-negative and sum to 1")
        rates = tuple(w.rate for w in self.wz_maps)
        stored = list(self.codebooks.sink_positions)
        derived = self.routers.sink_positions(rates, n_sinks=len(stored))
        for j, pos in enumerate(stored):
            if tuple(pos) != tuple(derived[j]):
                raise ValueError(f"codebook positions at sink {j} do not match routers")
        object.__setattr__(self, "weights", weights)

    @property
    def n_sources(self) -> int:
        return len(self.quantizers)

    @property
    def n_sinks(self) -> int:
        return len(self.codebooks.sink_positions)

    @property
    def rates(self) -> tuple:
        return tuple(w.rate for w in self.wz_maps)


def _dir_tasks(weights, sink_positions, tables):
    tasks = []
    n_sources, n_sinks = weights.shape
    for j in range(n_sinks):
        for i in range(n_sources):
            if weights[i, j] == 0.0:
                continue
            tasks.append(DecodeTask(i, float(weights[i, j]), sink_positions[j],
                                    tables[j][i]))
    return tasks


def dir_distortion(data: TrainingSet, system: DirSystem) -> float:
    """Empirical weighted MSE over all requested (source, sink) pairs."""
    regions = model.region_matrix(data.samples, system.quantizers)
    indices = model.index_matrix(regions, system.wz_maps)
    tasks = _dir_tasks(system.weights, system.codebooks.sink_positions,
                       system.codebooks.tables)
    return model.tasks_distortion(data.samples, indices, system.rates, tasks)


# ---------------------------------------------------------------------------
# Design state
# ---------------------------------------------------------------------------

@dataclass
class _DirState:
    X: np.ndarray
    regions: np.ndarray
    K: np.ndarray
    rates: tuple
    quantizers: tuple
    labels: list
    dests: list              # per source, list of per-bit sorted sink tuples
    sink_positions: list
    tables: list             # per sink (N, cells) arrays
    populated: list
    fallbacks: np.ndarray
    weights: np.ndarray      # (N, M)
    steiner: list
    n_sinks: int

    @property
    def n_sources(self):
        return self.X.shape[1]

    def tasks(self):
        return _dir_tasks(self.weights, self.sink_positions, self.tables)


def _positions_of(dests, rates, n_sinks):
    offsets = model.source_bit_offsets(rates)
    out = [[] for _ in range(n_sinks)]
    for i, src in enumerate(dests):
        for b, sinks in enumerate(src):
            for j in sinks:
                if not 0 <= j < n_sinks:
                    raise ValueError(f"bit {b} of source {i} routed to unknown "
                                     f"sink {j}")
                out[j].append(int(offsets[i]) + b)
    return [tuple(sorted(p)) for p in out]


def _refresh_sink(state: _DirState, j: int):
    positions = state.sink_positions[j]
    cells = pack_cells(state.K, state.rates, positions)
    n_cells = 1 << len(positions)
    counts = np.bincount(cells, minlength=n_cells)
    populated = counts > 0
    table = np.empty((state.n_sources, n_cells))
    for i in range(state.n_sources):
        sums = np.bincount(cells, weights=state.X[:, i], minlength=n_cells)
        row = np.full(n_cells, state.fallbacks[i])
        row[populated] = sums[populated] / counts[populated]
        table[i] = row
    state.tables[j] = table
    state.populated[j] = populated


def _sink_distortion_from(state: _DirState, j: int, positions, table) -> float:
    cells = pack_cells(state.K, state.rates, positions)
    total = 0.0
    n = state.X.shape[0]
    for i in range(state.n_sources):
        w = float(state.weights[i, j])
        if w == 0.0:
            continue
        err = state.X[:, i] - table[i][cells]
        total += w * float(np.dot(err, err)) / n
    return total


def _fresh_sink(state: _DirState, positions):
    """Centroid tables (all sources) for a candidate bit arrival set."""
    cells = pack_cells(state.K, state.rates, positions)
    n_cells = 1 << len(positions)
    counts = np.bincount(cells, minlength=n_cells)
    populated = counts > 0
    table = np.empty((state.n_sources, n_cells))
    sse_by_source = np.zeros(state.n_sources)
    n = state.X.shape[0]
    for i in range(state.n_sources):
        x = state.X[:, i]
        sums = np.bincount(cells, weights=x, minlength=n_cells)
        row = np.full(n_cells, state.fallbacks[i])
        row[populated] = sums[populated] / counts[populated]
        table[i] = row
        sse = float(np.dot(x, x)) - float(
            np.sum(sums[populated] ** 2 / counts[populated]))
        sse_by_source[i] = sse / n
    return table, populated, sse_by_source


def _dir_distortion_state(state: _DirState) -> float:
    return sum(_sink_distortion_from(state, j, state.sink_positions[j],
                                     state.tables[j])
               for j in range(state.n_sinks))


def _dir_cost(state: _DirState) -> float:
    total = 0.0
    for i, src in enumerate(state.dests):
        for sinks in src:
            total += state.steiner[i].cost(sinks)
    return total


def _dir_lagrangian(state: _DirState, lam: float) -> float:
    return _dir_distortion_state(state) + lam * _dir_cost(state)


def _router_candidates(n_sinks: int, current, search: str):
    if search == "full":
        cands = []
        for mask in range(1 << n_sinks):
            cands.append(tuple(j for j in range(n_sinks) if (mask >> j) & 1))
        return cands
    cands = [tuple(current)]
    cur = set(current)
    for j in range(n_sinks):
        if j in cur:
            cands.append(tuple(sorted(cur - {j})))
        else:
            cands.append(tuple(sorted(cur | {j})))
    return cands


def _update_router_bit(state: _DirState, i: int, bit: int, lam: float,
                       search: str) -> bool:
    """Best destination set for one bit, fresh tables at the affected sinks."""
    current = state.dests[i][bit]
    d_cache = [_sink_distortion_from(state, j, state.sink_positions[j],
                                     state.tables[j])
               for j in range(state.n_sinks)]
    d_total = sum(d_cache)
    cost_other = _dir_cost(state) - state.steiner[i].cost(current)
    offsets = model.source_bit_offsets(state.rates)
    pos = int(offsets[i]) + bit

    best = None
    for cand in _router_candidates(state.n_sinks, current, search):
        affected = set(cand) ^ set(current)
        d = d_total
        fresh = {}
        for j in affected:
            if j in cand:
                positions = tuple(sorted(state.sink_positions[j] + (pos,)))
            else:
                positions = tuple(p for p in state.sink_positions[j] if p != pos)
            table, populated, sse = _fresh_sink(state, positions)
            d_j = float(np.dot(state.weights[:, j], sse))
            fresh[j] = (positions, table, populated)
            d += d_j - d_cache[j]
        score = d + lam * (cost_other + state.steiner[i].cost(cand))
        key = (score, cand)
        if best is None or key < best[0]:
            best = (key, cand, fresh)

    _, cand, fresh = best
    if cand == current:
        return False
    state.dests[i][bit] = cand
    for j, (positions, table, populated) in fresh.items():
        state.sink_positions[j] = positions
        state.tables[j] = table
        state.populated[j] = populated
    return True


def _update_wz_dir(state: _DirState, i: int) -> bool:
    scores = _greedy.wz_label_scores(state.X, state.regions, state.K, state.rates,
                                     state.tasks(), i,
                                     state.quantizers[i].region_count)
    if scores is None:
        return False
    counts = np.bincount(state.regions[:, i],
                         minlength=state.quantizers[i].region_count)
    new = np.argmin(scores, axis=1).astype(np.int64)
    empty = counts == 0
    new[empty] = state.labels[i][empty]
    changed = bool(np.any(new != state.labels[i]))
    if changed:
        state.labels[i] = new
        state.K[:, i] = new[state.regions[:, i]]
    return changed


def _dir_state(data: TrainingSet, n_sinks: int, quantizers, rates, weights,
               tables, regions=None) -> _DirState:
    rates = _greedy._normalize_rates(rates, data.n_sources)
    if regions is None:
        regions = model.region_matrix(data.samples, quantizers)
    return _DirState(
        X=data.samples, regions=regions, K=np.zeros_like(regions), rates=rates,
        quantizers=tuple(quantizers),
        labels=[np.zeros(q.region_count, dtype=np.int64) for q in quantizers],
        dests=[[() for _ in range(rates[i])] for i in range(data.n_sources)],
        sink_positions=[() for _ in range(n_sinks)],
        tables=[np.zeros((data.n_sources, 1)) for _ in range(n_sinks)],
        populated=[np.zeros(1, dtype=bool) for _ in range(n_sinks)],
        fallbacks=data.samples.mean(axis=0),
        weights=weights, steiner=tables, n_sinks=n_sinks)


def _load_assignment(state: _DirState, routers: RouterAssignment):
    state.dests = [list(src) for src in routers.dests]
    state.sink_positions = _positions_of(state.dests, state.rates, state.n_sinks)


def _state_dir_system(state: _DirState) -> DirSystem:
    return DirSystem(
        quantizers=state.quantizers,
        wz_maps=tuple(WzMap(state.labels[i].copy(), state.rates[i])
                      for i in range(state.n_sources)),
        routers=RouterAssignment(tuple(tuple(src) for src in state.dests)),
        codebooks=DirCodebooks(tuple(state.sink_positions),
                               tuple(t.copy() for t in state.tables),
                               tuple(p.copy() for p in state.populated),
                               state.fallbacks.copy()),
        weights=state.weights)


# ---------------------------------------------------------------------------
# Joint design
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DirResult:
    system: DirSystem
    point: TradeoffPoint
    descent: list
    sweeps: int
    restart_lagrangians: list


def _dir_sweep(state: _DirState, lam: float, config: GreedyConfig,
               router_search: str, fixed_routers: bool, trace=None) -> bool:
    changed = False

    def log(op):
        if trace is not None:
            trace.append((op, _dir_lagrangian(state, lam)))

    for i in range(state.n_sources):
        changed |= _update_wz_dir(state, i)
        log(f"wz[{i}]")
    if not fixed_routers:
        for i in range(state.n_sources):
            for b in range(state.rates[i]):
                changed |= _update_router_bit(state, i, b, lam, router_search)
                log(f"router[{i}.{b}]")
    for j in range(state.n_sinks):
        _refresh_sink(state, j)
    log("codebooks")
    return changed


def run_dir_design(data: TrainingSet, graph: NetworkGraph, traffic: TrafficMatrix,
                   rates, quantizers, lam: float, config: GreedyConfig,
                   optimizer: str = "greedy", init: str | RouterAssignment = "conventional",
                   init_system: DirSystem | None = None, weights=None,
                   router_search: str = "full", fixed_routers: bool = False,
                   schedule: _anneal.AnnealSchedule | None = None,
                   tables=None) -> DirResult:
    """Joint design of WZ-maps, per-bit routing and per-sink codebooks.

    ``init`` selects the starting assignment ("conventional", "broadcast",
    "silent" or an explicit RouterAssignment); ``init_system`` additionally
    seeds the WZ-maps (e.g. continue from a conventional-routing design, which
    guarantees the result is no worse).  ``optimizer`` is "greedy" or "da"
    (annealed WZ-maps at fixed routing, destination updates between
    temperatures, hardened and polished at the end).
    """
    t0 = time.perf_counter()
    rates_t = _greedy._normalize_rates(rates, data.n_sources)
    if weights is None:
        weights = traffic.uniform_weights()
    weights = np.asarray(weights, dtype=np.float64)
    if tables is None:
        tables = steiner_tables(graph)
    base = _dir_state(data, graph.n_sinks, quantizers, rates_t, weights, tables)
    if init_system is not None:
        init_routers = init_system.routers
        init_labels = [w.labels for w in init_system.wz_maps]
    else:
        init_labels = None
        if isinstance(init, RouterAssignment):
            init_routers = init
        elif init == "conventional":
            init_routers = RouterAssignment.conventional(traffic, rates_t)
        elif init == "broadcast":
            init_routers = RouterAssignment.broadcast(data.n_sources,
                                                      graph.n_sinks, rates_t)
        elif init == "silent":
            init_routers = RouterAssignment.silent(data.n_sources, rates_t)
        else:
            raise ValueError(f"unknown init: {init}")

    if optimizer == "da":
        return _run_dir_da(data, base, init_routers, init_labels, lam, config,
                           schedule, router_search, fixed_routers, t0)
    if optimizer != "greedy":
        raise ValueError(f"unknown optimizer: {optimizer}")

    best = None
    finals = []
    restarts = 1 if init_labels is not None else config.restarts
    for r in range(restarts):
        state = _dir_state(data, base.n_sinks, quantizers, rates_t, weights,
                           tables, regions=base.regions)
        _load_assignment(state, init_routers)
        rng = np.random.default_rng([config.rng_seed, r])
        if init_labels is not None:
            state.labels = [np.asarray(l, dtype=np.int64).copy() for l in init_labels]
        else:
            state.labels = [rng.integers(0, 1 << rates_t[i], size=q.region_count,
                                         dtype=np.int64)
                            for i, q in enumerate(state.quantizers)]
        for i in range(state.n_sources):
            state.K[:, i] = state.labels[i][state.regions[:, i]]
        for j in range(state.n_sinks):
            _refresh_sink(state, j)
        trace = [] if config.track_descent else None
        if trace is not None:
            trace.append(("init", _dir_lagrangian(state, lam)))
        sweeps = 0
        for sweeps in range(1, config.max_sweeps + 1):
            if not _dir_sweep(state, lam, config, router_search, fixed_routers,
                              trace):
                break
        final = _dir_lagrangian(state, lam)
        finals.append(final)
        if best is None or final < best[0]:
            best = (final, state, trace, sweeps)

    final, state, trace, sweeps = best
    point = TradeoffPoint.make(
        lam=lam, distortion=_dir_distortion_state(state), size=_dir_cost(state),
        size_kind="cost", optimizer="dir-greedy", seed=config.rng_seed,
        wall_time_s=time.perf_counter() - t0, split="train")
    return DirResult(_state_dir_system(state), point, trace or [], sweeps, finals)


def _run_dir_da(data, base, init_routers, init_labels, lam, config, schedule,
                router_search, fixed_routers, t0):
    """Annealed variant: soft WZ-maps at fixed routing, destination updates
    between temperature steps, hardened greedy polish at the end."""
    if schedule is None:
        schedule = _anneal.AnnealSchedule()
    state = base
    _load_assignment(state, init_routers)
    X, regions, rates = state.X, state.regions, state.rates
    n = state.n_sources
    quantizers = state.quantizers
    t_now, t_min = schedule.resolve(X)
    rng = np.random.default_rng([config.rng_seed, 1000003])
    probs = [np.full((quantizers[i].region_count, 1 << rates[i]),
                     1.0 / (1 << rates[i])) for i in range(n)]

    x_sq = np.einsum("ti,ti->i", X, X)

    def soft_tables():
        """Fresh per-sink soft-centroid tables plus the distortion they achieve."""
        groups = [(state.sink_positions[j], list(range(n)))
                  for j in range(state.n_sinks)]
        stats = _anneal._soft_tasks_codebooks(X, regions, probs, rates, groups)
        tables = []
        d_avg = 0.0
        for j, (mass, sums) in enumerate(stats):
            tbl = np.empty((n, mass.size))
            for i in range(n):
                row, _ = _anneal._table_from_mass(mass, sums[i],
                                                  float(state.fallbacks[i]))
                tbl[i] = row
                w = float(state.weights[i, j])
                if w:
                    d_avg += w * _anneal._soft_sse_from_stats(
                        mass, sums[i], row, x_sq[i]) / X.shape[0]
            tables.append(tbl)
        return tables, d_avg

    def soft_tasks(tables):
        return _dir_tasks(state.weights, state.sink_positions, tables)

    tables, _ = soft_tables()
    occupied = [np.bincount(regions[:, i], minlength=quantizers[i].region_count) > 0
                for i in range(n)]
    while True:
        for i in range(n):
            noise = 1.0 + schedule.perturbation * rng.uniform(-1.0, 1.0,
                                                              size=probs[i].shape)
            p = probs[i] * noise
            probs[i] = p / p.sum(axis=1, keepdims=True)
        tables, d_avg = soft_tables()
        prev_j = None
        for _ in range(schedule.max_inner):
            for i in range(n):
                scores = _anneal._forced_scores(X, regions, probs, rates,
                                                soft_tasks(tables), i,
                                                include_constant_tasks=False)
                probs[i] = _anneal._gibbs_rows(scores, regions[:, i],
                                               quantizers[i].region_count, n,
                                               t_now)
            tables, d_avg = soft_tables()
            h = sum(float(np.dot(np.bincount(regions[:, i],
                                             minlength=probs[i].shape[0]),
                                 _anneal._row_entropies(probs[i])))
                    for i in range(n)) / (n * X.shape[0])
            j_val = d_avg - t_now * h
            if prev_j is not None and abs(prev_j - j_val) <= \
                    schedule.equilibrium_tol * max(abs(prev_j), 1e-12):
                break
            prev_j = j_val

        routers_changed = False
        if not fixed_routers:
            state.labels = [np.argmax(probs[i], axis=1).astype(np.int64)
                            for i in range(n)]
            for i in range(n):
                state.K[:, i] = state.labels[i][state.regions[:, i]]
            for j in range(state.n_sinks):
                _refresh_sink(state, j)
            for i in range(n):
                for b in range(rates[i]):
                    routers_changed |= _update_router_bit(state, i, b, lam,
                                                          router_search)
        if t_now <= t_min:
            break
        max_row_entropy = max(
            (float(_anneal._row_entropies(probs[i])[occupied[i]].max())
             for i in range(n) if occupied[i].any()), default=0.0)
        if max_row_entropy < schedule.entropy_floor:
            break  # rows are one-hot: the hardened polish continues the descent
        t_now *= schedule.alpha

    state.labels = [np.argmax(probs[i], axis=1).astype(np.int64) for i in range(n)]
    for i in range(n):
        state.K[:, i] = state.labels[i][state.regions[:, i]]
    for j in range(state.n_sinks):
        _refresh_sink(state, j)
    trace = [] if config.track_descent else None
    sweeps = 0
    for sweeps in range(1, config.max_sweeps + 1):
        if not _dir_sweep(state, lam, config, router_search, fixed_routers, trace):
            break
    point = TradeoffPoint.make(
        lam=lam, distortion=_dir_distortion_state(state), size=_dir_cost(state),
        size_kind="cost", optimizer="dir-da", seed=config.rng_seed,
        wall_time_s=time.perf_counter() - t0, split="train")
    return DirResult(_state_dir_system(state), point, trace or [], sweeps,
                     [point.distortion + lam * point.size])


def update_router(i: int, bit: int, system: DirSystem, data: TrainingSet,
                  lam: float, tables, search: str = "full") -> tuple:
    """Best destination sink set for one bit of one source, all else fixed.

    Candidates are scored with fresh centroid tables at the sinks whose
    arrival sets change, plus the bit's Steiner cost; the current assignment
    is always a candidate, so the result is never worse.
    """
    state = _dir_state(data, len(system.codebooks.sink_positions),
                       system.quantizers, system.rates, system.weights, tables)
    _load_assignment(state, system.routers)
    state.labels = [w.labels.copy() for w in system.wz_maps]
    for s in range(state.n_sources):
        state.K[:, s] = state.labels[s][state.regions[:, s]]
    for j in range(state.n_sinks):
        _refresh_sink(state, j)
    _update_router_bit(state, i, bit, lam, search)
    return state.dests[i][bit]


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BaselineResult:
    system: DirSystem
    points: list
    distortion: float
    cost: float


def _fixed_routing_baseline(data, graph, traffic, rates, quantizers, lambdas,
                            config, routers, tag, optimizer, weights, tables,
                            schedule=None) -> BaselineResult:
    res = run_dir_design(data, graph, traffic, rates, quantizers, lam=0.0,
                         config=config, optimizer=optimizer, init=routers,
                         weights=weights, fixed_routers=True,
                         schedule=schedule, tables=tables)
    if tables is None:
        tables = steiner_tables(graph)
    cost = communication_cost(res.system.routers, tables)
    d = res.point.distortion
    points = [TradeoffPoint.make(lam=float(lam), distortion=d, size=cost,
                                 size_kind="cost", optimizer=tag,
                                 seed=config.rng_seed,
                                 wall_time_s=res.point.wall_time_s,
                                 split="train")
              for lam in lambdas]
    return BaselineResult(res.system, points, d, cost)


def conventional_baseline(data: TrainingSet, graph: NetworkGraph,
                          traffic: TrafficMatrix, rates, quantizers, lambdas,
                          config: GreedyConfig, optimizer: str = "greedy",
                          weights=None, tables=None,
                          schedule=None) -> BaselineResult:
    """Optimal DSC under conventional routing: every bit of source i goes to
    exactly the sinks requesting source i.  The routing (hence the cost) is
    fixed, so one design serves every requested lambda."""
    rates_t = _greedy._normalize_rates(rates, data.n_sources)
    routers = RouterAssignment.conventional(traffic, rates_t)
    return _fixed_routing_baseline(data, graph, traffic, rates_t, quantizers,
                                   lambdas, config, routers, "conventional",
                                   optimizer, weights, tables, schedule)


def broadcast_baseline(data: TrainingSet, graph: NetworkGraph,
                       traffic: TrafficMatrix, rates, quantizers, lambdas,
                       config: GreedyConfig, optimizer: str = "greedy",
                       weights=None, tables=None, schedule=None) -> BaselineResult:
    """Optimal DSC with every bit delivered to every sink (cost-oblivious)."""
    rates_t = _greedy._normalize_rates(rates, data.n_sources)
    routers = RouterAssignment.broadcast(data.n_sources, graph.n_sinks, rates_t)
    return _fixed_routing_baseline(data, graph, traffic, rates_t, quantizers,
                                   lambdas, config, routers, "broadcast",
                                   optimizer, weights, tables, schedule)


# ---------------------------------------------------------------------------
# Network construction and parsing
# ---------------------------------------------------------------------------

def random_deployment(n_sources: int, n_intermediate: int, side: float = 100.0,
                      seed=0, n_sinks: int = 4):
    """Random sensor deployment on a square with sinks at the corners.

    Sources and intermediate nodes are placed uniformly at random; the graph
    is complete with squared-distance edge weights (multi-hop paths through
    intermediates are then cheaper than long direct hops).  Returns
    ``(graph, source_positions, all_positions)``.
    """
    if n_sinks != 4:
        raise ValueError("deployments place sinks at the 4 corners")
    rng = np.random.default_rng(seed)
    inner = rng.uniform(0.0, side, size=(n_sources + n_intermediate, 2))
    corners = np.array([[0.0, 0.0], [0.0, side], [side, 0.0], [side, side]])
    positions = np.vstack([inner, corners])
    n_nodes = positions.shape[0]
    edges = []
    for u in range(n_nodes):
        for v in range(u + 1, n_nodes):
            d2 = float(np.sum((positions[u] - positions[v]) ** 2))
            edges.append((u, v, d2))
    graph = NetworkGraph(n_nodes=n_nodes, edges=tuple(edges),
                         source_nodes=tuple(range(n_sources)),
                         sink_nodes=tuple(range(n_sources + n_intermediate,
                                                n_nodes)))
    return graph, positions[:n_sources], positions


def nearest_sink_traffic(source_positions, sink_positions,
                         per_sink: int = 2) -> TrafficMatrix:
    """Each sink requests its ``per_sink`` nearest sources; any source left
    unrequested is assigned to its nearest sink."""
    src = np.asarray(source_positions, dtype=np.float64)
    snk = np.asarray(sink_positions, dtype=np.float64)
    n, m = src.shape[0], snk.shape[0]
    req = np.zeros((n, m), dtype=np.int64)
    for j in range(m):
        d = np.linalg.norm(src - snk[j], axis=1)
        for i in np.argsort(d, kind="stable")[:per_sink]:
            req[i, j] = 1
    for i in np.flatnonzero(req.sum(axis=1) == 0):
        d = np.linalg.norm(snk - src[i], axis=1)
        req[i, int(np.argmin(d))] = 1
    return TrafficMatrix(req)


def load_network(path):
    """Parse a network file: ``edges`` (u v w lines), ``roles`` (node role
    [index] lines) and an optional ``traffic`` section (0/1 rows).

    Returns ``(graph, traffic_or_None)``.  Unlisted nodes are intermediate.
    """
    section = None
    edges = []
    sources = {}
    sinks = {}
    traffic_rows = []
    max_node = -1
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            lowered = line.lower()
            if lowered in ("edges", "roles", "traffic"):
                section = lowered
                continue
            if section == "edges":
                parts = line.split()
                if len(parts) != 3:
                    raise ValueError(f"{path}:{lineno}: expected 'u v w'")
                u, v, w = int(parts[0]), int(parts[1]), float(parts[2])
                edges.append((u, v, w))
                max_node = max(max_node, u, v)
            elif section == "roles":
                parts = line.split()
                node = int(parts[0])
                role = parts[1].lower()
                max_node = max(max_node, node)
                if role == "source":
                    sources[int(parts[2])] = node
                elif role == "sink":
                    sinks[int(parts[2])] = node
                elif role != "intermediate":
                    raise ValueError(f"{path}:{lineno}: unknown role {role!r}")
            elif section == "traffic":
                traffic_rows.append([int(tok) for tok in line.split()])
            else:
                raise ValueError(f"{path}:{lineno}: content before a section header")
    if not edges:
        raise ValueError(f"{path}: no edges")
    for mapping, kind in ((sources, "source"), (sinks, "sink")):
        if sorted(mapping) != list(range(len(mapping))):
            raise ValueError(f"{path}: {kind} indices must be contiguous from 0")
    graph = NetworkGraph(n_nodes=max_node + 1, edges=tuple(edges),
                         source_nodes=tuple(sources[i] for i in range(len(sources))),
                         sink_nodes=tuple(sinks[j] for j in range(len(sinks))))
    traffic = TrafficMatrix(np.array(traffic_rows)) if traffic_rows else None
    if traffic is not None and (traffic.n_sources != graph.n_sources
                                or traffic.n_sinks != graph.n_sinks):
        raise ValueError(f"{path}: traffic matrix shape does not match roles")
    return graph, traffic
