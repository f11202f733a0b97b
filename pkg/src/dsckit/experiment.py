"""Configuration-driven experiment harness.

A JSON config describes the data source, the coder parameters, the Lagrange
grid and the methods to run; :func:`run_experiment` (single sink) and
:func:`run_dir_experiment` (multi-hop network) produce trade-off points on
the train and test splits, write them as CSV + JSON (byte-identical across
reruns with the same seeds) and render figures next to them.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import anneal, curves, data as data_mod, dir as dir_mod, greedy, model
from .curves import TradeoffPoint
from .model import TrainingSet

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ExperimentResult",
    "run_experiment",
    "run_dir_experiment",
    "emit_curves",
]

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the field."""


def _require(cfg: dict, key: str, kind, where: str):
    if key not in cfg:
        raise ConfigError(f"{where}.{key}: missing")
    value = cfg[key]
    if kind is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, kind):
        raise ConfigError(f"{where}.{key}: expected {kind.__name__}, "
                          f"got {type(value).__name__}")
    return value


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description (see README for the JSON schema)."""

    name: str
    source: dict
    rates: tuple
    regions: tuple
    lambdas: tuple
    optimizers: tuple = ("greedy",)
    restarts: int = 25
    seed: int = 0
    split_fraction: float = 0.5
    selector_search: str = "hamming1"
    own_bits_mandatory: bool = True
    warm_start: bool = True
    baselines: tuple = ()
    grouping_sizes: object = "uniform"
    output_dir: str = "out"
    figures: bool = True
    anneal: dict = field(default_factory=dict)
    dir: dict | None = None

    @staticmethod
    def from_json(path) -> "ExperimentConfig":
        with open(path) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: not valid JSON ({exc})")
        return ExperimentConfig.from_dict(raw)

    @staticmethod
    def from_dict(raw: dict, where: str = "config") -> "ExperimentConfig":
        version = raw.get("config_version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"{where}.config_version: unsupported ({version})")
        source = _require(raw, "source", dict, where)
        kind = _require(source, "kind", str, f"{where}.source")
        if kind not in ("gaussian_chain", "gaussian_field", "csv"):
            raise ConfigError(f"{where}.source.kind: unknown kind {kind!r}")
        n_sources = ExperimentConfig._source_count(source, where)

        rates = raw.get("rates", 2)
        rates = tuple([int(rates)] * n_sources) if np.isscalar(rates) \
            else tuple(int(r) for r in rates)
        if len(rates) != n_sources or any(r < 1 for r in rates):
            raise ConfigError(f"{where}.rates: need {n_sources} positive entries")
        regions = raw.get("regions", 32)
        regions = tuple([int(regions)] * n_sources) if np.isscalar(regions) \
            else tuple(int(r) for r in regions)
        if len(regions) != n_sources or any(r < 2 for r in regions):
            raise ConfigError(f"{where}.regions: need {n_sources} entries >= 2")

        lambdas = raw.get("lambdas", None)
        if not isinstance(lambdas, (list, tuple)) or len(lambdas) == 0:
            raise ConfigError(f"{where}.lambdas: must be a non-empty list")
        lambdas = tuple(float(l) for l in lambdas)
        if any(l < 0 for l in lambdas):
            raise ConfigError(f"{where}.lambdas: must be non-negative")
        if list(lambdas) != sorted(lambdas):
            raise ConfigError(f"{where}.lambdas: must be sorted ascending")

        optimizers = tuple(raw.get("optimizers", ["greedy"]))
        for opt in optimizers:
            if opt not in ("greedy", "da"):
                raise ConfigError(f"{where}.optimizers: unknown optimizer {opt!r}")
        baselines = tuple(raw.get("baselines", []))
        selector_search = raw.get("selector_search", "hamming1")
        if selector_search not in ("hamming1", "full"):
            raise ConfigError(f"{where}.selector_search: must be hamming1 or full")
        split_fraction = float(raw.get("split_fraction", 0.5))
        if not 0.0 < split_fraction < 1.0:
            raise ConfigError(f"{where}.split_fraction: must be in (0, 1)")
        restarts = int(raw.get("restarts", 25))
        if restarts < 1:
            raise ConfigError(f"{where}.restarts: must be >= 1")

        return ExperimentConfig(
            name=str(raw.get("name", "experiment")),
            source=dict(source), rates=rates, regions=regions, lambdas=lambdas,
            optimizers=optimizers, restarts=restarts,
            seed=int(raw.get("seed", 0)), split_fraction=split_fraction,
            selector_search=selector_search,
            own_bits_mandatory=bool(raw.get("own_bits_mandatory", True)),
            warm_start=bool(raw.get("warm_start", True)),
            baselines=baselines, grouping_sizes=raw.get("grouping_sizes", "uniform"),
            output_dir=str(raw.get("output_dir", "out")),
            figures=bool(raw.get("figures", True)),
            anneal=dict(raw.get("anneal", {})), dir=raw.get("dir"))

    @staticmethod
    def _source_count(source: dict, where: str) -> int:
        kind = source["kind"]
        if kind == "gaussian_chain":
            return int(_require(source, "n_sources", int, f"{where}.source"))
        if kind == "gaussian_field":
            if "positions" in source:
                return len(source["positions"])
            if "n_sources" in source:
                return int(source["n_sources"])
            raise ConfigError(f"{where}.source: gaussian_field needs positions "
                              f"or n_sources (with a dir deployment)")
        path = _require(source, "path", str, f"{where}.source")
        if not os.path.exists(path):
            raise ConfigError(f"{where}.source.path: no such file: {path}")
        return data_mod.load_csv(path, normalize=False).data.n_sources

    def greedy_config(self, lam: float, track_descent=False) -> greedy.GreedyConfig:
        return greedy.GreedyConfig(
            lam=lam, restarts=self.restarts, rng_seed=self.seed,
            selector_search=self.selector_search,
            own_bits_mandatory=self.own_bits_mandatory,
            track_descent=track_descent)

    def anneal_schedule(self) -> anneal.AnnealSchedule:
        known = {"t_init", "alpha", "t_min", "t_min_factor", "equilibrium_tol",
                 "max_inner", "perturbation", "entropy_floor"}
        bad = set(self.anneal) - known
        if bad:
            raise ConfigError(f"config.anneal: unknown keys {sorted(bad)}")
        return anneal.AnnealSchedule(**self.anneal)


# ---------------------------------------------------------------------------
# Data and quantizer preparation
# ---------------------------------------------------------------------------

def make_source(config: ExperimentConfig, positions=None) -> TrainingSet:
    src = config.source
    kind = src["kind"]
    if kind == "gaussian_chain":
        return data_mod.gen_gaussian_chain(int(src["n_sources"]), float(src["rho"]),
                                           int(src["count"]), src.get("seed", 0))
    if kind == "gaussian_field":
        pos = positions if positions is not None else src.get("positions")
        if pos is None:
            raise ConfigError("config.source.positions: required without a deployment")
        return data_mod.gen_gaussian_field(pos, float(src["rho"]),
                                           float(src.get("d0", 100.0)),
                                           int(src["count"]), src.get("seed", 0))
    return data_mod.load_csv(src["path"], normalize=src.get("normalize", True)).data


# ---------------------------------------------------------------------------
# Sweep cells
# ---------------------------------------------------------------------------

def _run_da_cell(payload):
    """One annealed design; a top-level function so sweeps can run in worker
    processes."""
    (config, lam, train_samples, test_samples, quantizers) = payload
    train = TrainingSet(train_samples)
    test = TrainingSet(test_samples)
    res = anneal.run_da(train, quantizers, config.rates, lam,
                        schedule=config.anneal_schedule(),
                        config=replace(config.greedy_config(lam), restarts=1))
    test_point = res.point.replace_split("test", model.distortion(test, res.system))
    return res.point, test_point, res.system


def run_greedy_chain(config: ExperimentConfig, train, test, quantizers):
    """Greedy designs over the lambda grid, ascending.

    Each cell keeps the best of the fresh random restarts and, with
    ``warm_start``, a run initialized from the previous lambda's solution
    (plus, for the first cell, one initialized at full bit subsets: pruning
    down from the full-complexity decoder is where the small-lambda operating
    points actually live).  The fresh best-of-restarts Lagrangian is recorded
    in the point's extras.
    """
    points = []
    systems = {}
    total_rate = sum(config.rates)
    prev = None
    for idx, lam in enumerate(config.lambdas):
        gcfg = config.greedy_config(lam)
        best = greedy.run_greedy(train, quantizers, config.rates, gcfg)
        fresh_l = best.point.distortion + lam * best.point.size
        best_l = fresh_l
        if config.warm_start:
            inits = []
            if idx == 0:
                inits.append(([tuple(range(total_rate))] * train.n_sources,
                              None, gcfg))
            if prev is not None:
                inits.append((prev.selector.subsets,
                              [w.labels for w in prev.wz_maps],
                              replace(gcfg, restarts=1)))
                # inherited subsets with re-randomized maps: decouples the
                # subset lineage from one labeling basin
                inits.append((prev.selector.subsets, None,
                              replace(gcfg, restarts=3,
                                      rng_seed=gcfg.rng_seed + 1)))
            for sel, labels, cfg in inits:
                cand = greedy.run_greedy(train, quantizers, config.rates, cfg,
                                         init_selector=sel, init_labels=labels)
                cand_l = cand.point.distortion + lam * cand.point.size
                if cand_l < best_l:
                    best, best_l = cand, cand_l
        extra = {"fresh_lagrangian": fresh_l}
        point = TradeoffPoint.make(lam, best.point.distortion, best.point.size,
                                   "complexity", "greedy", config.seed,
                                   best.point.wall_time_s, "train", extra)
        test_point = point.replace_split(
            "test", model.distortion(test, best.system))
        points += [point, test_point]
        systems[("greedy", lam)] = best.system
        prev = best.system
    return points, systems


def run_sweep_cells(config: ExperimentConfig, train, test, quantizers,
                    workers: int = 1):
    """All (lambda, optimizer) designs: the greedy chain runs in-process
    (cells are order-dependent under warm_start), annealed cells fan out to
    worker processes when ``workers`` allows."""
    points = []
    systems = {}
    da_cells = [(config, lam, train.samples, test.samples, quantizers)
                for lam in config.lambdas] if "da" in config.optimizers else []
    pool = futures = None
    if workers > 1 and da_cells:
        pool = ProcessPoolExecutor(max_workers=workers)
        futures = [pool.submit(_run_da_cell, c) for c in da_cells]
    if "greedy" in config.optimizers:
        chain_points, chain_systems = run_greedy_chain(config, train, test,
                                                       quantizers)
        points += chain_points
        systems.update(chain_systems)
    if da_cells:
        results = [f.result() for f in futures] if futures is not None \
            else [_run_da_cell(c) for c in da_cells]
        for (point, test_point, system), (_, lam, *_rest) in zip(results,
                                                                 da_cells):
            points += [point, test_point]
            systems[("da", lam)] = system
    if pool is not None:
        pool.shutdown()
    return points, systems


# ---------------------------------------------------------------------------
# Experiment drivers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentResult:
    points: list
    files: list
    summary: str
    systems: dict


def _uniform_partitions(n: int):
    """Group-size ladders [s, s, ..., remainder] for s = 1..n."""
    out = []
    for s in range(1, n + 1):
        sizes = [s] * (n // s)
        if n % s:
            sizes.append(n % s)
        if sizes not in out:
            out.append(sizes)
    return out


def emit_curves(points, out_dir: str, name: str, figures: bool = True) -> list:
    """Write CSV + JSON (+ PNG figures) for a list of trade-off points.

    Output bytes depend only on the points (timings are excluded), so reruns
    with identical seeds produce identical files.
    """
    os.makedirs(out_dir, exist_ok=True)
    base = os.path.join(out_dir, name)
    files = [base + "_curves.csv", base + "_curves.json"]
    curves.write_curves_csv(points, files[0])
    curves.write_curves_json(points, files[1], metadata={"name": name})
    if figures and points:
        files += curves.render_figures(points, base + "_curves", title=name)
    return files


def _summarize(points) -> str:
    lines = []
    by_split = {}
    for p in points:
        by_split.setdefault(p.split, []).append(p)
    for split, pts in sorted(by_split.items()):
        opts = sorted({p.optimizer for p in pts})
        lines.append(f"[{split}] optimizers: {', '.join(opts)}; "
                     f"{len(pts)} points")
        if "greedy" in opts and "da" in opts:
            gl = {p.lam: p for p in pts if p.optimizer == "greedy"}
            dl = {p.lam: p for p in pts if p.optimizer == "da"}
            shared = sorted(set(gl) & set(dl))
            wins = sum(
                1 for lam in shared
                if dl[lam].distortion + lam * dl[lam].size
                <= gl[lam].distortion + lam * gl[lam].size + 1e-12)
            lines.append(f"[{split}] annealed Lagrangian <= greedy at "
                         f"{wins}/{len(shared)} lambda points")
    violations = curves.monotonicity_report(points)
    if violations:
        for (opt, split, kind), p in violations:
            lines.append(f"WARNING: envelope violation {opt}/{split}: "
                         f"size={p.size:g} distortion={p.distortion:g}")
    else:
        lines.append("lower envelopes monotone (no violations)")
    return "\n".join(lines)


def run_experiment(config: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    """Single-sink sweep: designs at every (lambda, optimizer), baselines,
    train/test evaluation, curve emission."""
    from . import quantizer as quant_mod

    dataset = make_source(config)
    train, test = data_mod.split(dataset, config.split_fraction)
    quantizers = [quant_mod.design_lloyd_max(train.column(i), config.regions[i])
                  for i in range(train.n_sources)]

    points, systems = run_sweep_cells(config, train, test, quantizers, workers)

    if "grouping" in config.baselines:
        sizes_list = _uniform_partitions(train.n_sources) \
            if config.grouping_sizes == "uniform" else config.grouping_sizes
        for sizes in sizes_list:
            base = greedy.grouping_baseline(
                train, quantizers, config.rates, sizes, config.lambdas,
                config.greedy_config(0.0))
            test_d = greedy.grouping_distortion(base.groups, base.systems, test)
            points += base.points
            points += [p.replace_split("test", test_d) for p in base.points]
            systems[("grouping", tuple(sizes))] = base

    files = emit_curves(points, config.output_dir, config.name, config.figures)
    summary = _summarize(points)
    return ExperimentResult(points, files, summary, systems)


def _build_network(config: ExperimentConfig):
    dcfg = config.dir or {}
    if "network" in dcfg:
        graph, traffic = dir_mod.load_network(dcfg["network"])
        if traffic is None:
            raise ConfigError("config.dir.network: file has no traffic section")
        return graph, traffic, None
    if "deployment" not in dcfg:
        raise ConfigError("config.dir: needs either 'network' or 'deployment'")
    dep = dcfg["deployment"]
    n_sources = ExperimentConfig._source_count(config.source, "config")
    graph, src_pos, all_pos = dir_mod.random_deployment(
        n_sources, int(dep.get("n_intermediate", 10)),
        side=float(dep.get("side", 100.0)), seed=dep.get("seed", 0))
    sink_pos = all_pos[-graph.n_sinks:]
    traffic = dir_mod.nearest_sink_traffic(src_pos, sink_pos,
                                           per_sink=int(dep.get("per_sink", 2)))
    return graph, traffic, src_pos


def run_dir_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Multi-hop sweep: conventional-routing baseline once, then a dispersive
    design per lambda initialized from it; optional broadcast baseline."""
    from . import quantizer as quant_mod

    if config.dir is None:
        raise ConfigError("config.dir: missing")
    graph, traffic, src_pos = _build_network(config)
    dataset = make_source(config, positions=src_pos)
    if dataset.n_sources != graph.n_sources:
        raise ConfigError("config.source: source count does not match the network")
    train, test = data_mod.split(dataset, config.split_fraction)
    quantizers = [quant_mod.design_lloyd_max(train.column(i), config.regions[i])
                  for i in range(train.n_sources)]
    tables = dir_mod.steiner_tables(graph)

    dcfg = config.dir
    optimizer = dcfg.get("optimizer", "greedy")
    router_search = dcfg.get("router_search", "full")
    gcfg = config.greedy_config(0.0)
    schedule = config.anneal_schedule()

    points = []
    systems = {}
    conv = dir_mod.conventional_baseline(train, graph, traffic, config.rates,
                                         quantizers, config.lambdas, gcfg,
                                         tables=tables)
    conv_test = dir_mod.dir_distortion(test, conv.system)
    points += conv.points
    points += [p.replace_split("test", conv_test) for p in conv.points]
    systems["conventional"] = conv.system

    if "broadcast" in dcfg.get("baselines", []):
        bc = dir_mod.broadcast_baseline(train, graph, traffic, config.rates,
                                        quantizers, config.lambdas, gcfg,
                                        tables=tables)
        bc_test = dir_mod.dir_distortion(test, bc.system)
        points += bc.points
        points += [p.replace_split("test", bc_test) for p in bc.points]
        systems["broadcast"] = bc.system

    for lam in config.lambdas:
        res = dir_mod.run_dir_design(
            train, graph, traffic, config.rates, quantizers, lam,
            replace(gcfg, lam=lam), optimizer=optimizer,
            init_system=conv.system, router_search=router_search,
            schedule=schedule, tables=tables)
        test_point = res.point.replace_split(
            "test", dir_mod.dir_distortion(test, res.system))
        points += [res.point, test_point]
        systems[(res.point.optimizer, lam)] = res.system

    files = emit_curves(points, config.output_dir, config.name, config.figures)
    summary = _summarize(points)
    return ExperimentResult(points, files, summary, systems)
