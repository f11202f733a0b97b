"""Trade-off curve rows, delimited output, envelope analysis and figures.

A design run produces :class:`TradeoffPoint` rows; these are written as CSV
(one row per point, stable header) plus a schema-versioned JSON file that
round-trips exactly, and optionally rendered as PNG figures next to them.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TradeoffPoint",
    "CSV_HEADER",
    "CURVE_SCHEMA_VERSION",
    "write_curves_csv",
    "write_curves_json",
    "read_curves_json",
    "lower_envelope",
    "envelope_db_at",
    "monotonicity_report",
    "render_figures",
]

CURVE_SCHEMA_VERSION = 1

# wall-clock time is deliberately not emitted: curve files must be
# byte-identical across reruns with the same seeds
CSV_HEADER = ["lam", "distortion", "distortion_db", "size", "size_kind",
              "optimizer", "seed", "split"]


def to_db(distortion: float) -> float:
    """10*log10 of an MSE value (the usual dB convention for these curves)."""
    return 10.0 * math.log10(max(distortion, 1e-300))


@dataclass(frozen=True)
class TradeoffPoint:
    """One operating point of a distortion versus complexity/cost trade-off."""

    lam: float
    distortion: float
    distortion_db: float
    size: float                 # decoder complexity C or communication cost W
    size_kind: str              # "complexity" | "cost"
    optimizer: str
    seed: int
    wall_time_s: float
    split: str                  # "train" | "test"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("lam", "distortion", "distortion_db", "size", "wall_time_s"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if abs(self.distortion_db - to_db(self.distortion)) > 1e-9:
            raise ValueError("distortion_db inconsistent with distortion")
        if self.size_kind not in ("complexity", "cost"):
            raise ValueError(f"unknown size_kind: {self.size_kind}")

    @staticmethod
    def make(lam, distortion, size, size_kind, optimizer, seed, wall_time_s,
             split, extra=None) -> "TradeoffPoint":
        return TradeoffPoint(float(lam), float(distortion), to_db(distortion),
                             float(size), size_kind, optimizer, int(seed),
                             float(wall_time_s), split, dict(extra or {}))

    def replace_split(self, split: str, distortion: float) -> "TradeoffPoint":
        """The same operating point re-evaluated on another dataset split."""
        return TradeoffPoint.make(self.lam, distortion, self.size,
                                  self.size_kind, self.optimizer, self.seed,
                                  self.wall_time_s, split, self.extra)

    def to_row(self) -> list:
        return [repr(self.lam), repr(self.distortion), repr(self.distortion_db),
                repr(self.size), self.size_kind, self.optimizer,
                str(self.seed), self.split]

    def to_json_dict(self) -> dict:
        return {"lam": self.lam, "distortion": self.distortion,
                "distortion_db": self.distortion_db, "size": self.size,
                "size_kind": self.size_kind, "optimizer": self.optimizer,
                "seed": self.seed, "split": self.split, "extra": self.extra}

    @staticmethod
    def from_json_dict(d: dict) -> "TradeoffPoint":
        return TradeoffPoint(d["lam"], d["distortion"], d["distortion_db"],
                             d["size"], d["size_kind"], d["optimizer"],
                             d["seed"], d.get("wall_time_s", 0.0), d["split"],
                             d.get("extra", {}))


def write_curves_csv(points, path) -> None:
    lines = [",".join(CSV_HEADER)]
    lines += [",".join(p.to_row()) for p in points]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_curves_json(points, path, metadata=None) -> None:
    payload = {
        "schema_version": CURVE_SCHEMA_VERSION,
        "metadata": metadata or {},
        "points": [p.to_json_dict() for p in points],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_curves_json(path):
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("schema_version") != CURVE_SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported curve schema version")
    return [TradeoffPoint.from_json_dict(d) for d in payload["points"]]


# ---------------------------------------------------------------------------
# Envelope analysis
# ---------------------------------------------------------------------------

def lower_envelope(points) -> list:
    """Pareto frontier of (size, distortion): increasing size, decreasing D.

    Points not strictly improving distortion as size grows are dropped.
    """
    ordered = sorted(points, key=lambda p: (p.size, p.distortion))
    env = []
    for p in ordered:
        if env and p.distortion >= env[-1].distortion:
            continue
        env.append(p)
    return env


def envelope_db_at(points, log2_size: float) -> float:
    """dB distortion of the lower envelope, piecewise linear in log2(size).

    Clamps outside the envelope's size range to the nearest endpoint.
    Zero-size points (e.g. a fully silent routing) have no log coordinate
    and are excluded.
    """
    env = [p for p in lower_envelope(points) if p.size > 0]
    if not env:
        raise ValueError("no points with positive size")
    xs = np.array([math.log2(p.size) for p in env])
    ys = np.array([p.distortion_db for p in env])
    return float(np.interp(log2_size, xs, ys))


def monotonicity_report(points) -> list:
    """Violations of non-increasing distortion along increasing size.

    Checks the raw point cloud per (optimizer, split): a point whose
    distortion exceeds that of a smaller-size point of the same series is
    reported (never silently dropped).
    """
    groups = {}
    for p in points:
        groups.setdefault((p.optimizer, p.split, p.size_kind), []).append(p)
    violations = []
    seen = set()
    for key, pts in groups.items():
        pts = sorted(pts, key=lambda p: (p.size, p.lam))
        best = math.inf
        for p in pts:
            if p.distortion > best * (1 + 1e-12):
                dedupe = key + (p.size, p.distortion)
                if dedupe not in seen:
                    seen.add(dedupe)
                    violations.append((key, p))
            best = min(best, p.distortion)
    return violations


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------

def render_figures(points, out_prefix, title: str = "") -> list:
    """Render distortion-versus-size curves to PNG files.

    One figure per dataset split, one line per optimizer, x axis log2 of the
    decoder complexity or communication cost, y axis distortion in dB.
    Returns the list of written paths.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    splits = sorted({p.split for p in points})
    for split in splits:
        fig, ax = plt.subplots(figsize=(6.4, 4.4))
        sub = [p for p in points if p.split == split]
        size_kind = sub[0].size_kind
        for optimizer in sorted({p.optimizer for p in sub}):
            series = lower_envelope([p for p in sub if p.optimizer == optimizer])
            xs = [math.log2(p.size) for p in series]
            ys = [p.distortion_db for p in series]
            ax.plot(xs, ys, marker="o", label=optimizer)
        ax.set_xlabel(f"log2 {size_kind}")
        ax.set_ylabel("distortion (dB)")
        ax.set_title(f"{title} [{split}]".strip())
        ax.grid(True, alpha=0.3)
        ax.legend()
        path = f"{out_prefix}_{split}.png"
        fig.savefig(path, dpi=150, bbox_inches="tight")
        plt.close(fig)
        paths.append(path)
    return paths
