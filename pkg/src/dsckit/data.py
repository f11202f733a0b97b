"""Synthetic correlated-source generation, CSV ingestion and splitting."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .model import DegenerateDataError, TrainingSet

__all__ = [
    "gen_gaussian_chain",
    "gen_gaussian_field",
    "load_csv",
    "CsvData",
    "split",
]


def _sample_gaussian(cov: np.ndarray, count: int, seed) -> np.ndarray:
    chol = np.linalg.cholesky(cov)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((count, cov.shape[0]))
    return z @ chol.T


def gen_gaussian_chain(n_sources: int, rho: float, count: int, seed=0) -> TrainingSet:
    """Zero-mean unit-variance jointly Gaussian sources with cov[i,j] = rho**|i-j|."""
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must be in [0, 1)")
    if n_sources < 1 or count < 1:
        raise ValueError("n_sources and count must be >= 1")
    idx = np.arange(n_sources)
    cov = rho ** np.abs(idx[:, None] - idx[None, :])
    return TrainingSet(_sample_gaussian(cov, count, seed))


def gen_gaussian_field(positions, rho: float, d0: float, count: int, seed=0) -> TrainingSet:
    """Gaussian sources placed at ``positions`` with cov[i,j] = rho**(dist(i,j)/d0)."""
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must be in [0, 1)")
    if d0 <= 0:
        raise ValueError("d0 must be positive")
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 2 or positions.shape[0] < 1:
        raise ValueError("positions must be a (n_sources, dim) array")
    dist = np.linalg.norm(positions[:, None, :] - positions[None, :, :], axis=2)
    n = positions.shape[0]
    if np.any(dist[~np.eye(n, dtype=bool)] == 0.0):
        raise DegenerateDataError(
            "coincident sensors give unit correlation; perturb the positions")
    cov = rho ** (dist / d0)
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        cov = cov + 1e-9 * np.eye(cov.shape[0])
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise DegenerateDataError(
                "field covariance is not positive definite (coincident sensors?)")
    return TrainingSet(_sample_gaussian(cov, count, seed))


@dataclass(frozen=True)
class CsvData:
    """Result of loading a CSV dataset."""

    data: TrainingSet
    dropped_rows: int
    header: tuple | None


_MISSING = {"", "nan", "na", "null", "none"}


def load_csv(path, normalize: bool = True) -> CsvData:
    """Load a numeric CSV, one column per source.

    A non-numeric first row is treated as a header.  Rows with any missing
    cell are dropped (counted in the result).  With ``normalize`` each column
    is standardized using statistics of the first (training) half only, so a
    later contiguous 50/50 split leaks nothing from the test half.
    """
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]
    if not rows:
        raise DegenerateDataError(f"{path}: empty file")

    def parse_row(row, rownum):
        vals = []
        for colnum, cell in enumerate(row):
            cell = cell.strip()
            if cell.lower() in _MISSING:
                return None
            try:
                vals.append(float(cell))
            except ValueError:
                raise ValueError(
                    f"{path}: non-numeric cell at row {rownum}, column {colnum}: {cell!r}")
        return vals

    header = None
    start = 0
    try:
        first = parse_row(rows[0], 1)
    except ValueError:
        first = None
    if first is None and rows[0] and all(c.strip() for c in rows[0]):
        header = tuple(c.strip() for c in rows[0])
        start = 1

    width = len(rows[start]) if start < len(rows) else 0
    parsed = []
    dropped = 0
    for rownum in range(start, len(rows)):
        row = rows[rownum]
        if len(row) != width:
            raise ValueError(f"{path}: row {rownum + 1} has {len(row)} cells, expected {width}")
        vals = parse_row(row, rownum + 1)
        if vals is None:
            dropped += 1
        else:
            parsed.append(vals)
    if len(parsed) < 2:
        raise DegenerateDataError(f"{path}: fewer than 2 complete rows")

    samples = np.asarray(parsed, dtype=np.float64)
    if normalize:
        n_train = samples.shape[0] // 2
        mean = samples[:n_train].mean(axis=0)
        std = samples[:n_train].std(axis=0)
        zero = np.flatnonzero(std == 0.0)
        if zero.size:
            raise DegenerateDataError(
                f"{path}: column {int(zero[0])} is constant over the training half")
        samples = (samples - mean) / std
    return CsvData(TrainingSet(samples), dropped, header)


def split(data: TrainingSet, fraction: float, seed=None, shuffle: bool = False):
    """Split into (train, test).  Contiguous first-fraction train by default.

    The contiguous default respects temporal ordering of sensor recordings;
    pass ``shuffle=True`` (with a seed) for a random split.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    n = data.sample_count
    n_train = int(fraction * n)
    if n_train < 1 or n_train >= n:
        raise ValueError(f"fraction {fraction} leaves an empty train or test set")
    samples = data.samples
    if shuffle:
        perm = np.random.default_rng(seed).permutation(n)
        samples = samples[perm]
    return TrainingSet(samples[:n_train]), TrainingSet(samples[n_train:])
