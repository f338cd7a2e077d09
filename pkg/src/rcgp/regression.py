"""
Symbolic-regression backend: PMLB-style data ingestion, splits, folds and MSE fitness.
"""
from __future__ import annotations

import csv
import gzip
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .cgp import CgpConfig, Genome, evaluate_batch

WORST_FITNESS = math.inf
# Stand-in for WORST_FITNESS in JSON output; keeps ordering.
SERIALISED_WORST = 1e300


class DatasetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    targets: np.ndarray
    feature_names: tuple[str, ...]
    name: str = "dataset"

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.targets, dtype=float)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise DatasetError(f"features must be a non-empty 2-D matrix, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise DatasetError(f"targets shape {y.shape} does not match {X.shape[0]} rows")
        if len(self.feature_names) != X.shape[1]:
            raise DatasetError("feature_names length does not match feature count")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise DatasetError("dataset contains non-finite values")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "targets", y)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n_observations(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @classmethod
    def from_function(cls, fn: Callable, xs: Sequence[float], name: str = "synthetic") -> "Dataset":
        """One-feature dataset with targets ``fn(x)``."""
        x = np.asarray(xs, dtype=float)
        return cls(x.reshape(-1, 1), fn(x), ("x0",), name)


def _dataset_name(path: Path) -> str:
    name = path.name
    for suffix in (".gz", ".tsv", ".csv", ".txt"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
    return name


def load_dataset(path: str | Path) -> Dataset:
    """Read a delimited text file (tab or comma, optionally gzipped) with a ``target`` column."""
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"{path}: no such file")
    raw = path.read_bytes()
    if path.suffix == ".gz":
        raw = gzip.decompress(raw)
    text = raw.decode("utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise DatasetError(f"{path}: empty file")
    delimiter = "\t" if "\t" in lines[0] else ","
    rows = list(csv.reader(io.StringIO("\n".join(lines)), delimiter=delimiter))
    header = [h.strip() for h in rows[0]]
    if "target" not in header:
        raise DatasetError(f"{path}: no 'target' column in header {header}")
    if len(rows) < 2:
        raise DatasetError(f"{path}: no data rows")
    t = header.index("target")
    values = np.empty((len(rows) - 1, len(header)))
    for r, row in enumerate(rows[1:], start=1):
        if len(row) != len(header):
            raise DatasetError(f"{path}: row {r} has {len(row)} cells, expected {len(header)}")
        for c, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise DatasetError(f"{path}: row {r}, column {header[c]!r}: cannot parse {cell!r}") from None
            if not math.isfinite(v):
                raise DatasetError(f"{path}: row {r}, column {header[c]!r}: non-finite value {cell!r}")
            values[r - 1, c] = v
    keep = [c for c in range(len(header)) if c != t]
    if not keep:
        raise DatasetError(f"{path}: no feature columns")
    return Dataset(values[:, keep], values[:, t], tuple(header[c] for c in keep), _dataset_name(path))


@dataclass(frozen=True)
class SplitSpec:
    train_indices: tuple[int, ...]
    test_indices: tuple[int, ...]
    seed: int
    train_fraction: float


def split(dataset: Dataset, train_fraction: float, seed: int) -> SplitSpec:
    """Seeded shuffle, then the first ``round(train_fraction * n)`` rows train."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = dataset.n_observations
    n_train = round(train_fraction * n)  # half-to-even
    if n_train == 0 or n_train == n:
        raise ValueError(f"train_fraction {train_fraction} on {n} rows leaves one side empty")
    perm = np.random.default_rng(seed).permutation(n).tolist()
    return SplitSpec(tuple(perm[:n_train]), tuple(perm[n_train:]), seed, train_fraction)


@dataclass(frozen=True)
class FoldAssignment:
    """``fold_of[j]`` is the fold label of ``rows[j]``."""

    rows: tuple[int, ...]
    fold_of: tuple[int, ...]
    k: int
    seed: int

    def fold_rows(self, fold: int) -> tuple[list[int], list[int]]:
        """(training rows, validation rows) for one fold."""
        train = [r for r, f in zip(self.rows, self.fold_of) if f != fold]
        val = [r for r, f in zip(self.rows, self.fold_of) if f == fold]
        return train, val

    def sizes(self) -> list[int]:
        return [self.fold_of.count(f) for f in range(self.k)]


def kfold(train: Sequence[int], k: int, seed: int) -> FoldAssignment:
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if k > len(train):
        raise ValueError(f"k = {k} exceeds the {len(train)} available rows")
    order = np.random.default_rng(seed).permutation(len(train))
    fold_of = [0] * len(train)
    for j, idx in enumerate(order):
        fold_of[idx] = j % k
    return FoldAssignment(tuple(int(r) for r in train), tuple(fold_of), k, seed)


def mse(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(targets, dtype=float)
    if p.shape != t.shape or p.size == 0:
        raise ValueError(f"mse needs equal non-empty shapes, got {p.shape} and {t.shape}")
    if not np.isfinite(p).all():
        return WORST_FITNESS
    with np.errstate(over="ignore"):
        value = float(np.mean((p - t) ** 2))
    return value if math.isfinite(value) else WORST_FITNESS


def design_matrix(dataset: Dataset, rows: Sequence[int], config: CgpConfig) -> np.ndarray:
    """Feature rows with the config's constant terminals appended as extra columns."""
    X = dataset.features[list(rows)]
    if config.constants:
        consts = np.broadcast_to(np.asarray(config.constants), (X.shape[0], len(config.constants)))
        X = np.hstack([X, consts])
    if X.shape[1] != config.num_inputs:
        raise ValueError(
            f"config expects {config.num_inputs} inputs but dataset provides "
            f"{dataset.n_features} features + {len(config.constants)} constants"
        )
    return X


def fitness_on(rows: Sequence[int], dataset: Dataset, config: CgpConfig) -> Callable[[Genome], float]:
    """MSE of a single-output genome over the chosen rows."""
    if len(rows) == 0:
        raise ValueError("fitness_on needs at least one row")
    if config.num_outputs != 1:
        raise ValueError("symbolic regression requires num_outputs == 1")
    X = design_matrix(dataset, rows, config)
    y = dataset.targets[list(rows)]

    def fitness(genome: Genome) -> float:
        return mse(evaluate_batch(genome, config, X)[:, 0], y)

    return fitness


def serialise_fitness(value: float) -> float:
    return SERIALISED_WORST if not math.isfinite(value) else value
