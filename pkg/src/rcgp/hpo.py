"""
Hyperparameter tuning of the evolutionary algorithm under k-fold cross-validation.

Two search strategies share one objective interface: ``objective(hp) -> (mean, per_fold)``.
``random`` samples the space independently; ``model_based`` fits an
inverse-distance-weighted surrogate over normalised coordinates and picks the
candidate with the largest expected improvement.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .cgp import CgpConfig, evaluate_batch
from .evolution import HyperparameterConfiguration, evolve
from .regression import (
    Dataset, FoldAssignment, SplitSpec, design_matrix, fitness_on, mse, serialise_fitness,
)

logger = logging.getLogger(__name__)

STRATEGIES = ("random", "model_based")
INITIAL_RANDOM_TRIALS = 10
CANDIDATE_POOL = 1000
IDW_POWER = 4.0
SPREAD_SCALE = 0.3
LOCAL_CENTRES = 3
LOCAL_SCALES = (0.005, 0.02, 0.06)

Objective = Callable[[HyperparameterConfiguration], "tuple[float, list[float]]"]


@dataclass(frozen=True)
class HyperparameterSpace:
    """Inclusive bounds per tuned hyperparameter.

    The defaults are stand-ins that bracket the usual baseline values; they are
    not the bounds of any published tuning scenario.
    """

    population_size: tuple[int, int] = (10, 200)
    levels_back: tuple[int, int] = (10, 500)
    mutation_rate: tuple[float, float] = (0.01, 0.5)
    cx_rate: tuple[float, float] = (0.0, 1.0)
    tournament_size: tuple[int, int] = (2, 10)
    num_function_nodes: tuple[int, int] = (10, 500)

    INTEGER = ("population_size", "levels_back", "tournament_size", "num_function_nodes")
    ORDER = ("population_size", "levels_back", "mutation_rate", "cx_rate", "tournament_size", "num_function_nodes")

    def __post_init__(self):
        for name in self.ORDER:
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
        if self.population_size[0] < 2:
            raise ValueError("population_size lower bound must be >= 2")
        if self.tournament_size[0] < 1 or self.tournament_size[0] > self.population_size[1]:
            raise ValueError("tournament_size range cannot fit any population size")
        if self.num_function_nodes[0] < 1 or self.levels_back[0] < 1:
            raise ValueError("num_function_nodes and levels_back must be >= 1")
        if self.mutation_rate[0] < 0 or self.mutation_rate[1] > 1 or self.cx_rate[0] < 0 or self.cx_rate[1] > 1:
            raise ValueError("rates must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "HyperparameterSpace":
        unknown = set(d) - set(cls.ORDER)
        if unknown:
            raise ValueError(f"unknown space dimension(s): {sorted(unknown)}")
        return cls(**{k: tuple(v) for k, v in d.items()})

    def to_dict(self) -> dict:
        return {k: list(getattr(self, k)) for k in self.ORDER}

    def contains(self, hp: HyperparameterConfiguration) -> list[str]:
        """Names of fields of ``hp`` outside the bounds (empty when inside)."""
        out = []
        for name in self.ORDER:
            lo, hi = getattr(self, name)
            if not lo <= getattr(hp, name) <= hi:
                out.append(name)
        return out

    def normalise(self, hp: HyperparameterConfiguration) -> np.ndarray:
        x = []
        for name in self.ORDER:
            lo, hi = getattr(self, name)
            x.append(0.5 if hi == lo else (getattr(hp, name) - lo) / (hi - lo))
        return np.array(x)

    def denormalise(self, x: Sequence[float]) -> HyperparameterConfiguration:
        """Map a point of the unit cube back into the space, enforcing all constraints."""
        vals = {}
        for name, xi in zip(self.ORDER, x):
            lo, hi = getattr(self, name)
            v = lo + min(max(float(xi), 0.0), 1.0) * (hi - lo)
            vals[name] = int(round(v)) if name in self.INTEGER else v
        vals["levels_back"] = min(vals["levels_back"], vals["num_function_nodes"])
        vals["tournament_size"] = min(vals["tournament_size"], vals["population_size"])
        return HyperparameterConfiguration(**vals)


def sample_configuration(space: HyperparameterSpace, rng: np.random.Generator) -> HyperparameterConfiguration:
    """Uniform draw; the node count is drawn before levels_back, which is capped by it."""
    def integer(lo, hi):
        return int(rng.integers(lo, hi + 1))

    pop = integer(*space.population_size)
    tour = integer(space.tournament_size[0], min(space.tournament_size[1], pop))
    mut = float(rng.uniform(*space.mutation_rate))
    cx = float(rng.uniform(*space.cx_rate))
    nodes = integer(*space.num_function_nodes)
    lb_hi = min(space.levels_back[1], nodes)
    lb = integer(min(space.levels_back[0], lb_hi), lb_hi)
    return HyperparameterConfiguration(pop, lb, mut, cx, tour, nodes)


@dataclass
class TrialRecord:
    configuration: HyperparameterConfiguration
    objective: float
    per_fold: list[float]
    seed: int
    trial_index: int

    def to_dict(self) -> dict:
        return {
            "trial_index": self.trial_index,
            "seed": self.seed,
            "configuration": self.configuration.to_dict(),
            "objective": serialise_fitness(self.objective),
            "per_fold": [serialise_fitness(v) for v in self.per_fold],
        }


@dataclass
class TuningResult:
    incumbent: HyperparameterConfiguration
    trials: list[TrialRecord]
    strategy: str
    incumbent_trial: int = 0

    @property
    def incumbent_objective(self) -> float:
        return self.trials[self.incumbent_trial].objective


def cv_objective(
    hp: HyperparameterConfiguration,
    dataset: Dataset,
    split: SplitSpec,
    folds: FoldAssignment,
    crossover_kind: str,
    budget: int,
    seed: int,
    cgp_base: CgpConfig,
    restricted_reconnect: bool = False,
) -> tuple[float, list[float]]:
    """Mean validation MSE of the best-of-run genome over the folds."""
    if set(folds.rows) != set(split.train_indices):
        raise ValueError("folds must be defined over the split's training rows")
    config = cgp_base.replace(num_function_nodes=hp.num_function_nodes, levels_back=hp.levels_back)
    per_fold = []
    for f in range(folds.k):
        train_rows, val_rows = folds.fold_rows(f)
        result = evolve(
            fitness_on(train_rows, dataset, config), hp, cgp_base, budget,
            crossover_kind, seed ^ f, restricted_reconnect,
        )
        X = design_matrix(dataset, val_rows, config)
        pred = evaluate_batch(result.best.genome, config, X)[:, 0]
        per_fold.append(mse(pred, dataset.targets[val_rows]))
    return float(np.mean(per_fold)), per_fold


def _expected_improvement(mean: np.ndarray, sd: np.ndarray, best: float) -> np.ndarray:
    sd = np.maximum(sd, 1e-12)
    z = (best - mean) / sd
    cdf = 0.5 * (1 + np.vectorize(math.erf)(z / math.sqrt(2)))
    pdf = np.exp(-0.5 * z**2) / math.sqrt(2 * math.pi)
    return (best - mean) * cdf + sd * pdf


def idw_surrogate(
    X: np.ndarray, y: np.ndarray, candidates: np.ndarray, power: float = IDW_POWER
) -> tuple[np.ndarray, np.ndarray]:
    """Inverse-distance-weighted mean and spread at each candidate.

    The spread is the weighted spread of observed values around the prediction
    plus the leave-one-out residual scale grown with distance to the nearest
    observation, damped by ``SPREAD_SCALE``.
    """
    d = np.sqrt(((candidates[:, None, :] - X[None, :, :]) ** 2).sum(-1))
    w = np.maximum(d, 1e-12) ** -power
    w /= w.sum(1, keepdims=True)
    mean = w @ y
    local = np.sqrt(np.maximum(w @ (y**2) - mean**2, 0.0))
    if len(y) > 1:
        dx = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(-1))
        np.fill_diagonal(dx, np.inf)
        wl = np.maximum(dx, 1e-12) ** -power
        loo = (wl @ y) / wl.sum(1)
        residual = float(np.sqrt(np.mean((loo - y) ** 2)))
    else:
        residual = 1.0
    nearest = d.min(1) / math.sqrt(X.shape[1])
    return mean, SPREAD_SCALE * (local + residual * nearest)


def _transform(values: Sequence[float]) -> np.ndarray:
    """Log-scale objectives for the surrogate; non-finite ones sit above the worst finite."""
    v = np.asarray(values, dtype=float)
    finite = np.isfinite(v)
    out = np.empty_like(v)
    out[finite] = np.log10(v[finite] + 1e-12)
    if (~finite).any():
        out[~finite] = (out[finite].max() + 1.0) if finite.any() else 0.0
    return out


def _propose(space: HyperparameterSpace, history: list[TrialRecord], rng: np.random.Generator) -> HyperparameterConfiguration:
    X = np.array([space.normalise(t.configuration) for t in history])
    y = _transform([t.objective for t in history])
    dims = X.shape[1]
    # half uniform over the space, half perturbations of the best few points
    n_local = CANDIDATE_POOL // 2
    glob = np.array([space.normalise(sample_configuration(space, rng)) for _ in range(CANDIDATE_POOL - n_local)])
    top = X[np.argsort(y, kind="stable")[:LOCAL_CENTRES]]
    centres = top[rng.integers(len(top), size=n_local)]
    scales = rng.choice(LOCAL_SCALES, size=(n_local, 1))
    local = np.clip(centres + rng.normal(size=(n_local, dims)) * scales, 0.0, 1.0)
    candidates = np.vstack([glob, local])
    mean, sd = idw_surrogate(X, y, candidates)
    ei = _expected_improvement(mean, sd, float(y.min()))
    return space.denormalise(candidates[int(np.argmax(ei))])


def search(
    space: HyperparameterSpace,
    objective: Objective,
    strategy: str,
    trials: int,
    seed: int,
    trial_seed: int | None = None,
) -> TuningResult:
    """Run exactly ``trials`` objective evaluations with the chosen strategy."""
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    history: list[TrialRecord] = []
    for t in range(trials):
        if strategy == "random" or t < INITIAL_RANDOM_TRIALS:
            hp = sample_configuration(space, rng)
        else:
            hp = _propose(space, history, rng)
        value, per_fold = objective(hp)
        history.append(TrialRecord(hp, value, list(per_fold), seed if trial_seed is None else trial_seed, t))
        logger.info("trial %d/%d objective=%g %s", t + 1, trials, value, hp)
    best = min(range(trials), key=lambda i: (history[i].objective, i))
    return TuningResult(history[best].configuration, history, strategy, best)


def tune(
    space: HyperparameterSpace,
    dataset: Dataset,
    split: SplitSpec,
    folds: FoldAssignment,
    strategy: str,
    trials: int,
    crossover_kind: str,
    budget: int,
    seed: int,
    cgp_base: CgpConfig,
    cgp_seed: int = 42,
    restricted_reconnect: bool = False,
) -> TuningResult:
    """Tune on the training rows; ``seed`` drives the search, ``cgp_seed`` every fold run."""

    def objective(hp):
        return cv_objective(
            hp, dataset, split, folds, crossover_kind, budget, cgp_seed, cgp_base, restricted_reconnect
        )

    return search(space, objective, strategy, trials, seed, trial_seed=cgp_seed)
