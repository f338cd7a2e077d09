"""
Generational evolutionary algorithm with tournament selection and single elitism.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cgp import CgpConfig, Genome, random_genome
from .operators import NoActiveNodeError, discrete_recombination, point_mutation, subgraph_crossover

logger = logging.getLogger(__name__)

CROSSOVER_KINDS = ("subgraph", "discrete", "none")
DEFAULT_BUDGET = 50_000


@dataclass(frozen=True)
class HyperparameterConfiguration:
    population_size: int = 50
    levels_back: int = 100
    mutation_rate: float = 0.1
    cx_rate: float = 0.7
    tournament_size: int = 4
    num_function_nodes: int = 100

    def __post_init__(self):
        errors = self.violations()
        if errors:
            raise ValueError("; ".join(errors))

    def violations(self) -> list[str]:
        out = []
        if self.population_size < 2:
            out.append(f"population_size must be >= 2, got {self.population_size}")
        if not 1 <= self.tournament_size <= self.population_size:
            out.append(f"tournament_size must lie in [1, population_size], got {self.tournament_size}")
        for name in ("mutation_rate", "cx_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                out.append(f"{name} must lie in [0, 1], got {v}")
        if self.num_function_nodes < 1:
            out.append(f"num_function_nodes must be >= 1, got {self.num_function_nodes}")
        if not 1 <= self.levels_back <= self.num_function_nodes:
            out.append(f"levels_back must lie in [1, num_function_nodes], got {self.levels_back}")
        return out

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "HyperparameterConfiguration":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown hyperparameter(s): {sorted(unknown)}")
        ints = ("population_size", "levels_back", "tournament_size", "num_function_nodes")
        return cls(**{k: (int(v) if k in ints else float(v)) for k, v in d.items()})


@dataclass
class Individual:
    genome: Genome
    fitness: float


@dataclass
class EvolutionResult:
    best: Individual
    history: list[float]
    evaluations_used: int
    seed: int
    generations: int = 0
    crossover_failures: int = field(default=0, repr=False)


def tournament_select(
    population: Sequence[Individual], k: int, rng: np.random.Generator
) -> Individual:
    """Best of ``k`` distinct, uniformly drawn individuals; ties go to the lower index."""
    if not 1 <= k <= len(population):
        raise ValueError(f"tournament size {k} not in [1, {len(population)}]")
    picks = rng.choice(len(population), size=k, replace=False)
    winner = min(picks.tolist(), key=lambda i: (population[i].fitness, i))
    return population[winner]


def _score(value: float) -> float:
    return value if not math.isnan(value) else math.inf


def evolve(
    fitness_fn: Callable[[Genome], float],
    hp: HyperparameterConfiguration,
    cgp_base: CgpConfig,
    budget: int = DEFAULT_BUDGET,
    crossover_kind: str = "subgraph",
    seed: int = 0,
    restricted_reconnect: bool = False,
) -> EvolutionResult:
    """Minimise ``fitness_fn`` for at most ``budget`` evaluations."""
    if crossover_kind not in CROSSOVER_KINDS:
        raise ValueError(f"crossover_kind must be one of {CROSSOVER_KINDS}, got {crossover_kind!r}")
    if budget < hp.population_size:
        raise ValueError(f"budget {budget} is smaller than population_size {hp.population_size}")
    config = cgp_base.replace(
        num_function_nodes=hp.num_function_nodes, levels_back=hp.levels_back
    )
    rng = np.random.default_rng(seed)
    mu = hp.population_size

    population = [random_genome(config, rng) for _ in range(mu)]
    population = [Individual(g, _score(fitness_fn(g))) for g in population]
    evaluations = mu
    best = min(range(mu), key=lambda i: (population[i].fitness, i))
    best = population[best]
    history = [best.fitness]
    generations = failures = 0

    while evaluations + (mu - 1) <= budget:
        elite_idx = min(range(mu), key=lambda i: (population[i].fitness, i))
        offspring: list[Genome] = []
        slots = mu - 1
        while len(offspring) < slots:
            coin = rng.random()
            p1 = tournament_select(population, hp.tournament_size, rng)
            if crossover_kind != "none" and coin < hp.cx_rate:
                p2 = tournament_select(population, hp.tournament_size, rng)
                try:
                    if crossover_kind == "subgraph":
                        children = subgraph_crossover(
                            p1.genome, p2.genome, config, rng, restricted_reconnect
                        ).offspring
                    else:
                        children = discrete_recombination(p1.genome, p2.genome, config, rng).offspring
                except NoActiveNodeError:
                    failures += 1
                    children = (p1.genome,)
            else:
                children = (p1.genome,)
            for child in children:
                mutated = point_mutation(child, config, hp.mutation_rate, rng)
                if len(offspring) < slots:
                    offspring.append(mutated)
        new_pop = [population[elite_idx]]
        for g in offspring:
            new_pop.append(Individual(g, _score(fitness_fn(g))))
        evaluations += len(offspring)
        population = new_pop
        generations += 1
        gen_best = min(population, key=lambda ind: ind.fitness)
        if gen_best.fitness < best.fitness:
            best = gen_best
        history.append(best.fitness)

    logger.debug(
        "evolve seed=%s kind=%s generations=%d evaluations=%d best=%g",
        seed, crossover_kind, generations, evaluations, best.fitness,
    )
    return EvolutionResult(best, history, evaluations, seed, generations, failures)
