"""
Variation operators for CGP genomes.

All operators are pure: parents are never modified and every returned genome
is a fresh array that passes :func:`rcgp.cgp.validate_genome`.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np

from .cgp import CgpConfig, Genome, decode_active_nodes, node_position


class NoActiveNodeError(ValueError):
    """A parent has no active function node, so there is nothing to cross over."""


@dataclass
class CrossoverOutcome:
    offspring: tuple[Genome, ...]
    crossover_point: int | None = None
    swap_trace: list[tuple[int, int]] = field(default_factory=list)


def point_mutation_counted(
    genome: Genome, config: CgpConfig, rate: float, rng: np.random.Generator
) -> tuple[Genome, int]:
    """Like :func:`point_mutation`, also returning the number of resampled genes."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"mutation rate must lie in [0, 1], got {rate}")
    child = np.array(genome, dtype=np.int64, copy=True)
    positions = np.flatnonzero(rng.random(child.shape[0]) < rate)
    if positions.size:
        child[positions] = config.sample_genes(positions, rng)
    return child, int(positions.size)


def point_mutation(
    genome: Genome, config: CgpConfig, rate: float, rng: np.random.Generator
) -> Genome:
    """Resample each gene independently with probability ``rate`` within its legal range."""
    return point_mutation_counted(genome, config, rate, rng)[0]


def _active_or_raise(genome: Genome, config: CgpConfig, which: str) -> list[int]:
    active = decode_active_nodes(genome, config)
    if not active:
        raise NoActiveNodeError(f"{which} has no active function node")
    return active


def subgraph_crossover(
    parent1: Genome,
    parent2: Genome,
    config: CgpConfig,
    rng: np.random.Generator,
    restricted_reconnect: bool = False,
) -> CrossoverOutcome:
    """Cut both parents at the smaller of two active crossover points and rejoin.

    Nodes up to and including the cut come from ``parent1``; later nodes and
    the output genes come from ``parent2``. The junction is then repaired by
    neighbourhood connect (single-output graphs) and random active connect.

    With ``restricted_reconnect`` only connection genes of nodes behind the cut
    that reference a function node at or before the cut which is inactive in
    ``parent1`` are resampled, drawing from the inputs and ``parent1``'s active
    nodes inside the levels-back window.
    """
    m1 = _active_or_raise(parent1, config, "parent1")
    m2 = _active_or_raise(parent2, config, "parent2")
    cp1 = m1[int(rng.integers(len(m1)))]
    cp2 = m2[int(rng.integers(len(m2)))]
    cp = min(cp1, cp2)

    cut = node_position(cp, config) + config.block_size
    child = np.array(parent2, dtype=np.int64, copy=True)
    child[:cut] = parent1[:cut]

    ni, bs = config.num_inputs, config.block_size
    front = m1[: bisect.bisect_right(m1, cp)]
    behind = m2[bisect.bisect_right(m2, cp) :]

    linked_gene = None
    if config.num_outputs == 1 and behind:
        first_behind = behind[0]
        # cp itself may be inactive in parent1 when it was drawn from parent2
        last_front = front[-1] if front else cp
        if last_front >= config.window_start(first_behind):
            linked_gene = node_position(first_behind, config) + 1
            child[linked_gene] = last_front

    if restricted_reconnect:
        front_set = set(front)
        for node in behind:
            p = node_position(node, config)
            start = config.window_start(node)
            pool = None
            for j in range(1, bs):
                pos = p + j
                src = int(child[pos])
                if pos == linked_gene or src < ni or src > cp or src in front_set:
                    continue
                if pool is None:
                    pool = list(range(ni)) + [n for n in front if n >= start]
                child[pos] = pool[int(rng.integers(len(pool)))]
    else:
        positions = config.connection_positions
        positions = positions[positions >= cut]
        if linked_gene is not None:
            positions = positions[positions != linked_gene]
        child[positions] = config.sample_genes(positions, rng)

    if config.num_outputs > 1:
        outs = np.arange(config.output_start, config.genome_length)
        child[outs] = config.sample_genes(outs, rng)

    return CrossoverOutcome(offspring=(child,), crossover_point=cp)


def repair_connections(child: Genome, config: CgpConfig, rng: np.random.Generator) -> np.ndarray:
    """Resample, in ascending gene order, every connection gene outside its legal range.

    Modifies ``child`` in place and returns the repaired gene indices.
    """
    positions = config.connection_positions
    owner, start = config.connection_owner, config.connection_window_start
    v = child[positions]
    bad = positions[~((v < config.num_inputs) | ((v >= start) & (v < owner)))]
    if bad.size:
        child[bad] = config.sample_genes(bad, rng)
    return bad


def discrete_recombination(
    parent1: Genome, parent2: Genome, config: CgpConfig, rng: np.random.Generator
) -> CrossoverOutcome:
    """Swap gene blocks of positionally paired active nodes; yields two offspring.

    At each active index a fair coin decides whether to swap. At the last
    shared index, when the parents' active counts differ, the longer parent
    contributes a randomly chosen node from its remaining active tail.
    """
    m1 = _active_or_raise(parent1, config, "parent1")
    m2 = _active_or_raise(parent2, config, "parent2")
    lo, hi = min(len(m1), len(m2)), max(len(m1), len(m2))
    o1 = np.array(parent1, dtype=np.int64, copy=True)
    o2 = np.array(parent2, dtype=np.int64, copy=True)
    bs = config.block_size
    trace = []
    for i in range(lo):
        if rng.random() >= 0.5:
            continue
        if i == lo - 1 and len(m1) != len(m2):
            r = int(rng.integers(0, hi - i))
            if len(m1) < len(m2):
                n1, n2 = m1[i], m2[i + r]
            else:
                n1, n2 = m1[i + r], m2[i]
        else:
            n1, n2 = m1[i], m2[i]
        p1, p2 = node_position(n1, config), node_position(n2, config)
        block1 = o1[p1 : p1 + bs].copy()
        o1[p1 : p1 + bs] = o2[p2 : p2 + bs]
        o2[p2 : p2 + bs] = block1
        trace.append((p1, p2))
    repair_connections(o1, config, rng)
    repair_connections(o2, config, rng)
    return CrossoverOutcome(offspring=(o1, o2), swap_trace=trace)
