"""
Cartesian genetic programming: single-row encoding, decoding and evaluation.

A genome is a flat ``numpy`` integer vector. Function node ``n`` (0-based
among function nodes) owns the block ``[n * (1 + max_arity), (n + 1) * (1 + max_arity))``:
one function gene followed by ``max_arity`` connection genes. The trailing
``num_outputs`` genes are output genes. Nodes are globally numbered with the
program inputs first, so function node ``n`` has global number
``num_inputs + n``.
"""
from __future__ import annotations

import dataclasses
import functools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

Genome = np.ndarray

DIV_PROTECTION_THRESHOLD = 1e-9


@dataclass(frozen=True)
class FunctionSemantics:
    """A primitive usable by function nodes; ``apply`` works element-wise on arrays."""

    name: str
    arity: int
    apply: Callable[..., np.ndarray]


def _protected_div(a, b):
    small = np.abs(b) <= DIV_PROTECTION_THRESHOLD
    return np.where(small, 1.0, a / np.where(small, 1.0, b))


FUNCTION_REGISTRY: dict[str, FunctionSemantics] = {
    f.name: f
    for f in (
        FunctionSemantics("add", 2, np.add),
        FunctionSemantics("sub", 2, np.subtract),
        FunctionSemantics("mul", 2, np.multiply),
        FunctionSemantics("pdiv", 2, _protected_div),
        FunctionSemantics("sin", 1, np.sin),
        FunctionSemantics("cos", 1, np.cos),
    )
}

DEFAULT_FUNCTION_NAMES = ("add", "sub", "mul", "pdiv", "sin", "cos")


def function_set(names: Sequence[str]) -> tuple[FunctionSemantics, ...]:
    """Resolve registry names into an ordered function table."""
    unknown = [n for n in names if n not in FUNCTION_REGISTRY]
    if unknown:
        raise ValueError(
            f"unknown function(s) {unknown}; available: {sorted(FUNCTION_REGISTRY)}"
        )
    return tuple(FUNCTION_REGISTRY[n] for n in names)


@dataclass(frozen=True)
class CgpConfig:
    """Structural parameters of a single-row CGP graph.

    ``constants`` are fixed-value terminals appended after the data features;
    they are counted in ``num_inputs``.
    """

    num_inputs: int
    num_outputs: int
    num_function_nodes: int
    max_arity: int = 2
    levels_back: int | None = None
    functions: tuple[FunctionSemantics, ...] = field(
        default_factory=lambda: function_set(DEFAULT_FUNCTION_NAMES)
    )
    constants: tuple[float, ...] = ()

    def __post_init__(self):
        if self.levels_back is None:
            object.__setattr__(self, "levels_back", self.num_function_nodes)
        object.__setattr__(self, "functions", tuple(self.functions))
        object.__setattr__(self, "constants", tuple(float(c) for c in self.constants))
        for name in ("num_inputs", "num_outputs", "num_function_nodes", "max_arity"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 1 <= self.levels_back <= self.num_function_nodes:
            raise ValueError(
                f"levels_back must lie in [1, {self.num_function_nodes}], got {self.levels_back}"
            )
        if not self.functions:
            raise ValueError("function set is empty")
        for f in self.functions:
            if f.arity > self.max_arity:
                raise ValueError(f"function {f.name!r} has arity {f.arity} > max_arity {self.max_arity}")
        if len(self.constants) >= self.num_inputs:
            raise ValueError("constants must leave at least one data input")

    @classmethod
    def from_names(cls, names: Sequence[str], **kwargs) -> "CgpConfig":
        return cls(functions=function_set(names), **kwargs)

    def replace(self, **changes) -> "CgpConfig":
        return dataclasses.replace(self, **changes)

    @property
    def block_size(self) -> int:
        return 1 + self.max_arity

    @property
    def genome_length(self) -> int:
        return self.num_function_nodes * self.block_size + self.num_outputs

    @property
    def output_start(self) -> int:
        return self.num_function_nodes * self.block_size

    @property
    def num_nodes(self) -> int:
        """Inputs plus function nodes."""
        return self.num_inputs + self.num_function_nodes

    @property
    def function_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.functions)

    @functools.cached_property
    def arities(self) -> tuple[int, ...]:
        return tuple(f.arity for f in self.functions)

    def window_start(self, node: int) -> int:
        """Lowest function-node number a connection of ``node`` may reference."""
        return max(self.num_inputs, node - self.levels_back)

    @functools.cached_property
    def _sampling_tables(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        # Gene value for a uniform draw k in [0, choices): k if k < split else k + offset.
        length = self.genome_length
        choices = np.empty(length, dtype=np.int64)
        split = np.empty(length, dtype=np.int64)
        offset = np.zeros(length, dtype=np.int64)
        ni = self.num_inputs
        for n in range(self.num_function_nodes):
            node = ni + n
            p = n * self.block_size
            choices[p] = len(self.functions)
            split[p] = len(self.functions)
            start = self.window_start(node)
            choices[p + 1 : p + self.block_size] = ni + (node - start)
            split[p + 1 : p + self.block_size] = ni
            offset[p + 1 : p + self.block_size] = start - ni
        choices[self.output_start :] = self.num_nodes
        split[self.output_start :] = self.num_nodes
        return choices, split, offset

    @functools.cached_property
    def connection_positions(self) -> np.ndarray:
        """Gene indices of all connection genes, ascending."""
        idx = np.arange(self.output_start)
        return idx[idx % self.block_size != 0]

    @functools.cached_property
    def connection_owner(self) -> np.ndarray:
        """Global node number owning each entry of ``connection_positions``."""
        return self.num_inputs + self.connection_positions // self.block_size

    @functools.cached_property
    def connection_window_start(self) -> np.ndarray:
        return np.maximum(self.num_inputs, self.connection_owner - self.levels_back)

    def sample_genes(self, positions: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Draw a uniform legal value for each gene index in ``positions``."""
        choices, split, offset = self._sampling_tables
        c = choices[positions]
        k = (rng.random(len(positions)) * c).astype(np.int64)
        return np.where(k < split[positions], k, k + offset[positions])

    def legal_sources(self, node: int) -> list[int]:
        """All node numbers a connection gene of ``node`` may reference."""
        return list(range(self.num_inputs)) + list(range(self.window_start(node), node))

    def is_connection_gene(self, position: int) -> bool:
        return position < self.output_start and position % self.block_size != 0

    def node_of_position(self, position: int) -> int:
        """Global number of the function node owning gene ``position``."""
        return self.num_inputs + position // self.block_size


def node_position(node_number: int, config: CgpConfig) -> int:
    """Gene index where the block of function node ``node_number`` starts."""
    if not config.num_inputs <= node_number < config.num_nodes:
        raise ValueError(
            f"node {node_number} is not a function node "
            f"(valid: {config.num_inputs}..{config.num_nodes - 1})"
        )
    return (node_number - config.num_inputs) * config.block_size


def random_genome(config: CgpConfig, rng: np.random.Generator) -> Genome:
    return config.sample_genes(np.arange(config.genome_length), rng)


@dataclass(frozen=True)
class Violation:
    kind: str  # "length" | "function" | "connection" | "output"
    gene_index: int | None
    value: int | None
    legal: str

    def __str__(self):
        if self.kind == "length":
            return f"genome length {self.value} != expected {self.legal}"
        return f"{self.kind} gene {self.gene_index} = {self.value}, legal: {self.legal}"


def validate_genome(genome: Genome, config: CgpConfig) -> list[Violation]:
    """Return every rule the genome breaks; an empty list means valid."""
    genes = [int(g) for g in genome]
    if len(genes) != config.genome_length:
        return [Violation("length", None, len(genes), str(config.genome_length))]
    out: list[Violation] = []
    ni, bs = config.num_inputs, config.block_size
    nf = len(config.functions)
    for n in range(config.num_function_nodes):
        node = ni + n
        p = n * bs
        if not 0 <= genes[p] < nf:
            out.append(Violation("function", p, genes[p], f"[0, {nf})"))
        start = config.window_start(node)
        for j in range(1, bs):
            v = genes[p + j]
            if not (0 <= v < ni or start <= v < node):
                out.append(Violation("connection", p + j, v, f"[0, {ni}) u [{start}, {node})"))
    for i in range(config.output_start, config.genome_length):
        if not 0 <= genes[i] < config.num_nodes:
            out.append(Violation("output", i, genes[i], f"[0, {config.num_nodes})"))
    return out


def is_valid(genome: Genome, config: CgpConfig) -> bool:
    return not validate_genome(genome, config)


def decode_active_nodes(genome: Genome, config: CgpConfig) -> list[int]:
    """Function nodes reachable backward from the outputs, ascending.

    Only the first ``arity`` connection genes of a node's function are followed;
    the remaining connection genes of that node are non-coding.
    """
    genes = genome.tolist() if isinstance(genome, np.ndarray) else list(genome)
    ni, bs = config.num_inputs, config.block_size
    arities = config.arities
    marked = [False] * config.num_nodes
    top = -1
    for o in genes[config.output_start :]:
        marked[o] = True
        if o > top:
            top = o
    active = []
    for node in range(top, ni - 1, -1):
        if marked[node]:
            active.append(node)
            p = (node - ni) * bs
            for j in range(arities[genes[p]]):
                marked[genes[p + 1 + j]] = True
    active.reverse()
    return active


def evaluate_batch(
    genome: Genome, config: CgpConfig, X: np.ndarray, active: list[int] | None = None
) -> np.ndarray:
    """Evaluate the phenotype on every row of ``X`` (shape ``(rows, num_inputs)``).

    Returns an array of shape ``(rows, num_outputs)``. Non-finite intermediate
    values are not trapped; they propagate to the outputs.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != config.num_inputs:
        raise ValueError(f"expected inputs of shape (rows, {config.num_inputs}), got {X.shape}")
    genes = genome.tolist() if isinstance(genome, np.ndarray) else list(genome)
    if active is None:
        active = decode_active_nodes(genes, config)
    ni, bs = config.num_inputs, config.block_size
    funcs = config.functions
    values: dict[int, np.ndarray] = {i: X[:, i] for i in range(ni)}
    with np.errstate(all="ignore"):
        for node in active:
            p = (node - ni) * bs
            f = funcs[genes[p]]
            if f.arity == 2:
                values[node] = f.apply(values[genes[p + 1]], values[genes[p + 2]])
            else:
                values[node] = f.apply(*(values[genes[p + 1 + j]] for j in range(f.arity)))
    outs = genes[config.output_start :]
    return np.column_stack([values[o] for o in outs]).astype(float, copy=False)


def evaluate(genome: Genome, config: CgpConfig, inputs: Sequence[float]) -> np.ndarray:
    """Evaluate the phenotype on one input vector; returns ``num_outputs`` values."""
    row = np.asarray(inputs, dtype=float).reshape(1, -1)
    return evaluate_batch(genome, config, row)[0]
