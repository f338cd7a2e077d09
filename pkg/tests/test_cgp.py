import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import active_nodes_fixpoint, is_legal, random_config
from rcgp.cgp import (
    CgpConfig,
    decode_active_nodes,
    evaluate,
    evaluate_batch,
    function_set,
    is_valid,
    node_position,
    random_genome,
    validate_genome,
)


def test_genome_length_formula():
    small = CgpConfig(num_inputs=1, num_outputs=1, num_function_nodes=1, max_arity=2, levels_back=1)
    assert len(random_genome(small, np.random.default_rng(0))) == 4
    big = CgpConfig(num_inputs=2, num_outputs=1, num_function_nodes=100, max_arity=2, levels_back=100)
    assert len(random_genome(big, np.random.default_rng(0))) == 301


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(num_inputs=0, num_outputs=1, num_function_nodes=3),
        dict(num_inputs=1, num_outputs=0, num_function_nodes=3),
        dict(num_inputs=1, num_outputs=1, num_function_nodes=0),
        dict(num_inputs=1, num_outputs=1, num_function_nodes=3, levels_back=4),
        dict(num_inputs=1, num_outputs=1, num_function_nodes=3, levels_back=0),
        dict(num_inputs=1, num_outputs=1, num_function_nodes=3, max_arity=1),  # add has arity 2
        dict(num_inputs=1, num_outputs=1, num_function_nodes=3, functions=()),
    ],
)
def test_config_rejects_invalid(kwargs):
    with pytest.raises(ValueError):
        CgpConfig(**kwargs)


def test_unknown_function_name():
    with pytest.raises(ValueError, match="unknown"):
        function_set(["add", "tan"])


def test_random_genomes_always_valid():
    rng = np.random.default_rng(42)
    config = CgpConfig(num_inputs=3, num_outputs=2, num_function_nodes=20, levels_back=5)
    for _ in range(10_000):
        g = random_genome(config, rng)
        assert is_valid(g, config)


def test_random_genome_covers_every_legal_value():
    # node 4 (last of 3 nodes, 2 inputs, levels_back 1) may reference {0, 1, 3}
    config = CgpConfig(num_inputs=2, num_outputs=1, num_function_nodes=3, levels_back=1)
    rng = np.random.default_rng(1)
    seen = {int(random_genome(config, rng)[node_position(4, config) + 1]) for _ in range(500)}
    assert seen == {0, 1, 3}


def test_validate_flags_self_reference(addmul):
    g = np.array([0, 0, 2, 1, 2, 0, 3])  # node 2 references itself
    violations = validate_genome(g, addmul)
    assert [(v.kind, v.gene_index) for v in violations] == [("connection", 2)]


def test_validate_flags_forward_reference(addmul):
    g = np.array([0, 3, 1, 1, 2, 0, 3])
    assert [v.gene_index for v in validate_genome(g, addmul)] == [1]


def test_validate_flags_function_out_of_range(addmul):
    g = np.array([2, 0, 1, 1, 2, 0, 3])  # |function_set| == 2
    (v,) = validate_genome(g, addmul)
    assert v.kind == "function" and v.gene_index == 0 and "[0, 2)" in v.legal


def test_validate_flags_output_out_of_range(addmul):
    g = np.array([0, 0, 1, 1, 2, 0, 4])
    (v,) = validate_genome(g, addmul)
    assert v.kind == "output"


def test_validate_length_mismatch_is_distinct(addmul):
    (v,) = validate_genome(np.array([0, 0, 1]), addmul)
    assert v.kind == "length"


def test_validate_levels_back_window():
    config = CgpConfig(num_inputs=1, num_outputs=1, num_function_nodes=3, levels_back=1)
    # node 3 referencing node 1 lies two nodes back
    g = np.array([0, 0, 0, 0, 1, 1, 0, 1, 2, 3])
    assert [v.gene_index for v in validate_genome(g, config)] == [7]


def test_decode_examples(addmul):
    assert decode_active_nodes(np.array([0, 0, 1, 1, 2, 0, 3]), addmul) == [2, 3]
    assert decode_active_nodes(np.array([0, 0, 1, 1, 2, 0, 2]), addmul) == [2]
    assert decode_active_nodes(np.array([0, 0, 1, 1, 2, 0, 1]), addmul) == []
    for g in ([0, 0, 1, 1, 2, 0, 3], [0, 0, 1, 1, 2, 0, 2], [0, 0, 1, 1, 2, 0, 1]):
        assert decode_active_nodes(np.array(g), addmul) == active_nodes_fixpoint(g, addmul)


def test_decode_ignores_connections_beyond_function_arity():
    config = CgpConfig.from_names(["sin", "add"], num_inputs=1, num_outputs=1, num_function_nodes=2)
    # node 1 = add(in0, in0); node 2 = sin(in0) whose unused second gene points at node 1
    assert decode_active_nodes(np.array([1, 0, 0, 0, 0, 1, 2]), config) == [2]
    # same wiring with node 2 = add(in0, node 1)
    assert decode_active_nodes(np.array([1, 0, 0, 1, 0, 1, 2]), config) == [1, 2]


@pytest.mark.parametrize("num_inputs", [2, 3])
def test_decode_matches_fixpoint_oracle(num_inputs):
    rng = np.random.default_rng(num_inputs)
    for _ in range(1000):
        config = random_config(rng, num_inputs=num_inputs)
        g = random_genome(config, rng)
        active = decode_active_nodes(g, config)
        assert active == active_nodes_fixpoint(g, config)
        assert all(config.num_inputs <= n < config.num_nodes for n in active)
        assert active == sorted(set(active))


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_generator_and_validator_agree_with_explicit_oracle(seed):
    rng = np.random.default_rng(seed)
    config = random_config(rng)
    g = random_genome(config, rng)
    assert is_valid(g, config) and is_legal(g, config)
    # corrupting one gene: validator and oracle still agree
    pos = int(rng.integers(config.genome_length))
    g[pos] = int(rng.integers(-2, config.num_nodes + 3))
    assert is_valid(g, config) == is_legal(g, config)


def test_node_position():
    c2 = CgpConfig(num_inputs=2, num_outputs=1, num_function_nodes=20)
    assert node_position(2, c2) == 0
    assert node_position(3, c2) == 3
    c3 = CgpConfig(num_inputs=3, num_outputs=1, num_function_nodes=20)
    assert node_position(10, c3) == 21
    with pytest.raises(ValueError):
        node_position(1, c2)
    with pytest.raises(ValueError):
        node_position(22, c2)


def test_evaluate_examples(addmul):
    out = evaluate(np.array([0, 0, 1, 1, 2, 0, 3]), addmul, [2.0, 3.0])
    assert out.tolist() == [10.0]
    assert evaluate(np.array([0, 0, 1, 1, 2, 0, 0]), addmul, [7.0, 1.0]).tolist() == [7.0]


def test_protected_division():
    config = CgpConfig.from_names(["pdiv"], num_inputs=2, num_outputs=1, num_function_nodes=1)
    g = np.array([0, 0, 1, 2])
    assert evaluate(g, config, [5.0, 0.0]).tolist() == [1.0]
    assert evaluate(g, config, [5.0, 1e-10]).tolist() == [1.0]
    assert evaluate(g, config, [5.0, 2.0]).tolist() == [2.5]


def test_default_function_semantics():
    fs = {f.name: f for f in function_set(["add", "sub", "mul", "pdiv", "sin", "cos"])}
    a, b = np.array([0.5, -2.0]), np.array([4.0, 0.0])
    np.testing.assert_array_equal(fs["sub"].apply(a, b), [-3.5, -2.0])
    np.testing.assert_array_equal(fs["pdiv"].apply(a, b), [0.125, 1.0])
    np.testing.assert_allclose(fs["cos"].apply(a), np.cos(a))


def test_non_finite_propagates():
    config = CgpConfig.from_names(["mul"], num_inputs=1, num_outputs=1, num_function_nodes=3)
    g = np.array([0, 0, 0, 0, 1, 1, 0, 2, 2, 3])  # x^8
    assert np.isinf(evaluate(g, config, [1e300])[0])


def test_evaluate_batch_matches_rowwise():
    rng = np.random.default_rng(3)
    config = CgpConfig(num_inputs=3, num_outputs=2, num_function_nodes=15)
    X = rng.normal(size=(16, 3))
    for _ in range(50):
        g = random_genome(config, rng)
        batch = evaluate_batch(g, config, X)
        rows = np.array([evaluate(g, config, x) for x in X])
        np.testing.assert_array_equal(batch, rows)


def test_evaluation_locality():
    rng = np.random.default_rng(8)
    config = CgpConfig(num_inputs=2, num_outputs=1, num_function_nodes=12, levels_back=6)
    X = rng.uniform(-3, 3, size=(32, 2))
    checked = 0
    for _ in range(300):
        g = random_genome(config, rng)
        inactive = sorted(set(range(config.num_inputs, config.num_nodes)) - set(decode_active_nodes(g, config)))
        if not inactive:
            continue
        node = inactive[int(rng.integers(len(inactive)))]
        pos = node_position(node, config) + int(rng.integers(config.block_size))
        mutant = g.copy()
        mutant[pos] = config.sample_genes(np.array([pos]), rng)[0]
        np.testing.assert_array_equal(evaluate_batch(g, config, X), evaluate_batch(mutant, config, X))
        checked += 1
    assert checked > 100


def test_evaluate_is_deterministic():
    rng = np.random.default_rng(9)
    config = CgpConfig(num_inputs=2, num_outputs=3, num_function_nodes=30)
    X = rng.normal(size=(20, 2))
    for _ in range(20):
        g = random_genome(config, rng)
        assert evaluate_batch(g, config, X).tobytes() == evaluate_batch(g, config, X).tobytes()


def test_only_active_nodes_are_evaluated():
    calls = []

    def spy(a, b):
        calls.append(1)
        return a + b

    from rcgp.cgp import FunctionSemantics

    config = CgpConfig(
        num_inputs=2, num_outputs=1, num_function_nodes=2, functions=(FunctionSemantics("spy", 2, spy),)
    )
    evaluate(np.array([0, 0, 1, 0, 2, 0, 2]), config, [1.0, 2.0])
    assert len(calls) == 1
