import itertools
import random
from collections import Counter, deque

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asmsearch.dfg import (InvalidMove, apply_move, build_dfg, sample_topological_order,
                           scheduling_interval, to_dot)
from asmsearch.ir import parse_ir


def test_example_edges(example):
    g = build_dfg(example)
    assert g.edges == ((0, 3), (0, 5), (1, 2), (2, 3), (2, 5), (3, 4), (3, 5), (4, 6), (5, 6))
    assert g.preds[5] == (0, 2, 3)


def test_interval_of_add4(example):
    # the fourth addition (_, t6) sits at index 5 of the identity schedule
    # and may move up past the independent third addition
    g = build_dfg(example)
    sched = tuple(range(7))
    assert scheduling_interval(g, sched, 5) == (4, 5)
    assert scheduling_interval(g, sched, 4) == (4, 5)
    assert scheduling_interval(g, sched, 0) == (0, 2)
    assert scheduling_interval(g, sched, 6) == (6, 6)


def test_apply_move(example):
    g = build_dfg(example)
    s = apply_move(g, tuple(range(7)), 5, 4)
    assert s == (0, 1, 2, 3, 5, 4, 6)
    assert g.is_valid(s)
    with pytest.raises(InvalidMove):
        apply_move(g, tuple(range(7)), 4, 3)


def test_sampled_orders_are_valid(example):
    g = build_dfg(example)
    rng = random.Random(0)
    seen = Counter(sample_topological_order(g, rng) for _ in range(500))
    assert all(g.is_valid(o) for o in seen)
    assert len(seen) > 5


def test_sampling_is_deterministic(example):
    g = build_dfg(example)
    a = [sample_topological_order(g, random.Random(7)) for _ in range(3)]
    assert len(set(a)) == 1


def test_dot_mentions_every_node(example):
    dot = to_dot(build_dfg(example), example)
    assert dot.startswith("digraph")
    assert dot.count("->") == 9


@st.composite
def small_programs(draw):
    """Up to five binary ops, each reading params or earlier results."""
    n = draw(st.integers(1, 5))
    names = ["a", "b"]
    lines = []
    for i in range(n):
        x = draw(st.sampled_from(names))
        y = draw(st.sampled_from(names))
        lines.append(f"  t{i} = add({x}, {y});")
        names.append(f"t{i}")
    body = "\n".join(lines)
    return parse_ir(f"fn p(a: u64, b: u64) -> (u64) {{\n{body}\n  return t{n - 1};\n}}")


@settings(max_examples=80, deadline=None)
@given(small_programs())
def test_moves_reach_every_topological_order(prog):
    g = build_dfg(prog)
    every = {p for p in itertools.permutations(range(g.n)) if g.is_valid(p)}
    start = sample_topological_order(g, random.Random(0))
    seen = {start}
    todo = deque([start])
    while todo:
        s = todo.popleft()
        for node in range(g.n):
            lo, hi = scheduling_interval(g, s, node)
            for p in range(lo, hi + 1):
                t = apply_move(g, s, node, p)
                assert g.is_valid(t)
                if t not in seen:
                    seen.add(t)
                    todo.append(t)
    assert seen == every


@settings(max_examples=80, deadline=None)
@given(small_programs(), st.integers(0, 1000))
def test_interval_bounds_are_tight(prog, seed):
    g = build_dfg(prog)
    s = sample_topological_order(g, random.Random(seed))
    for node in range(g.n):
        lo, hi = scheduling_interval(g, s, node)
        for p in range(g.n):
            order = [v for v in s if v != node]
            order.insert(p, node)
            assert g.is_valid(order) == (lo <= p <= hi)


def prog_of(body, ret):
    return parse_ir(f"fn p(a: u64, b: u64) -> (u64) {{ {body} return {ret}; }}")


def test_named_edges(example):
    # Mul2 -> Add2 carries t3, Add2 -> Add4 carries c0, Add3 -> Add5 carries c1
    edges = set(build_dfg(example).edges)
    assert {(2, 3), (3, 5), (4, 6)} <= edges


def test_single_and_empty():
    g = build_dfg(prog_of("x = add(a, b);", "x"))
    assert g.n == 1 and g.edges == ()
    e = build_dfg(parse_ir("fn id(a: u64) -> (u64) { return a; }"))
    assert sample_topological_order(e, random.Random(0)) == ()


def test_chain_intervals():
    g = build_dfg(prog_of("x = add(a, b); y = add(x, a); z = add(y, b);", "z"))
    assert len(g.edges) == 2
    assert scheduling_interval(g, (0, 1, 2), 1) == (1, 1)
    assert apply_move(g, (0, 1, 2), 1, 1) == (0, 1, 2)


def test_free_node_spans_program():
    g = build_dfg(prog_of("x = add(a, b); y = add(x, a); w = add(b, b);", "y"))
    assert scheduling_interval(g, (0, 1, 2), 2) == (0, 2)


def test_independent_pair_both_orders():
    g = build_dfg(prog_of("x = add(a, b); y = add(a, a);", "y"))
    rng = random.Random(0)
    seen = Counter(sample_topological_order(g, rng) for _ in range(1000))
    assert set(seen) == {(0, 1), (1, 0)}


def test_identity_order_is_sampled(example):
    g = build_dfg(example)
    rng = random.Random(0)
    assert tuple(range(7)) in {sample_topological_order(g, rng) for _ in range(500)}
