import random

import pytest

from asmsearch.codegen import Candidate, validate_candidate
from asmsearch.ir import parse_ir
from asmsearch.measure import DEFAULT_LATENCY, Objective, SimCostModel, SimTimer
from asmsearch.search import (Evaluator, Mutator, NoMutationAvailable, SearchConfig, SearchTrace,
                              bet_and_run, initial_candidate, mutate, rls_run)

from helpers import mutation_walk
from test_codegen import CAND_FIRST

ONE_SUB = "fn f(a: u64, b: u64) -> (u64) { r = sub(a, b); return r; }"


def flat_evaluator(prog):
    model = SimCostModel({k: 0 for k in DEFAULT_LATENCY}, mem_surcharge=0)
    return Evaluator(prog, objective=Objective(SimTimer(model)))


def test_initial_candidate_is_valid(example):
    c = initial_candidate(example, random.Random(0))
    validate_candidate(example, c)


def test_single_op_has_one_schedule():
    prog = parse_ir("fn f(a: u64, b: u64) -> (u64) { r = add(a, b); return r; }")
    seen = {initial_candidate(prog, random.Random(s)) for s in range(30)}
    assert {c.schedule for c in seen} == {(0,)}
    assert {c.templates[0] for c in seen} == {"add/add", "add/lea"}


def test_seeds_give_different_candidates(example):
    diff = sum(initial_candidate(example, random.Random(2 * i)) != initial_candidate(example, random.Random(2 * i + 1))
               for i in range(100))
    assert diff > 90


def test_no_mutation_available():
    prog = parse_ir(ONE_SUB)
    c = initial_candidate(prog, random.Random(0))
    with pytest.raises(NoMutationAvailable):
        mutate(prog, c, random.Random(0))


def test_budget_zero_is_identity(example):
    c0 = initial_candidate(example, random.Random(1))
    c, trace = rls_run(example, c0, 0, Evaluator(example), random.Random(1))
    assert c == c0 and trace.rows == []


def test_no_mutation_stops_run():
    prog = parse_ir(ONE_SUB)
    c0 = initial_candidate(prog, random.Random(0))
    c, trace = rls_run(prog, c0, 50, Evaluator(prog), random.Random(0))
    assert c == c0 and trace.rows == []


def test_mutations_stay_valid_and_undo(example, mixed):
    for prog in (example, mixed):
        m = Mutator(prog)
        rng = random.Random(2)
        c = initial_candidate(prog, rng)
        for _ in range(300):
            new, mut = m.mutate(c, rng)
            validate_candidate(prog, new)
            assert new != c
            assert mut.undo(new) == c
            c = new


def test_single_step_mutations_reachable(example):
    """Moving the fourth addition up one slot, and switching the first
    addition from adcx to add, are both single mutations of the first
    candidate."""
    m = Mutator(example)
    rng = random.Random(0)
    results = {m.mutate(CAND_FIRST, rng)[0] for _ in range(2000)}
    alpha = Candidate((0, 1, 2, 3, 5, 4, 6), CAND_FIRST.templates, CAND_FIRST.decisions)
    beta_t = list(CAND_FIRST.templates)
    beta_t[1] = "addcarryx/add"
    beta = Candidate(CAND_FIRST.schedule, tuple(beta_t), CAND_FIRST.decisions)
    assert alpha in results and beta in results


def test_kind_weights_respected(example):
    m = Mutator(example, {"template": 1.0})
    rng = random.Random(0)
    c = initial_candidate(example, rng)
    for _ in range(50):
        c, mut = m.mutate(c, rng)
        assert mut.kind == "template"


def test_rls_is_monotone(example):
    ev = Evaluator(example)
    for seed in range(3):
        rng = random.Random(seed)
        c0 = initial_candidate(example, rng)
        before = ev.cost(c0, rng)
        c, trace = rls_run(example, c0, 1000, ev, rng)
        costs = trace.accepted_costs()
        assert all(b <= a for a, b in zip(costs, costs[1:]))
        assert ev.cost(c, rng) <= before
        assert len(trace.rows) == 1000
        for r in trace.rows:
            assert r.accepted == (r.pb <= r.pa)


def test_run_phase_length(example):
    conf = SearchConfig(total_budget=1000, bet_runs=3, bet_budget=100, seed=1)
    res = bet_and_run(example, conf)
    rows = res.trace.rows
    assert sum(r.run == "final" for r in rows) == 700
    assert sum(r.run != "final" for r in rows) == 300
    assert len(res.bet_costs) == 3
    assert res.verdict.accepted


def test_ties_continue_lowest_bet(example):
    conf = SearchConfig(total_budget=50, bet_runs=4, bet_budget=10, seed=3)
    res = bet_and_run(example, conf, flat_evaluator(example))
    assert res.bet_costs == [0, 0, 0, 0]
    assert res.best_bet == 0


def test_best_bet_has_lowest_cost(example):
    conf = SearchConfig(total_budget=400, bet_runs=4, bet_budget=50, seed=7)
    res = bet_and_run(example, conf)
    assert res.bet_costs[res.best_bet] == min(res.bet_costs)
    assert res.final_cost <= res.bet_costs[res.best_bet]


def test_deterministic(example):
    conf = SearchConfig(total_budget=600, bet_runs=3, bet_budget=100, seed=11)
    a = bet_and_run(example, conf)
    b = bet_and_run(example, conf)
    assert a.candidate == b.candidate
    assert a.trace.to_csv() == b.trace.to_csv()


def test_paranoid_mode(mixed):
    conf = SearchConfig(total_budget=60, bet_runs=2, bet_budget=20, seed=0, paranoid=True)
    res = bet_and_run(mixed, conf)
    assert res.verdict.accepted


def test_trace_csv():
    t = SearchTrace()
    assert t.to_csv().splitlines() == ["run,step,kind,PA,PB,accepted,cost"]


def test_config_invariant():
    with pytest.raises(ValueError):
        SearchConfig(total_budget=100, bet_runs=10, bet_budget=20)
    with pytest.raises(ValueError):
        SearchConfig(weights={"swap": 1.0})


def test_walks_end_on_valid_candidates(mul2x2):
    m = Mutator(mul2x2)
    for seed in range(10):
        validate_candidate(mul2x2, mutation_walk(mul2x2, m, random.Random(seed), 50))


def test_rls_improves_most_random_starts(example):
    ev = Evaluator(example)
    better = 0
    for seed in range(20):
        rng = random.Random(seed)
        c0 = initial_candidate(example, rng)
        c, _ = rls_run(example, c0, 2000, ev, rng)
        better += ev.cost(c, rng) < ev.cost(c0, rng)
    assert better >= 18
