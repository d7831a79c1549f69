"""End-to-end acceptance checks.  Each prints one PASS/FAIL line.

Run with ``pytest -s tests/test_acceptance.py`` to see the lines inline, or
``python3 tests/test_acceptance.py`` for just the summary.
"""
import os
import random
import sys
import tempfile
import time

import numpy as np

sys.path.insert(0, os.path.dirname(__file__))

from asmsearch.checker import check_equivalence, differential  # noqa: E402
from asmsearch.checker.egraph import EGraph  # noqa: E402
from asmsearch.checker.symex import symex_asm, symex_ir  # noqa: E402
from asmsearch.cli import main  # noqa: E402
from asmsearch.codegen import DEFAULT_REGISTERS, PEDAGOGICAL_REGISTERS, emit  # noqa: E402
from asmsearch.ir import parse_ir  # noqa: E402
from asmsearch.machine import CallingConvention, parse_asm  # noqa: E402
from asmsearch.measure import batch_medians  # noqa: E402
from asmsearch.search import Mutator, SearchConfig, bet_and_run, initial_candidate  # noqa: E402

from conftest import fixture_path, read_fixture  # noqa: E402
from helpers import check_laws, corrupt, worked_example, mutation_walk  # noqa: E402

PROGRAMS = ("example.ir", "mul2x2.ir", "mixed.ir")


LINES = []  # shown again in the pytest summary (see conftest.py)


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    LINES.append(line)
    print(line, flush=True)
    return ok


def criterion_1():
    prog = parse_ir(read_fixture("example.ir"))
    with tempfile.TemporaryDirectory() as d:
        t0 = time.perf_counter()
        code = main(["optimize", fixture_path("example.ir"), "--out-dir", d])
        elapsed = time.perf_counter() - t0
        asm = parse_asm(open(os.path.join(d, "example.s")).read())
    v = check_equivalence(prog, asm)
    cex = differential(prog, asm, CallingConvention.for_program(prog), n=10_000, seed=1)
    ok = code == 0 and elapsed < 60 and v.accepted and cex is None
    return ok, f"optimize took {elapsed:.1f}s, verdict {v.status}, 10000-input mismatches: {0 if cex is None else '>0'}"


def criterion_2():
    prog = parse_ir(read_fixture("example.ir"))
    parts, ok = [], True
    for name in ("first.s", "improved.s"):
        t0 = time.perf_counter()
        v = check_equivalence(prog, parse_asm(read_fixture(name)))
        dt = time.perf_counter() - t0
        ok &= v.accepted and dt < 1.0
        parts.append(f"{name} {v.status} in {dt * 1000:.0f}ms")
    return ok, ", ".join(parts)


def criterion_3():
    prog = parse_ir(read_fixture("example.ir"))
    below = at_most = 0
    for seed in range(20):
        r = bet_and_run(prog, SearchConfig(seed=seed))
        below += r.final_cost < r.initial_cost
        at_most += r.final_cost <= r.initial_cost
    ok = below >= 18 and at_most == 20
    return ok, f"{below}/20 strictly below the initial cost, {at_most}/20 at or below"


def criterion_4():
    failures = total = 0
    for name in PROGRAMS:
        prog = parse_ir(read_fixture(name))
        cc = CallingConvention.for_program(prog)
        mut = Mutator(prog)
        for i in range(200):
            rng = random.Random(f"{name}/{i}")
            cand = mutation_walk(prog, mut, rng, 50)
            regs = PEDAGOGICAL_REGISTERS if i % 4 == 3 else DEFAULT_REGISTERS
            asm = emit(prog, cand, cc, regs)
            total += 1
            if not check_equivalence(prog, asm, cc).accepted or differential(prog, asm, cc, 1000, i):
                failures += 1
    return failures == 0 and total == 600, f"{total} candidates, {failures} failures"


def criterion_5():
    rng = random.Random(5)
    progs = [parse_ir(read_fixture(n)) for n in PROGRAMS]
    done = changed = unsound = 0
    while done < 500:
        prog = progs[done % 3]
        cc = CallingConvention.for_program(prog)
        asm = emit(prog, initial_candidate(prog, rng), cc)
        bad = corrupt(asm, rng)
        if bad is None or bad == asm:
            continue
        done += 1
        differs = differential(prog, bad, cc, n=64, seed=done) is not None
        changed += differs
        try:
            accepted = check_equivalence(prog, bad, cc).accepted
        except Exception:  # a crash is a rejection, not an accept
            accepted = False
        unsound += accepted and differs
    return unsound == 0, f"500 corruptions, {changed} change behaviour, {unsound} unsound accepts"


def criterion_6():
    fails, counts = check_laws(100_000, seed=6)
    eg, n = worked_example()
    fig = eg.describe(n)
    ok = not fails and min(counts.values()) >= 100_000 and n == 6 and fig == "+(0,1,3,5)"
    laws = ", ".join(f"{k} {counts[k] - fails[k]}/{counts[k]}" for k in sorted(counts))
    return ok, f"{laws}; worked example node {n} = {fig}"


def criterion_7():
    rng = np.random.default_rng(7)
    trials, chunk, nob, bad = 1_000_000, 100_000, 31, 0
    for _ in range(trials // chunk):
        value = rng.integers(1, 10**7, size=chunk).astype(np.float64)
        samples = np.repeat(value[:, None], nob, axis=1)
        k = rng.integers(0, 16, size=chunk)  # outliers per trial, 0..15
        # random positions: the k smallest keys of a random row
        rank = np.argsort(rng.random((chunk, nob)), axis=1).argsort(axis=1)
        hit = rank < k[:, None]
        # adversarial values: far above, far below, or just either side
        kind = rng.integers(0, 4, size=(chunk, nob))
        out = np.select([kind == 0, kind == 1, kind == 2],
                        [samples * 1e6, np.zeros_like(samples), samples + 1], samples - 1)
        samples = np.where(hit, out, samples)
        bad += int((batch_medians(samples) != value).sum())
    return bad == 0, f"{trials} trials with up to 15 outliers of 31, {bad} medians moved"


def criterion_8():
    prog = parse_ir(read_fixture("example.ir"))
    eg = EGraph()
    irs = symex_ir(prog, eg)
    cc = CallingConvention.for_program(prog)
    for name in ("first.s", "improved.s"):
        symex_asm(parse_asm(read_fixture(name)), cc, eg, irs.inputs)
    rng = random.Random(8)
    names = [eg.payload[i] for i in range(len(eg)) if eg.ops[i] == "var"]
    over = 0
    for _ in range(1000):
        env = {}
        for nm in names:
            b = eg.bound_of(eg.var(nm))
            env[nm] = rng.choice([0, b, rng.randint(0, b), max(0, b - rng.randint(0, 3))])
        vals = eg.evaluate(env)
        over += sum(v > eg.bound_of(i) for i, v in enumerate(vals))
    carries = [n for _, kind, n in irs.discarded if kind == "addcarryx"]
    zero = [eg.bound_of(n) == 0 for n in carries]
    ok = over == 0 and len(carries) == 3 and all(zero)
    return ok, f"{len(eg)} nodes x 1000 valuations, {over} bound violations; discarded carries {sum(zero)}/{len(carries)} bound 0"


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4,
            criterion_5, criterion_6, criterion_7, criterion_8]


def _run(i):
    ok, detail = CRITERIA[i - 1]()
    assert report(i, ok, detail), detail


def test_criterion_1_round_trip():
    _run(1)


def test_criterion_2_reference_asm():
    _run(2)


def test_criterion_3_search_effectiveness():
    _run(3)


def test_criterion_4_mutation_closure():
    _run(4)


def test_criterion_5_fault_injection():
    _run(5)


def test_criterion_6_egraph_laws():
    _run(6)


def test_criterion_7_measurement_robustness():
    _run(7)


def test_criterion_8_range_analysis():
    _run(8)


if __name__ == "__main__":
    results = []
    for i, fn in enumerate(CRITERIA, 1):
        ok, detail = fn()
        results.append(report(i, ok, detail))
    sys.exit(0 if all(results) else 1)
