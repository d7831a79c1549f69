import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asmsearch.checker import check_equivalence, differential
from asmsearch.checker.egraph import TOP, EGraph
from asmsearch.checker.symex import NonConstantAddress, symex_asm, symex_ir
from asmsearch.ir import parse_ir
from asmsearch.machine import CallingConvention, UnspecifiedFlagRead, parse_asm

from conftest import read_fixture
from helpers import TERM_OPS, check_laws, worked_example, term_pool

M = 2**64


def test_worked_example_node():
    eg, n = worked_example()
    assert n == 6
    assert eg.describe(n) == "+(0,1,3,5)"
    assert eg.describe(5) == ">>(1,4)"


def test_laws_hold():
    fails, counts = check_laws(3000, seed=1)
    assert not fails
    assert min(counts.values()) == 3000


# plain-integer meaning of each operator, independent of the rewrite code
def meaning(op, v):
    if op == "add":
        return sum(v) % M
    if op == "addcarry":
        return sum(v) // M
    if op == "sub":
        return (v[0] - sum(v[1:])) % M
    if op == "subborrow":
        return int(v[0] < sum(v[1:]))
    if op == "mullo":
        r = 1
        for x in v:
            r = r * x % M
        return r
    if op == "mulhi":
        return v[0] * v[1] // M
    if op in ("and", "or", "xor"):
        r = {"and": M - 1, "or": 0, "xor": 0}[op]
        for x in v:
            r = r & x if op == "and" else (r | x if op == "or" else r ^ x)
        return r
    if op == "shl":
        return v[0] * 2 ** (v[1] % 64) % M
    if op == "shr":
        return v[0] >> (v[1] % 64)
    if op == "nonzero":
        return int(v[0] != 0)
    if op == "iszero":
        return int(v[0] == 0)
    if op == "lowbyte":
        return v[0] % 256
    if op == "select":
        return v[2] if v[0] else v[1]
    raise AssertionError(op)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32))
def test_rewrites_preserve_values_and_bounds(seed):
    rng = random.Random(seed)
    eg, nodes = term_pool(rng, size=4)
    env = {}
    for n in nodes:
        if eg.ops[n] == "var":
            env[eg.payload[n]] = rng.choice([0, 1, eg.bound_of(n), rng.randint(0, eg.bound_of(n))])
    for _ in range(20):
        op = rng.choice(sorted(TERM_OPS))
        args = [rng.choice(nodes) for _ in range(TERM_OPS[op] or rng.randint(2, 3))]
        n = eg.internalize(op, args)
        vals = eg.evaluate(env)
        assert vals[n] == meaning(op, [vals[a] for a in args]), (op, [eg.expr(a) for a in args])
        nodes.append(n)
    vals = eg.evaluate(env)
    assert all(v <= eg.bound_of(i) for i, v in enumerate(vals))


def test_bounds_gate_carries():
    eg = EGraph()
    a = eg.var("a", 2**63 - 1)
    b = eg.var("b", 2**63 - 1)
    assert eg.internalize("addcarry", [a, b]) == eg.const(0)
    assert eg.internalize("addcarry", [a, b, eg.const(1)]) == eg.const(0)
    c = eg.var("c")
    assert eg.internalize("addcarry", [a, c]) != eg.const(0)
    assert eg.bound_of(eg.internalize("mulhi", [eg.var("s", 2**32 - 1), eg.var("t", 2**32 - 1)])) == 0


def test_truncation_elided_under_bound():
    eg = EGraph()
    x = eg.var("x", 0xFF)
    assert eg.internalize("and", [x, eg.const(0xFF)]) == x
    assert eg.internalize("lowbyte", [x]) == x
    y = eg.var("y")
    assert eg.internalize("and", [y, eg.const(0xFF)]) == eg.internalize("lowbyte", [y])


def test_reassociated_programs_share_a_node():
    p = parse_ir("fn f(a: u64, b: u64, c: u64) -> (u64) { t = add(b, c); r = add(a, t); return r; }")
    q = parse_ir("fn f(a: u64, b: u64, c: u64) -> (u64) { t = add(a, b); r = add(t, c); return r; }")
    eg = EGraph()
    assert symex_ir(p, eg).outputs == symex_ir(q, eg).outputs


def test_identity_program_outputs_its_input():
    prog = parse_ir("fn id(a: u64) -> (u64) { return a; }")
    s = symex_ir(prog)
    assert s.outputs == s.inputs


def test_clc_adcx_matches_first_addition(example):
    eg = EGraph()
    irs = symex_ir(example, eg)
    asm = parse_asm("mov rdx, [rsi+16]\nclc\nadcx rdx, [rsi+8]")
    st_ = symex_asm(asm, CallingConvention.for_program(example), eg, irs.inputs)
    assert st_.regs["rdx"] == irs.env["t0"]
    x, y, z = irs.inputs
    assert st_.flags["CF"] == eg.internalize("addcarry", [y, z])
    # both inputs are below 2^63, so that carry is known to be zero
    assert st_.flags["CF"] == eg.const(0)


def test_store_then_load_is_the_same_node(example):
    eg = EGraph()
    irs = symex_ir(example, eg)
    asm = parse_asm("mov rax, [rsi]\nmov [rdi], rax\nmov rcx, [rdi]")
    st_ = symex_asm(asm, CallingConvention.for_program(example), eg, irs.inputs)
    assert st_.regs["rcx"] == st_.regs["rax"] == irs.inputs[0]


def test_register_indexed_address_rejected(example):
    eg = EGraph()
    irs = symex_ir(example, eg)
    with pytest.raises(NonConstantAddress):
        symex_asm(parse_asm("mov rax, [r8+r9]"), CallingConvention.for_program(example), eg, irs.inputs)


def test_unspecified_flag(example):
    eg = EGraph()
    irs = symex_ir(example, eg)
    with pytest.raises(UnspecifiedFlagRead):
        symex_asm(parse_asm("mov rax, 0\nadc rax, 0"), CallingConvention.for_program(example), eg, irs.inputs)


@pytest.mark.parametrize("name", ["first.s", "improved.s"])
def test_accepts_reference_asm(example, name):
    v = check_equivalence(example, parse_asm(read_fixture(name)))
    assert v.accepted and v.status == "Proven"
    assert v.node_count > 10


def test_rejects_corrupted_asm(example):
    v = check_equivalence(example, parse_asm(read_fixture("corrupted.s")))
    assert not v.accepted
    assert v.status == "Disproven"
    cex = v.counterexample
    assert cex["inputs"]["Y"] != cex["inputs"]["Z"]
    assert cex["actual"] != cex["expected"]


def test_rejects_clobbered_callee_saved(example):
    body = read_fixture("first.s").replace("sub rsp, 8", "sub rsp, 8\n  mov rbx, 1")
    v = check_equivalence(example, parse_asm(body))
    assert not v.accepted
    assert "rbx" in v.reason


def test_missing_output_rejected(example):
    body = read_fixture("improved.s").replace("mov [rdi], r8", "")
    v = check_equivalence(example, parse_asm(body))
    assert not v.accepted


def test_verdict_json(example, first_asm):
    v = check_equivalence(example, first_asm)
    d = v.to_dict(timing=False)
    assert set(d) == {"accepted", "reason", "status", "node_count"}
    assert '"accepted": true' in v.to_json()


def test_differential_agrees_with_reference_asm(example, first_asm, improved_asm):
    cc = CallingConvention.for_program(example)
    assert differential(example, first_asm, cc, n=2000) is None
    assert differential(example, improved_asm, cc, n=2000) is None


def test_bounds_hold_on_full_graph(example, first_asm, improved_asm):
    eg = EGraph()
    irs = symex_ir(example, eg)
    cc = CallingConvention.for_program(example)
    for asm in (first_asm, improved_asm):
        symex_asm(asm, cc, eg, irs.inputs)
    rng = random.Random(3)
    names = [eg.payload[i] for i in range(len(eg)) if eg.ops[i] == "var"]
    for _ in range(100):
        env = {n: rng.randint(0, eg.bound_of(eg.var(n))) for n in names}
        vals = eg.evaluate(env)
        assert all(v <= eg.bound_of(i) for i, v in enumerate(vals))
    # every discarded carry of the example is provably zero
    carries = [n for _, kind, n in irs.discarded if kind == "addcarryx"]
    assert len(carries) == 3
    assert all(eg.bound_of(n) == 0 for n in carries)


def test_identity_and_constant_rules():
    eg = EGraph()
    x = eg.var("x")
    assert eg.internalize("add", [x, eg.const(0)]) == x
    nine = eg.const(9)
    assert eg.internalize("lowbyte", [nine]) == nine


def test_small_bounds():
    eg = EGraph()
    x, y = eg.var("x", 1), eg.var("y", 1)
    assert eg.bound_of(eg.internalize("add", [x, y])) == 2
    a, b = eg.var("a", 2**62), eg.var("b", 2**62)
    c = eg.internalize("addcarry", [a, b, eg.const(0)])
    assert eg.bound_of(c) == 0
    bits3 = [eg.internalize("addcarry", [eg.var(f"p{i}"), eg.var(f"q{i}")]) for i in range(3)]
    s = eg.internalize("add", bits3)
    assert eg.bound_of(s) == 3
    assert eg.internalize("lowbyte", [s]) == s


def test_graph_structure(example, first_asm):
    eg = EGraph()
    irs = symex_ir(example, eg)
    symex_asm(first_asm, CallingConvention.for_program(example), eg, irs.inputs)
    keys = [(eg.ops[i], eg.args[i], eg.payload[i]) for i in range(len(eg))]
    assert len(set(keys)) == len(keys)
    for i in range(len(eg)):
        if eg.ops[i] == "const":
            assert eg.args[i] == ()
        assert all(c < i for c in eg.args[i])


def test_example_output_shape(example):
    s = symex_ir(example)
    eg = s.egraph
    o1, o0 = s.outputs
    assert eg.ops[o0] == "add"
    assert s.env["Z"] in eg.args[o0]
    assert eg.ops[o1] == "add"
