"""Generators shared by the unit tests and the acceptance suite."""
import random
from collections import Counter
from dataclasses import replace

from asmsearch.checker.egraph import ASSOC, COMM, TOP, EGraph
from asmsearch.machine import GPR64, Imm, Instr, Mem, Reg

# operator -> arity (None means n-ary, drawn as 2 or 3)
TERM_OPS = {
    "add": None, "mullo": None, "and": None, "or": None, "xor": None, "addcarry": None,
    "sub": None, "subborrow": None, "mulhi": 2, "shr": 2, "shl": 2, "nonzero": 1,
    "iszero": 1, "lowbyte": 1, "select": 3,
}
BOUNDS = (TOP, 2**63 - 1, 2**32 - 1, 0xFF, 1)
CONSTS = (0, 1, 2, 3, 0xFF, 2**63, TOP, 7)


def term_pool(rng, size=12):
    """An E-graph with four bounded variables, a few constants and
    ``size`` random internalized terms over them."""
    eg = EGraph()
    nodes = [eg.var(n, rng.choice(BOUNDS)) for n in "abcd"]
    nodes += [eg.const(rng.choice(CONSTS)) for _ in range(3)]
    for _ in range(size):
        op = rng.choice(sorted(TERM_OPS))
        k = TERM_OPS[op] or rng.randint(2, 3)
        args = [rng.choice(nodes) for _ in range(k)]
        if op in ("shl", "shr"):
            args[1] = eg.const(rng.randrange(64))
        nodes.append(eg.internalize(op, args))
    return eg, nodes


def check_laws(cases, seed=0):
    """Run ``cases`` random instances of each law; returns (failures, counts)."""
    rng = random.Random(seed)
    fails, counts = Counter(), Counter()
    eg, nodes = term_pool(rng)
    for i in range(cases):
        if i % 50 == 0:
            eg, nodes = term_pool(rng)
        op = rng.choice(sorted(COMM))
        args = [rng.choice(nodes) for _ in range(2 if op == "mulhi" else rng.randint(2, 4))]
        n0 = eg.internalize(op, args)
        size = len(eg)
        # idempotence: same node, nothing new allocated
        counts["idempotence"] += 1
        if eg.internalize(op, args) != n0 or len(eg) != size:
            fails["idempotence"] += 1
        counts["permutation"] += 1
        perm = args[:]
        rng.shuffle(perm)
        if eg.internalize(op, perm) != n0:
            fails["permutation"] += 1
        aop = rng.choice(sorted(ASSOC))
        a, b, c = (rng.choice(nodes) for _ in range(3))
        counts["flattening"] += 1
        nested = eg.internalize(aop, [eg.internalize(aop, [a, b]), c])
        flat_children = eg.ops[nested] != aop or all(eg.ops[x] != aop for x in eg.args[nested])
        if nested != eg.internalize(aop, [a, b, c]) or not flat_children:
            fails["flattening"] += 1
        counts["identity"] += 1
        unit = {"add": 0, "mullo": 1, "and": TOP, "or": 0, "xor": 0}[aop]
        if eg.internalize(aop, [a, eg.const(unit), b]) != eg.internalize(aop, [a, b]):
            fails["identity"] += 1
    return fails, counts


def worked_example():
    """Node 6 of the worked example; returns (egraph, node id)."""
    eg = EGraph()
    x = eg.var("x")                       # 0
    y = eg.var("y")                       # 1
    eg.internalize("add", [x, y])         # 2
    z = eg.var("z")                       # 3
    nine = eg.const(9)                    # 4
    s = eg.internalize("shr", [y, nine])  # 5
    return eg, eg.internalize("add", [x, z, s, y])


# --- single-point corruptions --------------------------------------------------

SWAPS = {
    "add": "sub", "sub": "add", "adc": "sbb", "sbb": "adc", "adcx": "adox", "adox": "adcx",
    "and": "or", "or": "xor", "xor": "and", "shl": "shr", "shr": "shl", "setc": "seto",
    "seto": "setc", "cmovc": "cmovnz", "cmovnz": "cmovc", "shlx": "shrx", "shrx": "shlx",
}
SCRATCH = [r for r in GPR64 if r not in ("rsp",)]


def corrupt(asm, rng):
    """Flip one opcode, register operand, memory offset or immediate.
    Returns a new program, or None when the picked spot has nothing to flip."""
    i = rng.randrange(len(asm))
    ins = asm.instrs[i]
    what = rng.choice(["op", "arg"])
    if what == "op":
        if ins.op not in SWAPS:
            return None
        new = Instr(SWAPS[ins.op], ins.args)
    else:
        if not ins.args:
            return None
        j = rng.randrange(len(ins.args))
        a = ins.args[j]
        if isinstance(a, Reg):
            if a.width != 64:
                return None
            b = Reg(rng.choice([r for r in SCRATCH if r != a.name]))
        elif isinstance(a, Mem):
            b = replace(a, offset=a.offset + rng.choice([-8, 8]))
        elif isinstance(a, Imm):
            b = Imm(a.value + rng.choice([-1, 1]))
        else:  # pragma: no cover
            return None
        args = list(ins.args)
        args[j] = b
        new = Instr(ins.op, tuple(args))
    instrs = list(asm.instrs)
    instrs[i] = new
    return replace(asm, instrs=tuple(instrs))


def mutation_walk(prog, mutator, rng, steps):
    """A random candidate followed by ``steps`` unconditional mutations."""
    from asmsearch.search import initial_candidate
    cand = initial_candidate(prog, rng)
    for _ in range(steps):
        cand, _ = mutator.mutate(cand, rng)
    return cand
