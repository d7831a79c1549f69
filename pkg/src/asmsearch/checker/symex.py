"""Symbolic execution of IR programs and assembly into a shared E-graph."""
from __future__ import annotations

from dataclasses import dataclass, field

from ..bits import MASK64, mask
from ..ir import Const, IrProgram, Var
from ..machine import (CALLEE_SAVED, GPR64, REGS, STACK_SIZE, AsmProgram, CallingConvention,
                       Imm, ImmediateOutOfRange, MachineError, Mem, NonOutputMemoryWritten,
                       OutOfBoundsAccess, Reg, UninitializedRead, UnspecifiedFlagRead,
                       UnsupportedOpcode)
from .egraph import TOP, EGraph


class NonConstantAddress(MachineError):
    pass


class UnsupportedForm(MachineError):
    """An instruction form the checker does not model (rejected)."""


@dataclass
class IrSymbolic:
    egraph: EGraph
    inputs: list          # node per param
    outputs: list         # node per returned identifier
    env: dict             # identifier -> node
    discarded: list = field(default_factory=list)  # (assignment index, kind, node) of `_` results


def _ir_nodes(eg: EGraph, asn, a):
    k = asn.kind
    if k == "addcarryx":
        return [eg.internalize("addcarry", a), eg.internalize("add", a)]
    if k == "subborrowx":
        c, x, y = a
        return [eg.internalize("subborrow", [x, y, c]), eg.internalize("sub", [x, y, c])]
    if k == "mulx":
        return [eg.internalize("mulhi", a), eg.internalize("mullo", a)]
    w = asn.op.result_widths[0]
    if w > 64 or any(x > 64 for x in asn.op.arg_widths if k not in ("static_cast", "shl", "shr")):
        raise UnsupportedForm(f"{k} at u{w}")
    if k == "add":
        return [eg.internalize("add", a)]
    if k == "sub":
        return [eg.internalize("sub", a)]
    if k == "mul":
        return [eg.internalize("mullo", a)]
    if k in ("and", "or"):
        return [eg.internalize(k, a)]
    if k == "not":
        return [eg.internalize("iszero", a)]
    if k == "bitnot":
        return [eg.internalize("xor", [a[0], eg.const(TOP)])]
    if k in ("shl", "shr"):
        return [eg.internalize(k, a)]
    if k == "cmovznz":
        t, nz, z = a
        return [eg.internalize("select", [t, z, nz])]
    if k == "static_cast":
        return [a[0] if w >= 64 else eg.internalize("and", [a[0], eg.const(mask(w))])]
    if k == "move":
        return [a[0]]
    raise UnsupportedForm(k)  # pragma: no cover


def symex_ir(prog: IrProgram, egraph: EGraph | None = None) -> IrSymbolic:
    eg = egraph if egraph is not None else EGraph()
    env = {}
    inputs = []
    for p in prog.params:
        if p.width > 64:
            raise UnsupportedForm(f"param {p.name} is u{p.width}")
        n = eg.var(p.name, p.upper)
        env[p.name] = n
        inputs.append(n)
    discarded = []
    for i, asn in enumerate(prog.body):
        a = [env[x.name] if isinstance(x, Var) else eg.const(x.value) for x in asn.args]
        for d, node in zip(asn.dests, _ir_nodes(eg, asn, a)):
            if d.name is None:
                discarded.append((i, asn.kind, node))
            else:
                env[d.name] = node
    return IrSymbolic(eg, inputs, [env[r] for r in prog.returns], env, discarded)


@dataclass
class SymbolicState:
    regs: dict
    flags: dict
    mem: dict            # (base node, byte offset) -> node
    bases: dict          # base node -> (region name, size in bytes or None for stack, kind)
    init_regs: dict
    writes: list = field(default_factory=list)


class _AsmSymex:
    def __init__(self, eg: EGraph, cc: CallingConvention, input_nodes):
        self.eg = eg
        regs = {r: eg.var(f"init_{r}") for r in GPR64}
        bases = {}
        mem = {}
        k = 0
        for i, (reg, size) in enumerate(zip(cc.input_regs, cc.input_sizes)):
            b = eg.var(f"base_in{i}")
            regs[reg] = b
            bases[b] = (f"in{i}", 8 * size, "input")
            for j in range(size):
                mem[(b, 8 * j)] = input_nodes[k]
                k += 1
        b = eg.var("base_out")
        regs[cc.out_reg] = b
        bases[b] = ("out", 8 * cc.output_size, "output")
        b = eg.var("stack_base")
        regs["rsp"] = b
        bases[b] = ("stack", STACK_SIZE, "stack")
        self.st = SymbolicState(regs, {"CF": None, "OF": None}, mem, bases, dict(regs))

    # -- operands --------------------------------------------------------------
    def flag(self, f):
        v = self.st.flags.get(f)
        if v is None:
            raise UnspecifiedFlagRead(f)
        return v

    def address(self, m: Mem):
        eg = self.eg
        terms = [self.st.regs[m.base]]
        if m.index:
            terms.append(eg.internalize("mullo", [self.st.regs[m.index], eg.const(m.scale)]))
        if m.offset:
            terms.append(eg.const(m.offset & MASK64))
        return eg.internalize("add", terms)

    def key(self, m: Mem, write: bool):
        eg = self.eg
        a = self.address(m)
        if eg.ops[a] == "var":
            base, off = a, 0
        elif eg.ops[a] == "add" and len(eg.args[a]) == 2 and any(eg.is_const(x) for x in eg.args[a]):
            x, y = eg.args[a]
            base, k = (y, x) if eg.is_const(x) else (x, y)
            if eg.ops[base] != "var":
                raise NonConstantAddress(f"{m} is not base + constant")
            off = eg.value(k)
            off = off - (1 << 64) if off >> 63 else off
        else:
            raise NonConstantAddress(f"{m} is not base + constant")
        if base not in self.st.bases:
            raise NonConstantAddress(f"{m} is not relative to an array or stack base")
        name, size, kind = self.st.bases[base]
        if kind == "stack":
            if not -size <= off <= -m.size:
                raise OutOfBoundsAccess(name, off)
        elif not 0 <= off <= size - m.size:
            raise OutOfBoundsAccess(name, off)
        if write and kind == "input":
            raise NonOutputMemoryWritten(f"write to {name}{off:+d}")
        if off % 8:
            raise UnsupportedForm(f"unaligned access {m}")
        return base, off

    def read(self, a, w=64):
        eg = self.eg
        if isinstance(a, Reg):
            v = self.st.regs[a.base]
            if a.width == 64:
                return v
            if a.width == 32:
                return eg.internalize("and", [v, eg.const(0xFFFFFFFF)])
            if a.width == 8:
                return eg.internalize("lowbyte", [v])
            raise UnsupportedForm("16-bit register")
        if isinstance(a, Mem):
            key = self.key(a, False)
            v = self.st.mem.get(key)
            if v is None:
                raise UninitializedRead(str(a))
            if a.size == 8:
                return v
            if a.size == 1:
                return eg.internalize("lowbyte", [v])
            raise UnsupportedForm(f"{8 * a.size}-bit memory access")
        val = a.value
        if w == 64 and not -(1 << 31) <= val < (1 << 31):
            raise ImmediateOutOfRange(f"{val:#x} is not a sign-extended imm32")
        if w < 64 and not -(1 << (w - 1)) <= val < (1 << w):
            raise ImmediateOutOfRange(f"{val:#x} does not fit {w} bits")
        return eg.const(val & mask(w))

    def write(self, a, v):
        eg = self.eg
        if isinstance(a, Reg):
            if a.width == 64:
                self.st.regs[a.base] = v
            elif a.width == 32:
                self.st.regs[a.base] = eg.internalize("and", [v, eg.const(0xFFFFFFFF)])
            elif a.width == 8:
                self.st.regs[a.base] = eg.internalize("setlowbyte", [self.st.regs[a.base], v])
            else:
                raise UnsupportedForm("16-bit register")
        elif isinstance(a, Mem):
            key = self.key(a, True)
            if a.size == 8:
                self.st.mem[key] = v
            elif a.size == 1 and key in self.st.mem:
                self.st.mem[key] = eg.internalize("setlowbyte", [self.st.mem[key], v])
            else:
                raise UnsupportedForm(f"{8 * a.size}-bit memory write")
            self.st.writes.append(key)
        else:
            raise UnsupportedForm("write to immediate")

    @staticmethod
    def width(a):
        if isinstance(a, Reg):
            return a.width
        if isinstance(a, Mem):
            return 8 * a.size
        return 64

    def need64(self, ins, *ops):
        for o in ops:
            if not isinstance(o, Imm) and self.width(o) != 64:
                raise UnsupportedForm(f"only 64-bit arithmetic is modelled: {ins}")

    # -- instructions ------------------------------------------------------------
    def run(self, ins):
        eg = self.eg
        op, a = ins.op, ins.args
        f = self.st.flags
        if op == "mov":
            w = self.width(a[0])
            if isinstance(a[1], Imm) and isinstance(a[0], Reg) and w == 64:
                self.write(a[0], eg.const(a[1].value & MASK64))
            else:
                self.write(a[0], self.read(a[1], w))
        elif op == "movzx":
            self.write(a[0], self.read(a[1]))
        elif op in ("add", "adc", "adcx", "adox"):
            self.need64(ins, *a)
            fl = "OF" if op == "adox" else "CF"
            terms = [self.read(a[0]), self.read(a[1])]
            if op != "add":
                terms.append(self.flag(fl))
            r = eg.internalize("add", terms)
            c = eg.internalize("addcarry", terms)
            if op in ("add", "adc"):
                f["OF"] = None
            f[fl] = c
            self.write(a[0], r)
        elif op in ("sub", "sbb", "cmp"):
            self.need64(ins, *a)
            terms = [self.read(a[0]), self.read(a[1])]
            if op == "sbb":
                terms.append(self.flag("CF"))
            f["CF"] = eg.internalize("subborrow", terms)
            f["OF"] = None
            if op != "cmp":
                self.write(a[0], eg.internalize("sub", terms))
        elif op in ("and", "or", "xor", "test"):
            w = self.width(a[0])
            if w not in (32, 64):
                raise UnsupportedForm(str(ins))
            r = eg.internalize("and" if op == "test" else op, [self.read(a[0]), self.read(a[1], w)])
            f["CF"] = f["OF"] = eg.const(0)
            if op != "test":
                self.write(a[0], r)
        elif op == "mulx":
            self.need64(ins, *a)
            x, y = self.st.regs["rdx"], self.read(a[2])
            lo = eg.internalize("mullo", [x, y])
            hi = eg.internalize("mulhi", [x, y])
            self.write(a[1], lo)
            self.write(a[0], hi)
        elif op == "mul":
            self.need64(ins, *a)
            x, y = self.st.regs["rax"], self.read(a[0])
            hi = eg.internalize("mulhi", [x, y])
            self.st.regs["rax"] = eg.internalize("mullo", [x, y])
            self.st.regs["rdx"] = hi
            f["CF"] = f["OF"] = eg.internalize("nonzero", [hi])
        elif op == "imul":
            if len(a) == 1:
                raise UnsupportedForm("one-operand imul")
            self.need64(ins, *a)
            x, y = (a[0], a[1]) if len(a) == 2 else (a[1], a[2])
            self.write(a[0], eg.internalize("mullo", [self.read(x), self.read(y)]))
            f["CF"] = f["OF"] = None
        elif op == "lea":
            self.need64(ins, a[0])
            self.write(a[0], self.address(a[1]))
        elif op in ("shl", "shr", "sar"):
            self.need64(ins, a[0])
            if isinstance(a[1], Imm):
                n = a[1].value & 63
                if n == 0:
                    return
                cnt = eg.const(n)
            elif a[1].name == "cl":
                cnt = eg.internalize("and", [self.read(a[1]), eg.const(63)])
            else:
                raise UnsupportedForm(str(ins))
            self.write(a[0], eg.internalize(op, [self.read(a[0]), cnt]))
            f["CF"] = f["OF"] = None
        elif op == "shrd":
            self.need64(ins, a[0], a[1])
            if not isinstance(a[2], Imm):
                raise UnsupportedForm("shrd by register")
            n = a[2].value & 63
            if n == 0:
                return
            lo = eg.internalize("shr", [self.read(a[0]), eg.const(n)])
            hi = eg.internalize("shl", [self.read(a[1]), eg.const(64 - n)])
            self.write(a[0], eg.internalize("or", [lo, hi]))
            f["CF"] = f["OF"] = None
        elif op in ("shlx", "shrx"):
            self.need64(ins, *a)
            cnt = eg.internalize("and", [self.read(a[2]), eg.const(63)])
            self.write(a[0], eg.internalize("shl" if op == "shlx" else "shr", [self.read(a[1]), cnt]))
        elif op == "bzhi":
            self.need64(ins, *a)
            n = eg.internalize("lowbyte", [self.read(a[2])])
            self.write(a[0], eg.internalize("bzhi", [self.read(a[1]), n]))
            f["CF"] = None
            f["OF"] = eg.const(0)
        elif op in ("setc", "seto"):
            self.write(a[0], self.flag("CF" if op == "setc" else "OF"))
        elif op in ("cmovc", "cmovb"):
            self.need64(ins, *a)
            self.write(a[0], eg.internalize("select", [self.flag("CF"), self.read(a[0]), self.read(a[1])]))
        elif op == "cmovnz":
            raise UnspecifiedFlagRead("ZF")
        elif op == "clc":
            f["CF"] = eg.const(0)
        elif op in ("inc", "dec"):
            self.need64(ins, a[0])
            d = eg.const(1 if op == "inc" else MASK64)
            self.write(a[0], eg.internalize("add", [self.read(a[0]), d]))
            f["OF"] = None
        elif op == "xchg":
            x, y = self.read(a[0]), self.read(a[1])
            self.write(a[0], y)
            self.write(a[1], x)
        else:
            raise UnsupportedOpcode(op)


def symex_asm(asm: AsmProgram, cc: CallingConvention, egraph: EGraph, input_nodes) -> SymbolicState:
    sx = _AsmSymex(egraph, cc, input_nodes)
    for ins in asm.instrs:
        sx.run(ins)
    return sx.st


def callee_saved_ok(st: SymbolicState):
    """Names of callee-saved registers (and rsp) not holding their initial value."""
    return [r for r in CALLEE_SAVED + ("rsp",) if st.regs[r] != st.init_regs[r]]
