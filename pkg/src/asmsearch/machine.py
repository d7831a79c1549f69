"""x86-64 subset: assembly text model, parser/printer and a concrete
interpreter.

Two interpreters share the same semantics:

* ``step`` / ``run_function`` work on Python ints, track every flag and
  byte of memory and raise on any contract violation;
* ``run_batch`` runs one program over many input vectors at once using
  numpy lanes.  It only covers the 64-bit forms the code generator emits and
  exists so differential tests over thousands of inputs stay cheap.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from . import bits
from .bits import MASK64, U64

GPR64 = ("rax", "rcx", "rdx", "rbx", "rsp", "rbp", "rsi", "rdi",
         "r8", "r9", "r10", "r11", "r12", "r13", "r14", "r15")
CALLEE_SAVED = ("rbx", "rbp", "r12", "r13", "r14", "r15")
ARG_REGS = ("rdi", "rsi", "rdx", "rcx", "r8", "r9")
FLAGS = ("CF", "PF", "AF", "ZF", "SF", "OF")

_LEGACY = {"rax": "a", "rcx": "c", "rdx": "d", "rbx": "b"}
_IDX = {"rsp": "sp", "rbp": "bp", "rsi": "si", "rdi": "di"}
REGS = {}  # name -> (64-bit base, width)
for _r in GPR64:
    REGS[_r] = (_r, 64)
    if _r in _LEGACY:
        c = _LEGACY[_r]
        REGS[f"e{c}x"], REGS[f"{c}x"], REGS[f"{c}l"] = (_r, 32), (_r, 16), (_r, 8)
    elif _r in _IDX:
        c = _IDX[_r]
        REGS[f"e{c}"], REGS[c], REGS[f"{c}l"] = (_r, 32), (_r, 16), (_r, 8)
    else:
        REGS[f"{_r}d"], REGS[f"{_r}w"], REGS[f"{_r}b"] = (_r, 32), (_r, 16), (_r, 8)
_BYNAME = {(b, w): n for n, (b, w) in REGS.items()}


def sub_register(reg64: str, width: int) -> str:
    return _BYNAME[(reg64, width)]


class MachineError(Exception):
    pass


class AsmSyntaxError(MachineError):
    def __init__(self, msg, line=0):
        super().__init__(f"line {line}: {msg}" if line else msg)
        self.line = line


class UnsupportedOpcode(MachineError):
    def __init__(self, opcode, line=0):
        super().__init__(f"unsupported opcode {opcode!r}" + (f" at line {line}" if line else ""))
        self.opcode = opcode
        self.line = line


class ImmediateOutOfRange(MachineError):
    pass


class UninitializedRead(MachineError):
    def __init__(self, location):
        super().__init__(f"read of uninitialized {location}")
        self.location = location


class UnspecifiedFlagRead(MachineError):
    def __init__(self, flag):
        super().__init__(f"read of unspecified flag {flag}")
        self.flag = flag


class OutOfBoundsAccess(MachineError):
    def __init__(self, region, offset):
        super().__init__(f"out-of-bounds access at {region}{offset:+d}")
        self.region = region
        self.offset = offset


class CalleeSaveClobbered(MachineError):
    pass


class NonOutputMemoryWritten(MachineError):
    pass


# --- operands and programs ----------------------------------------------------

@dataclass(frozen=True)
class Reg:
    name: str

    @property
    def base(self):
        return REGS[self.name][0]

    @property
    def width(self):
        return REGS[self.name][1]

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Mem:
    base: str
    offset: int = 0
    size: int = 8  # bytes
    index: str | None = None
    scale: int = 1

    def addr_text(self):
        s = self.base
        if self.index:
            s += f"+{self.index}*{self.scale}" if self.scale != 1 else f"+{self.index}"
        if self.offset:
            s += f"{self.offset:+d}"
        return f"[{s}]"

    def __str__(self):
        return self.addr_text()


@dataclass(frozen=True)
class Imm:
    value: int

    def __str__(self):
        v = self.value
        if -4096 <= v <= 4096:
            return str(v)
        return f"-{-v:#x}" if v < 0 else f"{v:#x}"


_SIZE_NAMES = {1: "byte", 2: "word", 4: "dword", 8: "qword"}
_SIZES = {v: k for k, v in _SIZE_NAMES.items()}


@dataclass(frozen=True)
class Instr:
    op: str
    args: tuple = ()

    def __str__(self):
        regw = [a.width for a in self.args if isinstance(a, Reg)]
        parts = []
        for a in self.args:
            if isinstance(a, Mem) and self.op != "lea":
                inferred = _mem_size_from_regs(self.op, regw)
                if inferred != a.size * 8:
                    parts.append(f"{_SIZE_NAMES[a.size]} ptr {a}")
                    continue
            parts.append(str(a))
        return f"{self.op} {', '.join(parts)}" if parts else self.op


def _mem_size_from_regs(op, regw):
    if op in ("movzx", "lea", "shl", "shr", "sar") or not regw:
        return None
    if op in ("shrd",):
        return regw[0]
    return regw[0]


@dataclass(frozen=True)
class AsmProgram:
    instrs: tuple = ()

    def __len__(self):
        return len(self.instrs)

    def __iter__(self):
        return iter(self.instrs)

    def text(self) -> str:
        return "".join(f"{i}\n" for i in self.instrs)


# opcode -> allowed arities
OPCODES = {
    "mov": (2,), "movzx": (2,), "add": (2,), "adc": (2,), "adcx": (2,), "adox": (2,),
    "sub": (2,), "sbb": (2,), "cmp": (2,), "mulx": (3,), "mul": (1,), "imul": (1, 2, 3),
    "lea": (2,), "shl": (2,), "shr": (2,), "sar": (2,), "shrd": (3,), "shlx": (3,),
    "shrx": (3,), "and": (2,), "or": (2,), "xor": (2,), "test": (2,), "setc": (1,),
    "seto": (1,), "cmovb": (2,), "cmovc": (2,), "cmovnz": (2,), "clc": (0,),
    "inc": (1,), "dec": (1,), "bzhi": (3,), "xchg": (2,),
}
_ALIASES = {"setb": "setc", "cmovne": "cmovnz", "sal": "shl"}


# --- parsing ------------------------------------------------------------------

_NUM = re.compile(r"[+-]?(0x[0-9a-f]+|[0-9]+)$")
_MEM = re.compile(r"(?:(byte|word|dword|qword)\s+ptr\s+)?\[([^\]]*)\]$")


def _parse_int(s, line):
    s = s.strip().lower()
    if not _NUM.match(s):
        raise AsmSyntaxError(f"bad number {s!r}", line)
    return int(s, 0)


def _parse_mem(m, line):
    size = _SIZES[m.group(1)] if m.group(1) else None
    inner = m.group(2).replace(" ", "").lower()
    if not inner:
        raise AsmSyntaxError("empty memory operand", line)
    terms = re.findall(r"([+-]?)([^+-]+)", inner)
    if "".join(s + t for s, t in terms) != inner:
        raise AsmSyntaxError(f"bad memory operand [{inner}]", line)
    base = index = None
    scale, disp = 1, 0
    for sign, t in terms:
        if "*" in t:
            a, b = t.split("*", 1)
            r, k = (a, b) if a in REGS else (b, a)
            if r not in REGS or sign == "-" or index is not None:
                raise AsmSyntaxError(f"bad scaled index {t!r}", line)
            index, scale = r, _parse_int(k, line)
            if scale not in (1, 2, 4, 8):
                raise AsmSyntaxError(f"bad scale {scale}", line)
        elif t in REGS:
            if sign == "-":
                raise AsmSyntaxError("registers cannot be subtracted", line)
            if REGS[t][1] != 64:
                raise AsmSyntaxError("address registers must be 64-bit", line)
            if base is None:
                base = t
            elif index is None:
                index = t
            else:
                raise AsmSyntaxError("too many registers in address", line)
        else:
            disp += _parse_int(sign + t, line)
    if base is None:
        raise AsmSyntaxError("memory operand needs a base register", line)
    return Mem(base, disp, size or 0, index, scale)


def _parse_operand(text, line):
    t = text.strip().lower()
    if t in REGS:
        return Reg(t)
    m = _MEM.match(t)
    if m:
        return _parse_mem(m, line)
    if _NUM.match(t.replace(" ", "")):
        return Imm(_parse_int(t.replace(" ", ""), line))
    raise AsmSyntaxError(f"bad operand {text.strip()!r}", line)


def parse_instr(text: str, line: int = 0) -> Instr:
    text = text.strip()
    op, _, rest = text.partition(" ")
    op = op.lower()
    op = _ALIASES.get(op, op)
    if op not in OPCODES:
        raise UnsupportedOpcode(op, line)
    args = [_parse_operand(a, line) for a in rest.split(",")] if rest.strip() else []
    if len(args) not in OPCODES[op]:
        raise AsmSyntaxError(f"{op} takes {OPCODES[op]} operands, got {len(args)}", line)
    regw = [a.width for a in args if isinstance(a, Reg)]
    fixed = []
    for a in args:
        if isinstance(a, Mem) and a.size == 0:
            w = _mem_size_from_regs(op, regw)
            if op == "lea":
                w = 64
            if w is None:
                raise AsmSyntaxError(f"{op}: operand size of {a} is ambiguous", line)
            a = Mem(a.base, a.offset, w // 8, a.index, a.scale)
        fixed.append(a)
    return Instr(op, tuple(fixed))


def parse_asm(text: str) -> AsmProgram:
    """Parse Intel-syntax text. Directives, labels and comments are skipped;
    a single ``ret`` is accepted only as the final instruction."""
    instrs = []
    seen_ret = False
    for n, raw in enumerate(text.splitlines(), 1):
        line = re.split(r"[;#]|//", raw, maxsplit=1)[0].strip()
        if not line or line.startswith("."):
            continue
        if re.match(r"^[A-Za-z_.$][\w.$]*:$", line):
            continue
        if seen_ret:
            raise UnsupportedOpcode("ret", n)
        if line.lower() == "ret":
            seen_ret = True
            continue
        instrs.append(parse_instr(line, n))
    return AsmProgram(tuple(instrs))


def format_asm(asm: AsmProgram) -> str:
    return asm.text()


def render_function(asm: AsmProgram, name: str = "fn", section: str = ".text") -> str:
    body = "".join(f"  {i}\n" for i in asm.instrs)
    return (f".intel_syntax noprefix\n{section}\n.globl {name}\n{name}:\n"
            f"{body}  ret\n")


# --- calling convention ----------------------------------------------------------

@dataclass(frozen=True)
class CallingConvention:
    """Output array base in the first argument register, one input array per
    following argument register. ``input_sizes`` gives words per array."""
    input_sizes: tuple
    output_size: int
    arg_regs: tuple = ARG_REGS

    def __post_init__(self):
        if len(self.input_sizes) + 1 > len(self.arg_regs):
            raise ValueError("too many input arrays for the argument registers")

    @classmethod
    def for_program(cls, prog, layout=None):
        n = len(prog.params)
        layout = tuple(layout) if layout is not None else ((n,) if n else ())
        if sum(layout) != n or any(k <= 0 for k in layout):
            raise ValueError(f"layout {layout} does not cover {n} params")
        return cls(layout, len(prog.returns))

    @property
    def out_reg(self):
        return self.arg_regs[0]

    @property
    def input_regs(self):
        return self.arg_regs[1:1 + len(self.input_sizes)]

    @property
    def pointer_regs(self):
        return (self.out_reg,) + tuple(self.input_regs)

    def input_slots(self):
        """(register, byte offset) for every flattened input word."""
        return [(r, 8 * k) for r, size in zip(self.input_regs, self.input_sizes) for k in range(size)]

    def output_slots(self):
        return [(self.out_reg, 8 * k) for k in range(self.output_size)]

    def split_inputs(self, flat):
        out, i = [], 0
        for size in self.input_sizes:
            out.append(list(flat[i:i + size]))
            i += size
        return out


# --- concrete state ------------------------------------------------------------

STACK_SIZE = 4096
STACK_TOP = 0x7FFF_0000_0000
_REGION_STRIDE = 0x1000_0000


@dataclass
class Region:
    name: str
    base: int
    size: int
    kind: str  # input | output | stack
    data: bytearray = field(default=None)
    init: bytearray = field(default=None)

    def __post_init__(self):
        if self.data is None:
            self.data = bytearray(self.size)
            self.init = bytearray(self.size)

    def copy(self):
        return Region(self.name, self.base, self.size, self.kind, bytearray(self.data), bytearray(self.init))


def junk_value(reg: str, seed: int = 0) -> int:
    """Deterministic garbage for registers without a defined initial value."""
    x = (GPR64.index(reg) + 1) * 0x9E3779B97F4A7C15 + seed * 0xD1B54A32D192ED03
    x ^= x >> 29
    return (x * 0xBF58476D1CE4E5B9) & MASK64


@dataclass
class MachineState:
    regs: dict
    flags: dict
    regions: list

    def copy(self):
        return MachineState(dict(self.regs), dict(self.flags), [r.copy() for r in self.regions])

    def region(self, name):
        for r in self.regions:
            if r.name == name:
                return r
        raise KeyError(name)

    # memory
    def _locate(self, addr, size):
        for r in self.regions:
            if r.base <= addr < r.base + r.size + 64:
                off = addr - r.base
                if off < 0 or off + size > r.size:
                    raise OutOfBoundsAccess(r.name, off)
                return r, off
        raise OutOfBoundsAccess("unmapped", addr)

    def load(self, addr, size):
        r, off = self._locate(addr, size)
        if not all(r.init[off:off + size]):
            raise UninitializedRead(f"{r.name}{off:+d}")
        return int.from_bytes(r.data[off:off + size], "little")

    def store(self, addr, size, value):
        r, off = self._locate(addr, size)
        if r.kind == "input":
            raise NonOutputMemoryWritten(f"write to {r.name}{off:+d}")
        r.data[off:off + size] = (value & bits.mask(8 * size)).to_bytes(size, "little")
        r.init[off:off + size] = b"\x01" * size


def initial_state(cc: CallingConvention, inputs, junk_seed: int = 0) -> MachineState:
    regs = {r: junk_value(r, junk_seed) for r in GPR64}
    regions = []
    for i, (reg, words) in enumerate(zip(cc.input_regs, inputs)):
        if len(words) != cc.input_sizes[i]:
            raise ValueError(f"input array {i} has {len(words)} words, expected {cc.input_sizes[i]}")
        reg_ = Region(f"in{i}", _REGION_STRIDE * (i + 1), 8 * len(words), "input")
        for k, w in enumerate(words):
            reg_.data[8 * k:8 * k + 8] = (int(w) & MASK64).to_bytes(8, "little")
        reg_.init[:] = b"\x01" * reg_.size
        regions.append(reg_)
        regs[reg] = reg_.base
    out = Region("out", _REGION_STRIDE * 16, 8 * cc.output_size, "output")
    regions.append(out)
    regs[cc.out_reg] = out.base
    regions.append(Region("stack", STACK_TOP - STACK_SIZE, STACK_SIZE, "stack"))
    regs["rsp"] = STACK_TOP
    # flags start unspecified: code may not assume anything about them
    return MachineState(regs, {f: None for f in FLAGS}, regions)


# --- scalar semantics -------------------------------------------------------------

def _sx(v, w):
    return v - (1 << w) if v >> (w - 1) & 1 else v


class _Exec:
    """Instruction semantics on a MachineState (mutated in place)."""

    def __init__(self, st: MachineState):
        self.st = st

    def flag(self, f):
        v = self.st.flags[f]
        if v is None:
            raise UnspecifiedFlagRead(f)
        return v

    def addr(self, m: Mem):
        a = self.st.regs[m.base] + m.offset
        if m.index:
            a += self.st.regs[m.index] * m.scale
        return a & MASK64

    def width(self, a):
        if isinstance(a, Reg):
            return a.width
        if isinstance(a, Mem):
            return a.size * 8
        raise MachineError("immediate has no width")

    def read(self, a, w=None):
        if isinstance(a, Reg):
            base, rw = REGS[a.name]
            return self.st.regs[base] & bits.mask(rw)
        if isinstance(a, Mem):
            return self.st.load(self.addr(a), a.size)
        v = a.value
        if w == 64 and not -(1 << 31) <= v < (1 << 31):
            raise ImmediateOutOfRange(f"{v:#x} is not a sign-extended imm32")
        if w is not None and w < 64 and not -(1 << (w - 1)) <= v < (1 << w):
            raise ImmediateOutOfRange(f"{v:#x} does not fit {w} bits")
        return v & bits.mask(w or 64)

    def write(self, a, v):
        if isinstance(a, Reg):
            base, rw = REGS[a.name]
            v &= bits.mask(rw)
            if rw == 64 or rw == 32:
                self.st.regs[base] = v
            else:
                m = bits.mask(rw)
                self.st.regs[base] = (self.st.regs[base] & ~m & MASK64) | v
        elif isinstance(a, Mem):
            self.st.store(self.addr(a), a.size, v)
        else:
            raise MachineError("cannot write an immediate")

    def szp(self, r, w):
        f = self.st.flags
        f["ZF"] = int(r == 0)
        f["SF"] = r >> (w - 1) & 1
        f["PF"] = bits.parity8(r)

    def arith(self, ins, sub, carry_in, write=True):
        d, s = ins.args
        w = self.width(d)
        if isinstance(s, Reg) and s.width != w:
            raise MachineError(f"operand size mismatch in {ins}")
        a = self.read(d)
        b = self.read(s, w)
        m = bits.mask(w)
        if sub:
            full = a - b - carry_in
            r = full & m
            cf = int(full < 0)
            of = ((a ^ b) & (a ^ r)) >> (w - 1) & 1
        else:
            full = a + b + carry_in
            r = full & m
            cf = full >> w
            of = ((a ^ r) & (b ^ r)) >> (w - 1) & 1
        f = self.st.flags
        f["CF"], f["OF"] = cf, of
        f["AF"] = ((a ^ b ^ r) >> 4) & 1
        self.szp(r, w)
        if write:
            self.write(d, r)

    def logic(self, ins, fn, write=True):
        d, s = ins.args
        w = self.width(d)
        r = fn(self.read(d), self.read(s, w)) & bits.mask(w)
        f = self.st.flags
        f["CF"] = f["OF"] = 0
        f["AF"] = None
        self.szp(r, w)
        if write:
            self.write(d, r)

    def shift(self, ins):
        d, c = ins.args
        w = self.width(d)
        if isinstance(c, Reg) and c.name != "cl":
            raise MachineError("shift count must be an immediate or cl")
        if isinstance(c, Imm) and not 0 <= c.value < 256:
            raise ImmediateOutOfRange("shift count must be imm8")
        n = self.read(c, 8) & (63 if w == 64 else 31)
        if n == 0:
            self.read(d)
            return
        a = self.read(d)
        m = bits.mask(w)
        f = self.st.flags
        if ins.op == "shl":
            r = (a << n) & m
            cf = (a >> (w - n)) & 1 if n <= w else 0
            of = (r >> (w - 1) & 1) ^ cf
        elif ins.op == "shr":
            r = a >> n
            cf = (a >> (n - 1)) & 1
            of = a >> (w - 1) & 1
        else:  # sar
            r = (_sx(a, w) >> n) & m
            cf = (_sx(a, w) >> (n - 1)) & 1
            of = 0
        f["CF"] = cf
        f["OF"] = of if n == 1 else None
        f["AF"] = None
        self.szp(r, w)
        self.write(d, r)

    def run(self, ins: Instr):
        op = ins.op
        a = ins.args
        st = self.st
        f = st.flags
        if op == "mov":
            w = self.width(a[0])
            if isinstance(a[1], Imm) and isinstance(a[0], Reg) and w == 64:
                v = a[1].value
                if not -(1 << 63) <= v < (1 << 64):
                    raise ImmediateOutOfRange(f"{v:#x} does not fit 64 bits")
                self.write(a[0], v & MASK64)
            else:
                if isinstance(a[1], Reg) and a[1].width != w:
                    raise MachineError(f"operand size mismatch in {ins}")
                self.write(a[0], self.read(a[1], w))
        elif op == "movzx":
            if not isinstance(a[0], Reg) or isinstance(a[1], Imm) or self.width(a[1]) >= a[0].width:
                raise MachineError(f"bad movzx {ins}")
            self.write(a[0], self.read(a[1]))
        elif op in ("add", "adc", "sub", "sbb", "cmp"):
            cin = self.flag("CF") if op in ("adc", "sbb") else 0
            self.arith(ins, op in ("sub", "sbb", "cmp"), cin, write=op != "cmp")
        elif op in ("adcx", "adox"):
            fl = "CF" if op == "adcx" else "OF"
            d, s = a
            if not isinstance(d, Reg) or d.width not in (32, 64) or isinstance(s, Imm):
                raise MachineError(f"bad {op} operands")
            w = d.width
            full = self.read(d) + self.read(s) + self.flag(fl)
            f[fl] = full >> w
            self.write(d, full)
        elif op in ("and", "or", "xor", "test"):
            fn = {"and": int.__and__, "test": int.__and__, "or": int.__or__, "xor": int.__xor__}[op]
            self.logic(ins, fn, write=op != "test")
        elif op == "mulx":
            hi, lo, s = a
            if not (isinstance(hi, Reg) and isinstance(lo, Reg)) or isinstance(s, Imm):
                raise MachineError("bad mulx operands")
            w = hi.width
            p = st.regs["rdx"] & bits.mask(w)
            p *= self.read(s)
            self.write(lo, p)
            self.write(hi, p >> w)
        elif op == "mul":
            s = a[0]
            w = self.width(s)
            p = self.read(s) * (st.regs["rax"] & bits.mask(w))
            if w != 64:
                raise MachineError("only 64-bit mul is modelled")
            st.regs["rax"] = p & MASK64
            st.regs["rdx"] = p >> 64
            f["CF"] = f["OF"] = int(p >> 64 != 0)
            f["ZF"] = f["SF"] = f["PF"] = f["AF"] = None
        elif op == "imul":
            if len(a) == 1:
                w = self.width(a[0])
                if w != 64:
                    raise MachineError("only 64-bit imul is modelled")
                p = _sx(self.read(a[0]), 64) * _sx(st.regs["rax"], 64)
                st.regs["rax"] = p & MASK64
                st.regs["rdx"] = (p >> 64) & MASK64
                trunc = _sx(p & MASK64, 64)
            else:
                d = a[0]
                w = self.width(d)
                if not isinstance(d, Reg):
                    raise MachineError("imul destination must be a register")
                x, y = (a[0], a[1]) if len(a) == 2 else (a[1], a[2])
                if isinstance(x, Imm):
                    raise MachineError("bad imul operands")
                p = _sx(self.read(x), w) * _sx(self.read(y, w), w)
                trunc = _sx(p & bits.mask(w), w)
                self.write(d, p)
            f["CF"] = f["OF"] = int(trunc != p)
            f["ZF"] = f["SF"] = f["PF"] = f["AF"] = None
        elif op == "lea":
            if not isinstance(a[1], Mem) or not isinstance(a[0], Reg):
                raise MachineError("bad lea")
            self.write(a[0], self.addr(a[1]))
        elif op in ("shl", "shr", "sar"):
            self.shift(ins)
        elif op == "shrd":
            d, s, c = a
            w = self.width(d)
            if isinstance(c, Reg) and c.name != "cl":
                raise MachineError("shrd count must be an immediate or cl")
            n = self.read(c, 8) & 63
            if n == 0:
                return
            x = self.read(d)
            y = self.read(s)
            r = ((x >> n) | (y << (w - n))) & bits.mask(w)
            f["CF"] = (x >> (n - 1)) & 1
            f["OF"] = ((x ^ r) >> (w - 1) & 1) if n == 1 else None
            f["AF"] = None
            self.szp(r, w)
            self.write(d, r)
        elif op in ("shlx", "shrx"):
            d, s, c = a
            if not isinstance(c, Reg) or not isinstance(d, Reg):
                raise MachineError(f"bad {op} operands")
            w = d.width
            n = self.read(c) & (63 if w == 64 else 31)
            x = self.read(s)
            self.write(d, (x << n) if op == "shlx" else (x >> n))
        elif op == "bzhi":
            d, s, c = a
            w = d.width
            n = self.read(c) & 0xFF
            x = self.read(s)
            r = x if n >= w else x & bits.mask(n)
            f["CF"] = int(n > w - 1)
            f["OF"] = 0
            f["AF"] = f["PF"] = None
            f["ZF"] = int(r == 0)
            f["SF"] = r >> (w - 1) & 1
            self.write(d, r)
        elif op in ("setc", "seto"):
            if self.width(a[0]) != 8:
                raise MachineError(f"{op} needs a byte operand")
            self.write(a[0], self.flag("CF" if op == "setc" else "OF"))
        elif op in ("cmovb", "cmovc", "cmovnz"):
            d, s = a
            if not isinstance(d, Reg) or isinstance(s, Imm):
                raise MachineError("bad cmov operands")
            cond = self.flag("CF") if op != "cmovnz" else 1 - self.flag("ZF")
            v = self.read(s) if cond else self.read(d)
            self.write(d, v)
        elif op == "clc":
            f["CF"] = 0
        elif op in ("inc", "dec"):
            d = a[0]
            w = self.width(d)
            x = self.read(d)
            r = (x + (1 if op == "inc" else -1)) & bits.mask(w)
            if op == "inc":
                f["OF"] = int(r == 1 << (w - 1))
            else:
                f["OF"] = int(x == 1 << (w - 1))
            f["AF"] = ((x ^ r) >> 4) & 1
            self.szp(r, w)
            self.write(d, r)
        elif op == "xchg":
            x, y = self.read(a[0]), self.read(a[1])
            self.write(a[0], y)
            self.write(a[1], x)
        else:
            raise UnsupportedOpcode(op)


def step(state: MachineState, instr: Instr) -> MachineState:
    """Pure single step: returns a new state."""
    new = state.copy()
    _Exec(new).run(instr)
    return new


def execute(asm: AsmProgram, state: MachineState) -> MachineState:
    ex = _Exec(state)
    for ins in asm.instrs:
        ex.run(ins)
    return state


def run_function(asm: AsmProgram, cc: CallingConvention, inputs, junk_seed: int = 0) -> list:
    """Run ``asm`` as a function under ``cc``. ``inputs`` is either a list of
    input arrays or a flat list of words (split per ``cc``)."""
    if inputs and not isinstance(inputs[0], (list, tuple, np.ndarray)):
        inputs = cc.split_inputs(list(inputs))
    st = initial_state(cc, inputs, junk_seed)
    before = dict(st.regs)
    execute(asm, st)
    for r in CALLEE_SAVED + ("rsp",):
        if st.regs[r] != before[r]:
            raise CalleeSaveClobbered(f"{r} changed")
    out = st.region("out")
    return [st.load(out.base + 8 * k, 8) for k in range(cc.output_size)]


# --- batch semantics ----------------------------------------------------------------

class BatchUnsupported(MachineError):
    pass


class _Batch:
    """Lane-parallel interpreter for 64-bit register/memory forms."""

    def __init__(self, cc, inputs, n, junk_seed):
        self.n = n
        self.regs = {r: bits.vconst(junk_value(r, junk_seed), n) for r in GPR64}
        self.flags = {"CF": None, "OF": None, "ZF": None}
        self.mem = {}  # (region, offset) -> lanes
        self.kind = {}
        self.bases = {}
        row = 0
        for i, (reg, size) in enumerate(zip(cc.input_regs, cc.input_sizes)):
            base = _REGION_STRIDE * (i + 1)
            self.bases[f"in{i}"] = (base, 8 * size, "input")
            self.regs[reg] = bits.vconst(base, n)
            for k in range(size):
                self.mem[(f"in{i}", 8 * k)] = inputs[row]
                row += 1
        base = _REGION_STRIDE * 16
        self.bases["out"] = (base, 8 * cc.output_size, "output")
        self.regs[cc.out_reg] = bits.vconst(base, n)
        self.bases["stack"] = (STACK_TOP - STACK_SIZE, STACK_SIZE, "stack")
        self.regs["rsp"] = bits.vconst(STACK_TOP, n)

    def addr(self, m):
        if m.index:
            raise BatchUnsupported("indexed address")
        lane = self.regs[m.base]
        a = int(lane[0])
        if self.n > 1 and not (lane == lane[0]).all():
            raise BatchUnsupported("address differs across lanes")
        a = (a + m.offset) & MASK64
        for name, (base, size, kind) in self.bases.items():
            if base <= a < base + size + 64:
                off = a - base
                if off < 0 or off + m.size > size:
                    raise OutOfBoundsAccess(name, off)
                return name, off, kind
        raise OutOfBoundsAccess("unmapped", a)

    def flag(self, f):
        v = self.flags[f]
        if v is None:
            raise UnspecifiedFlagRead(f)
        return v

    def read(self, a):
        if isinstance(a, Reg):
            v = self.regs[a.base]
            if a.width == 8:
                return v & U64(0xFF)
            if a.width != 64:
                raise BatchUnsupported(f"{a.width}-bit register")
            return v
        if isinstance(a, Mem):
            name, off, _ = self.addr(a)
            word = off - off % 8
            if a.size == 8 and off % 8 == 0 or a.size == 1 and off % 8 == 0:
                v = self.mem.get((name, word))
                if v is None:
                    raise UninitializedRead(f"{name}{off:+d}")
                return v if a.size == 8 else v & U64(0xFF)
            raise BatchUnsupported("unaligned or sub-word memory access")
        v = a.value
        if not -(1 << 31) <= v < (1 << 31):
            raise ImmediateOutOfRange(f"{v:#x} is not a sign-extended imm32")
        return bits.vconst(v, self.n)

    def write(self, a, v):
        if isinstance(a, Reg):
            if a.width == 64:
                self.regs[a.base] = v
            elif a.width == 8:
                old = self.regs[a.base]
                self.regs[a.base] = (old & U64(~0xFF & MASK64)) | (v & U64(0xFF))
            else:
                raise BatchUnsupported(f"{a.width}-bit register write")
        else:
            name, off, kind = self.addr(a)
            if kind == "input":
                raise NonOutputMemoryWritten(f"write to {name}{off:+d}")
            if a.size != 8 or off % 8:
                raise BatchUnsupported("sub-word memory write")
            self.mem[(name, off)] = v

    def run(self, ins):
        op, a = ins.op, ins.args
        f = self.flags
        if op == "mov":
            if isinstance(a[1], Imm) and isinstance(a[0], Reg):
                self.write(a[0], bits.vconst(a[1].value, self.n))
            else:
                self.write(a[0], self.read(a[1]))
        elif op == "movzx":
            self.write(a[0], self.read(a[1]))
        elif op in ("add", "adc", "adcx", "adox"):
            fl = "OF" if op == "adox" else "CF"
            cin = self.flag(fl) if op != "add" else U64(0)
            x, y = self.read(a[0]), self.read(a[1])
            r, c = bits.vadd(x, y, cin)
            if op in ("add", "adc"):
                f["OF"] = ((x ^ r) & (y ^ r)) >> U64(63)
                f["ZF"] = bits.vbool(r == 0)
            f[fl] = c
            self.write(a[0], r)
        elif op in ("sub", "sbb", "cmp"):
            cin = self.flag("CF") if op == "sbb" else U64(0)
            x, y = self.read(a[0]), self.read(a[1])
            r, b = bits.vsub(x, y, cin)
            f["CF"] = b
            f["OF"] = ((x ^ y) & (x ^ r)) >> U64(63)
            f["ZF"] = bits.vbool(r == 0)
            if op != "cmp":
                self.write(a[0], r)
        elif op in ("and", "or", "xor", "test"):
            x, y = self.read(a[0]), self.read(a[1])
            r = x & y if op in ("and", "test") else (x | y if op == "or" else x ^ y)
            z = bits.vconst(0, self.n)
            f["CF"], f["OF"], f["ZF"] = z, z, bits.vbool(r == 0)
            if op != "test":
                self.write(a[0], r)
        elif op == "mulx":
            hi, lo = bits.vmul(self.regs["rdx"], self.read(a[2]))
            self.write(a[1], lo)
            self.write(a[0], hi)
        elif op == "mul":
            hi, lo = bits.vmul(self.regs["rax"], self.read(a[0]))
            self.regs["rax"], self.regs["rdx"] = lo, hi
            f["CF"] = f["OF"] = bits.vbool(hi != 0)
            f["ZF"] = None
        elif op == "imul":
            if len(a) == 1:
                raise BatchUnsupported("one-operand imul")
            x, y = (a[0], a[1]) if len(a) == 2 else (a[1], a[2])
            self.write(a[0], self.read(x) * self.read(y))
            f["CF"] = f["OF"] = f["ZF"] = None
        elif op in ("shl", "shr"):
            n = a[1].value & 63 if isinstance(a[1], Imm) else None
            if n is None:
                raise BatchUnsupported("shift by register")
            if n == 0:
                return
            x = self.read(a[0])
            if op == "shl":
                r = x << U64(n)
                f["CF"] = (x >> U64(64 - n)) & U64(1)
            else:
                r = x >> U64(n)
                f["CF"] = (x >> U64(n - 1)) & U64(1)
            f["OF"] = None
            f["ZF"] = bits.vbool(r == 0)
            self.write(a[0], r)
        elif op in ("shlx", "shrx"):
            x = self.read(a[1])
            n = self.read(a[2]) & U64(63)
            self.write(a[0], x << n if op == "shlx" else x >> n)
        elif op in ("setc", "seto"):
            self.write(a[0], self.flag("CF" if op == "setc" else "OF"))
        elif op in ("cmovb", "cmovc", "cmovnz"):
            cond = self.flag("CF") if op != "cmovnz" else U64(1) - self.flag("ZF")
            self.write(a[0], np.where(cond != 0, self.read(a[1]), self.read(a[0])))
        elif op == "clc":
            f["CF"] = bits.vconst(0, self.n)
        elif op == "lea":
            m = a[1]
            v = self.regs[m.base] + U64(m.offset & MASK64)
            if m.index:
                v = v + self.regs[m.index] * U64(m.scale)
            self.write(a[0], v)
        elif op == "xchg":
            x, y = self.read(a[0]), self.read(a[1])
            self.write(a[0], y)
            self.write(a[1], x)
        else:
            raise BatchUnsupported(op)


def run_batch(asm: AsmProgram, cc: CallingConvention, inputs, junk_seed: int = 0) -> np.ndarray:
    """Run ``asm`` on every column of ``inputs`` (n_input_words, N).
    Returns (output_size, N). Raises the same contract errors as
    ``run_function`` and BatchUnsupported for forms outside the fast path."""
    inputs = np.asarray(inputs, dtype=U64)
    n = inputs.shape[1]
    m = _Batch(cc, inputs, n, junk_seed)
    init = {r: m.regs[r].copy() for r in CALLEE_SAVED + ("rsp",)}
    for ins in asm.instrs:
        m.run(ins)
    for r, v in init.items():
        if not (m.regs[r] == v).all():
            raise CalleeSaveClobbered(f"{r} changed")
    outs = []
    for k in range(cc.output_size):
        v = m.mem.get(("out", 8 * k))
        if v is None:
            raise UninitializedRead(f"out{8 * k:+d}")
        outs.append(v)
    if not outs:
        return np.zeros((0, n), dtype=U64)
    return np.stack(outs)
