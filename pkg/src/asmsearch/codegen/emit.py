"""Lowering a candidate (schedule, template per node, decisions) to assembly.

The emitter walks the schedule once.  It tracks where every IR value lives
(register, low byte of a register, memory, CF/OF, or a known constant), frees
registers as soon as their value is dead, spills the register whose next use
is furthest when it runs out, and saves a live carry with setc/seto right
before a template would overwrite it.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

from ..dfg import build_dfg, sample_topological_order
from ..ir import COMMUTATIVE, Const, IrProgram, Value, Var, eval_op
from ..machine import (CALLEE_SAVED, AsmProgram, CallingConvention, Imm, Instr, Mem, Reg,
                       sub_register)
from .templates import BY_ID, UnsupportedKind, node_templates, shift_add_plan

DEFAULT_REGISTERS = ("rax", "rdx", "rcx", "r8", "r9", "r10", "r11",
                     "rbx", "rbp", "r12", "r13", "r14", "r15")
PEDAGOGICAL_REGISTERS = ("r8", "r9", "rdx")
INF = math.inf
MASK64 = (1 << 64) - 1
ZERO1 = Const(0, 1)


class OutOfRegistersUnrecoverable(Exception):
    pass


class InvalidCandidate(ValueError):
    pass


# --- candidates ------------------------------------------------------------------

@dataclass(frozen=True)
class Candidate:
    schedule: tuple   # node ids in emission order
    templates: tuple  # template id per node
    decisions: tuple  # per node, one index per choice point

    @property
    def template_choice(self):
        return dict(enumerate(self.templates))


def choice_points(asn) -> tuple:
    """Arity of each decision a node exposes: commutative binary ops get an
    operand-order choice (which also picks the operand to load when both
    sit in memory)."""
    return (2,) if asn.kind in COMMUTATIVE else ()


def validate_candidate(prog: IrProgram, cand: Candidate, dfg=None):
    n = len(prog.body)
    dfg = dfg or build_dfg(prog)
    if len(cand.schedule) != n or not dfg.is_valid(list(cand.schedule)):
        raise InvalidCandidate("schedule is not a topological order of the data-flow graph")
    if len(cand.templates) != n or len(cand.decisions) != n:
        raise InvalidCandidate("one template and one decision tuple per node required")
    for i, asn in enumerate(prog.body):
        t = BY_ID.get(cand.templates[i])
        if t is None or t.ir_kind != asn.kind:
            raise InvalidCandidate(f"node {i}: template {cand.templates[i]!r} does not implement {asn.kind}")
        if t.id not in node_templates(asn):
            raise InvalidCandidate(f"node {i}: template {t.id} does not apply")
        cps = choice_points(asn)
        d = cand.decisions[i]
        if len(d) != len(cps) or any(not 0 <= x < k for x, k in zip(d, cps)):
            raise InvalidCandidate(f"node {i}: decisions {d} out of range")


def random_candidate(prog: IrProgram, rng, dfg=None) -> Candidate:
    """Uniform random schedule, template and decisions (``rng`` is random.Random)."""
    dfg = dfg or build_dfg(prog)
    sched = tuple(sample_topological_order(dfg, rng))
    tpls = tuple(rng.choice(node_templates(a)) for a in prog.body)
    decs = tuple(tuple(rng.randrange(k) for k in choice_points(a)) for a in prog.body)
    return Candidate(sched, tpls, decs)


# --- allocation helpers exposed for testing -----------------------------------------

@dataclass
class AllocState:
    reg_file: dict                                  # register -> identifier or None, in file order
    spill_slots: dict = field(default_factory=dict)  # identifier -> byte offset from rsp
    flag_holder: dict = field(default_factory=dict)  # "CF"/"OF" -> identifier


def spill_choice(alloc: AllocState, next_use: dict) -> str:
    """Register whose identifier is read furthest in the future; dead or
    empty registers count as infinitely far; ties go to the lower index."""
    best = None
    for reg, ident in alloc.reg_file.items():
        nu = INF if ident is None else next_use.get(ident, INF)
        if best is None or nu > best[0]:
            best = (nu, reg)
    if best is None:
        raise OutOfRegistersUnrecoverable("no register available to spill")
    return best[1]


@dataclass(frozen=True)
class FoldPlan:
    load: tuple          # operand indices to load into a register first
    fold: int | None     # operand index used directly as a memory operand


def memory_operand_fold(locations, decision: int = 0) -> FoldPlan:
    """``locations`` is a pair of "reg" | "mem" | "imm".  At most one operand
    may be memory; with two, ``decision`` names the one to load."""
    mem = [i for i, l in enumerate(locations) if l == "mem"]
    if len(mem) == 2:
        return FoldPlan((decision,), 1 - decision)
    if len(mem) == 1:
        return FoldPlan((), mem[0])
    return FoldPlan((), None)


def _fits32(c):
    return c < (1 << 31) or c >= (1 << 64) - (1 << 31)


def _signed(c):
    return c - (1 << 64) if c >= 1 << 63 else c


# --- the emitter -----------------------------------------------------------------

@dataclass
class _Loc:
    reg: str | None = None
    byte: bool = False     # only the low byte of ``reg`` is meaningful
    mem: Mem | None = None
    slot: int | None = None
    flag: str | None = None
    imm: int | None = None


_CLEARS = {"and", "or", "xor", "test"}
_BOTH = {"add", "adc", "sub", "sbb", "cmp", "imul", "mul", "shl", "shr", "sar", "shrd",
         "inc", "dec"}


class _Emitter:
    def __init__(self, prog: IrProgram, cand: Candidate, cc: CallingConvention, registers):
        self.prog, self.cand, self.cc = prog, cand, cc
        ptrs = cc.pointer_regs
        regs = [r for r in registers if r not in ptrs and r != "rsp"]
        self.ptr = {r: r for r in ptrs}
        self.pre = []
        if "rdx" in ptrs and "rdx" in registers:
            # mulx wants rdx, so move that array base elsewhere up front
            spare = [r for r in regs if r not in CALLEE_SAVED] or regs
            if not spare:
                raise OutOfRegistersUnrecoverable("no register to relocate rdx into")
            s = spare[-1]
            self.pre.append(Instr("mov", (Reg(s), Reg("rdx"))))
            self.ptr["rdx"] = s
            regs[regs.index(s)] = "rdx"
        if not regs:
            raise OutOfRegistersUnrecoverable("empty register file")
        self.regs = regs
        self.holder = {r: None for r in regs}
        self.pinned = set()
        self.loc = {}
        self.flag_val = {"CF": None, "OF": None}
        self.clear = {"CF": False, "OF": False}
        self.body = []
        self.free_slots = []
        self.nslots = 0
        self.pending_out = set()
        self.cur = -1
        self.cur_args = Counter()

        self.uses = {}
        for pos, node in enumerate(cand.schedule):
            for u in prog.body[node].uses():
                self.uses.setdefault(u, []).append(pos)
        for (reg, off), p in zip(cc.input_slots(), prog.params):
            if p.width > 64:
                raise UnsupportedKind(f"parameter {p.name} is u{p.width}")
            self.loc[p.name] = _Loc(mem=Mem(self.ptr[reg], off))

    # -- liveness ---------------------------------------------------------------
    def next_use(self, v, start=None):
        start = self.cur if start is None else start
        if v in self.pending_out:
            return start
        for p in self.uses.get(v, ()):
            if p >= start:
                return p
        return INF

    def live_after(self, v):
        return v in self.pending_out or self.next_use(v, self.cur + 1) < INF

    def needed(self, v):
        return self.next_use(v) < INF

    def cval(self, x):
        if isinstance(x, Const):
            return x.value
        return self.loc[x.name].imm

    def width(self, x):
        return x.width if isinstance(x, Const) else self.prog.widths[x.name]

    def clobberable(self, v):
        """May the register holding ``v`` be overwritten by this op?"""
        if self.cur_args[v] > 1:
            return False
        L = self.loc[v]
        return not self.live_after(v) or L.mem is not None or L.imm is not None

    def _safe(self, v):
        L = self.loc[v]
        if self.live_after(v) and L.reg is None and L.mem is None and L.imm is None and L.flag is None:
            raise AssertionError(f"emitter lost live value {v}")

    # -- instruction output and flag tracking ----------------------------------------
    def emit(self, op, *args):
        self.body.append(Instr(op, tuple(args)))
        if op in _CLEARS:
            self._flag_written("CF", clear=True)
            self._flag_written("OF", clear=True)
        elif op == "clc":
            self._flag_written("CF", clear=True)
        elif op == "adcx":
            self._flag_written("CF")
        elif op == "adox":
            self._flag_written("OF")
        elif op in _BOTH:
            self._flag_written("CF")
            self._flag_written("OF")

    def _flag_written(self, f, clear=False):
        old = self.flag_val[f]
        if old is not None:
            L = self.loc[old]
            if L.flag == f:
                L.flag = None
            self.flag_val[f] = None
            self._safe(old)
        self.clear[f] = clear

    def set_flag(self, f, v):
        if v is None:
            return
        self.flag_val[f] = v
        self.loc[v].flag = f
        self.clear[f] = False

    def in_flag(self, x, f):
        return isinstance(x, Var) and self.flag_val[f] == x.name and self.loc[x.name].flag == f

    def protect(self, writes, consumed=None):
        """Save any live value held in a flag the template is about to write."""
        for f in ("CF", "OF"):
            if f not in writes:
                continue
            v = self.flag_val[f]
            if v is None:
                continue
            L = self.loc[v]
            if L.reg is not None or L.mem is not None or L.imm is not None:
                continue
            if consumed and consumed.get(f) == v and not self.live_after(v) and self.cur_args[v] == 1:
                continue
            if not self.needed(v):
                continue
            r = self.alloc()
            self.emit("setc" if f == "CF" else "seto", Reg(sub_register(r, 8)))
            self.set_reg(r, v, byte=True)
            self.pinned.discard(r)

    # -- registers ---------------------------------------------------------------------
    def _drop_reg(self, r, check=True):
        v = self.holder.get(r)
        if v is not None:
            L = self.loc[v]
            if L.reg == r:
                L.reg, L.byte = None, False
            self.holder[r] = None
            if check:
                self._safe(v)

    def set_reg(self, r, v, byte=False):
        old = self.holder[r]
        if old is not None and old != v:
            self._drop_reg(r)
        L = self.loc.setdefault(v, _Loc())
        if L.reg is not None and L.reg != r:
            self.holder[L.reg] = None
            self.pinned.discard(L.reg)
        self.holder[r] = v
        L.reg, L.byte = r, byte

    def scratch(self, r):
        """``r`` was overwritten with a temporary; forget its old content."""
        self._drop_reg(r)
        self.pinned.discard(r)

    def _new_slot(self):
        if self.free_slots:
            self.free_slots.sort()
            return self.free_slots.pop(0)
        self.nslots += 1
        return self.nslots - 1

    def _store_to_stack(self, v):
        L = self.loc[v]
        r = L.reg
        if L.byte:
            self.emit("movzx", Reg(r), Reg(sub_register(r, 8)))
            L.byte = False
        k = self._new_slot()
        L.slot, L.mem = k, Mem("rsp", 8 * k)
        self.emit("mov", L.mem, Reg(r))

    def _evict(self, r):
        v = self.holder[r]
        if v is not None and self.needed(v):
            L = self.loc[v]
            if L.mem is None and L.imm is None:
                self._store_to_stack(v)
        self._drop_reg(r)

    def _free_reg(self, exclude=()):
        for r in self.regs:
            if r in self.pinned or r in exclude:
                continue
            v = self.holder[r]
            if v is None or not self.needed(v):
                return r
        return None

    def alloc(self):
        r = self._free_reg()
        if r is None:
            cands = [r for r in self.regs if r not in self.pinned]
            if not cands:
                raise OutOfRegistersUnrecoverable(
                    f"all {len(self.regs)} registers pinned by one template")
            st = AllocState({c: self.holder[c] for c in cands})
            r = spill_choice(st, {self.holder[c]: self.next_use(self.holder[c]) for c in cands})
            self._evict(r)
        else:
            self._drop_reg(r, check=False)
        self.pinned.add(r)
        return r

    def take(self, r):
        """Empty a specific register for this template, keeping its value alive."""
        if r not in self.holder:
            raise OutOfRegistersUnrecoverable(f"template needs {r}, which is not allocatable")
        if r in self.pinned:
            raise AssertionError(f"{r} already pinned")
        v = self.holder[r]
        if v is not None and self.needed(v):
            L = self.loc[v]
            if L.mem is None and L.imm is None:
                f = self._free_reg(exclude=(r,))
                if f is not None:
                    self._drop_reg(f, check=False)
                    if L.byte:
                        self.emit("movzx", Reg(f), Reg(sub_register(r, 8)))
                    else:
                        self.emit("mov", Reg(f), Reg(r))
                    self.set_reg(f, v)
                else:
                    self._store_to_stack(v)
        self._drop_reg(r)
        self.pinned.add(r)

    def _widen(self, v):
        L = self.loc[v]
        if L.byte:
            self.emit("movzx", Reg(L.reg), Reg(sub_register(L.reg, 8)))
            L.byte = False

    def _load_into(self, r, x):
        """Emit code placing the value of operand ``x`` into register ``r``."""
        c = self.cval(x)
        if c is not None:
            self.emit("mov", Reg(r), Imm(_signed(c) if _fits32(c) else c))
            return
        L = self.loc[x.name]
        if L.reg is not None:
            if L.byte:
                self.emit("movzx", Reg(r), Reg(sub_register(L.reg, 8)))
            else:
                self.emit("mov", Reg(r), Reg(L.reg))
        elif L.mem is not None:
            self.emit("mov", Reg(r), L.mem)
        elif L.flag is not None:
            b = Reg(sub_register(r, 8))
            self.emit("setc" if L.flag == "CF" else "seto", b)
            self.emit("movzx", Reg(r), b)
        else:
            raise AssertionError(f"value {x.name} has no location")

    def get_reg(self, x):
        """A register holding the full value of ``x`` (pinned, not to be clobbered)."""
        if self.cval(x) is None:
            L = self.loc[x.name]
            if L.reg is not None:
                self._widen(x.name)
                self.pinned.add(L.reg)
                return L.reg
        r = self.alloc()
        self._load_into(r, x)
        if self.cval(x) is None:
            self.set_reg(r, x.name)
        return r

    def src(self, x, mem=True, imm=True):
        c = self.cval(x)
        if c is not None:
            if imm and _fits32(c):
                return Imm(_signed(c))
            return Reg(self.get_reg(x))
        L = self.loc[x.name]
        if L.reg is not None:
            return Reg(self.get_reg(x))
        if L.mem is not None and mem:
            return L.mem
        return Reg(self.get_reg(x))

    def owns(self, x):
        return (isinstance(x, Var) and self.cval(x) is None and self.loc[x.name].reg is not None
                and self.clobberable(x.name))

    def dest_for(self, x):
        """A register holding ``x`` that the template may overwrite."""
        if self.owns(x):
            L = self.loc[x.name]
            self._widen(x.name)
            self.pinned.add(L.reg)
            return L.reg
        if isinstance(x, Var) and self.cval(x) is None and self.loc[x.name].reg is not None:
            self.pinned.add(self.loc[x.name].reg)
        r = self.alloc()
        self._load_into(r, x)
        return r

    def to_fixed(self, x, r, destructive):
        """Place ``x`` in the specific register ``r``."""
        if isinstance(x, Var) and self.cval(x) is None:
            L = self.loc[x.name]
            if L.reg == r and (not destructive or self.clobberable(x.name)):
                self._widen(x.name)
                self.pinned.add(r)
                return
        self.take(r)
        self._load_into(r, x)
        if isinstance(x, Var) and self.cval(x) is None and not destructive:
            self.set_reg(r, x.name)
            self.pinned.add(r)

    def fold_pair(self, a, b, imm_ok):
        """Destination register and source operand for ``d op= s`` where the
        pair is already in decision order."""
        for v, other in ((a, b), (b, a)):
            if self.owns(v):
                d = self.dest_for(v)
                return d, self.src(other, mem=True, imm=imm_ok)
        kinds = ["imm" if self.cval(v) is not None else
                 "reg" if self.loc[v.name].reg is not None else
                 "mem" if self.loc[v.name].mem is not None else "reg" for v in (a, b)]
        plan = memory_operand_fold(kinds, 0)
        if plan.load:
            first, second = (a, b) if plan.load[0] == 0 else (b, a)
        elif plan.fold is not None:
            first, second = (b, a) if plan.fold == 0 else (a, b)
        else:
            first, second = a, b
            if kinds[0] == "imm" and kinds[1] != "imm":
                first, second = b, a
        if isinstance(second, Var) and self.cval(second) is None and self.loc[second.name].reg:
            self.pinned.add(self.loc[second.name].reg)
        d = self.dest_for(first)
        return d, self.src(second, mem=True, imm=imm_ok)

    def define(self, r, name):
        if name is None:
            self.scratch(r)
        else:
            self.set_reg(r, name)

    def alias(self, x, dst):
        """``dst`` takes the value of operand ``x`` (move semantics)."""
        if dst is None:
            return
        c = self.cval(x)
        if c is not None:
            self.loc[dst] = _Loc(imm=c)
            return
        L = self.loc[x.name]
        if not self.live_after(x.name) and self.cur_args[x.name] == 1:
            self.loc[dst] = L
            self.loc[x.name] = _Loc()
            if L.reg is not None:
                self.holder[L.reg] = dst
            if L.flag is not None:
                self.flag_val[L.flag] = dst
            return
        if L.mem is not None and L.slot is None:
            self.loc[dst] = _Loc(mem=L.mem)
            return
        r = self.alloc()
        self._load_into(r, x)
        self.set_reg(r, dst)

    # -- driver ------------------------------------------------------------------------
    def run(self) -> AsmProgram:
        for p in self.prog.params:
            if p.name in self.prog.returns:
                self.pending_out.add(p.name)
                self.store_output(p.name)
        self.pinned.clear()
        for pos, node in enumerate(self.cand.schedule):
            self.cur = pos
            asn = self.prog.body[node]
            self.cur_args = Counter(asn.uses())
            self.lower(node, asn)
            self.pinned.clear()
            for d in asn.defs():
                if d in self.prog.returns:
                    self.pending_out.add(d)
            for d in asn.defs():
                if d in self.pending_out:
                    self.store_output(d)
            self.pinned.clear()
            for v in set(asn.uses()) | set(asn.defs()):
                if not self.live_after(v):
                    self.kill(v)
        return self.finish()

    def kill(self, v):
        L = self.loc.get(v)
        if L is None:
            return
        if L.reg is not None and self.holder.get(L.reg) == v:
            self.holder[L.reg] = None
        if L.flag is not None and self.flag_val[L.flag] == v:
            self.flag_val[L.flag] = None
        if L.slot is not None:
            self.free_slots.append(L.slot)
        self.loc[v] = _Loc()

    def store_output(self, v):
        c = self.loc[v].imm
        for k, r in enumerate(self.prog.returns):
            if r != v:
                continue
            dst = Mem(self.cc.out_reg, 8 * k)
            if c is not None and _fits32(c):
                self.emit("mov", dst, Imm(_signed(c)))
            else:
                self.emit("mov", dst, Reg(self.get_reg(Var(v))))
        self.pending_out.discard(v)

    def finish(self) -> AsmProgram:
        used = set()
        for ins in self.pre + self.body:
            for a in ins.args:
                if isinstance(a, Reg):
                    used.add(a.base)
        saves = [r for r in self.regs if r in CALLEE_SAVED and r in used]
        frame = 8 * (self.nslots + len(saves))
        pro, epi = [], []
        if frame:
            pro.append(Instr("sub", (Reg("rsp"), Imm(frame))))
            for i, r in enumerate(saves):
                m = Mem("rsp", 8 * (self.nslots + i))
                pro.append(Instr("mov", (m, Reg(r))))
                epi.append(Instr("mov", (Reg(r), m)))
            epi.append(Instr("add", (Reg("rsp"), Imm(frame))))
        return AsmProgram(tuple(pro + self.pre + self.body + epi))

    def lower(self, node, asn):
        if max(asn.op.result_widths) > 64:
            raise UnsupportedKind(f"{asn.kind} at u{max(asn.op.result_widths)}")
        names = [d.name for d in asn.dests]
        vals = [self.cval(a) for a in asn.args]
        if all(v is not None for v in vals):
            res = eval_op(asn.op, [Value(self.width(a), v) for a, v in zip(asn.args, vals)])
            for n, r in zip(names, res):
                if n is not None:
                    self.loc[n] = _Loc(imm=r.bits)
            return
        for n in names:
            if n is not None:
                self.loc[n] = _Loc()
        tid = self.cand.templates[node]
        dec = self.cand.decisions[node]
        order = dec[0] if dec else 0
        style = tid.split("/", 1)[1]
        getattr(self, "_" + asn.kind)(asn, names, style, order)

    # -- templates ---------------------------------------------------------------------
    def _add(self, asn, names, style, order):
        a, b = asn.args
        if style == "lea":
            return self._lea_add(a, b, order, names[0])
        self._addcarryx_impl(ZERO1, a, b, order, None, names[0], "add")

    def _addcarryx(self, asn, names, style, order):
        cin, a, b = asn.args
        self._addcarryx_impl(cin, a, b, order, names[0], names[1], style)

    def _addcarryx_impl(self, cin, a, b, order, cout, total, style):
        if order:
            a, b = b, a
        if self.cval(a) is not None and self.cval(b) is None:
            a, b = b, a
        flag = "OF" if style == "adox" else "CF"
        cc = self.cval(cin)
        if cc == 0:
            path = "plain"
        elif self.in_flag(cin, flag):
            path = "chain"
        elif cout is None:
            path = "reassoc"
        else:
            path = "remat"
            if style == "adox":
                style, flag = "adcx", "CF"
        if path in ("plain", "chain"):
            writes = {"add": {"CF", "OF"}, "adcx": {"CF"}, "adox": {"OF"}}[style]
            if path == "plain" and style == "adox" and not self.clear["OF"]:
                writes = {"CF", "OF"}
        else:
            writes = {"CF", "OF"}
        self.protect(writes, {flag: cin.name} if path == "chain" else None)

        if path == "reassoc":
            rc = self.dest_for(cin)
            final = next((v for v in (a, b) if self.owns(v)), None)
            if final is not None:
                mid = b if final is a else a
                if self.cval(mid) != 0:
                    self.emit("add", Reg(rc), self.src(mid))
                d = self.dest_for(final)
                self.emit("add", Reg(d), Reg(rc))
                self.scratch(rc)
            else:
                for v in (a, b):
                    if self.cval(v) != 0:
                        self.emit("add", Reg(rc), self.src(v))
                d = rc
            self.define(d, total)
            return
        if path == "remat":
            rc = self.dest_for(cin)
            self.emit("add", Reg(rc), Imm(-1))
            self.scratch(rc)
        d, s = self.fold_pair(a, b, imm_ok=style == "add")
        if style == "add":
            self.emit("add" if path == "plain" else "adc", Reg(d), s)
        elif style == "adcx":
            if path == "plain" and not self.clear["CF"]:
                self.emit("clc")
            self.emit("adcx", Reg(d), s)
        else:
            if path == "plain" and not self.clear["OF"]:
                self.emit("test", Reg(d), Reg(d))
            self.emit("adox", Reg(d), s)
        self.define(d, total)
        self.set_flag(flag, cout)

    def _lea_add(self, a, b, order, total):
        if order:
            a, b = b, a
        if self.cval(a) is not None:
            a, b = b, a
        c = self.cval(b)
        if c is not None and _fits32(c):
            ra = self.get_reg(a)
            d = ra if self.clobberable(a.name) else self.alloc()
            self.emit("lea", Reg(d), Mem(ra, _signed(c)))
        else:
            ra, rb = self.get_reg(a), self.get_reg(b)
            if self.owns(a):
                d = ra
            elif self.owns(b):
                d = rb
            else:
                d = self.alloc()
            self.emit("lea", Reg(d), Mem(ra, 0, 8, rb, 1))
        self.define(d, total)

    def _sub(self, asn, names, style, order):
        a, b = asn.args
        self._subborrow_impl(ZERO1, a, b, None, names[0], "sub")

    def _subborrowx(self, asn, names, style, order):
        bin_, a, b = asn.args
        self._subborrow_impl(bin_, a, b, names[0], names[1], style)

    def _subborrow_impl(self, bin_, a, b, bout, diff, style):
        bc = self.cval(bin_)
        if bc == 0:
            path = "plain"
        elif self.in_flag(bin_, "CF"):
            path = "chain"
        elif bout is None and bc is None:
            path = "twosub"
        else:
            path = "remat"
        self.protect({"CF", "OF"}, {"CF": bin_.name} if path == "chain" else None)
        if path == "remat":
            rc = self.dest_for(bin_)
            self.emit("add", Reg(rc), Imm(-1))
            self.scratch(rc)
        d = self.dest_for(a)
        s = self.src(b)
        if path == "plain":
            if style == "sbb":
                if not self.clear["CF"]:
                    self.emit("clc")
                self.emit("sbb", Reg(d), s)
            else:
                self.emit("sub", Reg(d), s)
        elif path == "twosub":
            self.emit("sub", Reg(d), s)
            self.emit("sub", Reg(d), self.src(bin_))
        else:
            self.emit("sbb", Reg(d), s)
        self.define(d, diff)
        self.set_flag("CF", bout)

    def _mul_operands(self, x, y, order):
        if order:
            x, y = y, x
        # the constant (or the operand already in rdx) goes into rdx
        if self.cval(y) is not None:
            x, y = y, x
        elif (self.cval(x) is None and self.loc[x.name].reg != "rdx"
              and self.cval(y) is None and self.loc[y.name].reg == "rdx"):
            x, y = y, x
        return x, y

    def _rdx_source(self, x, y):
        """Load ``x`` into rdx and return the explicit source operand for ``y``."""
        x_dies = self.cval(x) is not None or self.clobberable(x.name)
        self.to_fixed(x, "rdx", destructive=False)
        if isinstance(y, Var) and isinstance(x, Var) and x.name == y.name:
            L = self.loc[x.name]
            return (L.mem if L.mem is not None else Reg("rdx")), x_dies
        s = self.src(y, mem=True, imm=False)
        if (isinstance(s, Reg) and len(self.regs) < 4 and not x_dies
                and isinstance(y, Var) and not self.clobberable(y.name)):
            # too few registers for rdx, a source register and two results
            self._store_to_stack(y.name)
            self.pinned.discard(s.name)
            s = self.loc[y.name].mem
        return s, x_dies

    def _mulx(self, asn, names, style, order):
        x, y = self._mul_operands(*asn.args, order)
        hi_n, lo_n = names
        if style == "mul" and "rax" in self.regs:
            return self._mul_rax(x, y, hi_n, lo_n)
        s, x_dies = self._rdx_source(x, y)
        if isinstance(s, Reg) and s.name != "rdx" and self.clobberable(y.name):
            hi = s.name
        else:
            hi = self.alloc()
        lo = "rdx" if x_dies else self.alloc()
        self.emit("mulx", Reg(hi), Reg(lo), s)
        self.define(hi, hi_n)
        self.define(lo, lo_n)

    def _mul_rax(self, x, y, hi_n, lo_n):
        self.protect({"CF", "OF"})
        if isinstance(y, Var) and self.cval(y) is None and self.loc[y.name].reg == "rax":
            x, y = y, x
        self.to_fixed(x, "rax", destructive=True)
        self.take("rdx")
        if isinstance(y, Var) and isinstance(x, Var) and x.name == y.name:
            L = self.loc[x.name]
            s = L.mem if L.mem is not None else Reg("rax")
        else:
            s = self.src(y, mem=True, imm=False)
        self.emit("mul", s)
        self.define("rdx", hi_n)
        self.define("rax", lo_n)

    def _mul(self, asn, names, style, order):
        x, y = asn.args
        if order:
            x, y = y, x
        if self.cval(x) is not None:
            x, y = y, x
        c = self.cval(y)
        res = names[0]
        if style in ("imul", "imul-imm"):
            self.protect({"CF", "OF"})
            if c is not None and _fits32(c):
                s = self.src(x, mem=True, imm=False)
                d = s.name if isinstance(s, Reg) and self.clobberable(x.name) else self.alloc()
                self.emit("imul", Reg(d), s, Imm(_signed(c)))
            else:
                d, s = self.fold_pair(x, y, imm_ok=False)
                self.emit("imul", Reg(d), s)
            return self.define(d, res)
        if style == "mulx":
            x, y = self._mul_operands(x, y, 0)
            s, x_dies = self._rdx_source(x, y)
            hi = self.alloc()
            lo = "rdx" if x_dies else self.alloc()
            self.emit("mulx", Reg(hi), Reg(lo), s)
            self.scratch(hi)
            return self.define(lo, res)
        if style == "lea":
            rx = self.get_reg(x)
            d = rx if self.clobberable(x.name) else self.alloc()
            self.emit("lea", Reg(d), Mem(rx, 0, 8, rx, c - 1))
            return self.define(d, res)
        self.protect({"CF", "OF"})
        if style == "shl":
            k = c.bit_length() - 1
            if k == 0:
                return self.alias(x, res)
            d = self.dest_for(x)
            self.emit("shl", Reg(d), Imm(k))
            return self.define(d, res)
        # shift-add: x * (2^p + 2^q) = ((x << (p - q)) + x) << q
        dp, q = shift_add_plan(c)
        t = self.alloc()
        self._load_into(t, x)
        self.emit("shl", Reg(t), Imm(dp))
        self.emit("add", Reg(t), self.src(x, mem=True, imm=False))
        if q:
            self.emit("shl", Reg(t), Imm(q))
        self.define(t, res)

    def _and(self, asn, names, style, order):
        self._logic("and", asn, names, order)

    def _or(self, asn, names, style, order):
        self._logic("or", asn, names, order)

    def _logic(self, op, asn, names, order):
        a, b = asn.args
        if order:
            a, b = b, a
        if self.cval(a) is not None:
            a, b = b, a
        self.protect({"CF", "OF"})
        d, s = self.fold_pair(a, b, imm_ok=True)
        self.emit(op, Reg(d), s)
        self.define(d, names[0])

    def _not(self, asn, names, style, order):
        (x,) = asn.args
        self.protect({"CF", "OF"})
        self.emit("cmp", self.src(x, mem=True, imm=False), Imm(1))
        if style == "cmp":
            self.set_flag("CF", names[0])
            return
        r = self.alloc()
        self.emit("setc", Reg(sub_register(r, 8)))
        self.emit("movzx", Reg(r), Reg(sub_register(r, 8)))
        self.define(r, names[0])

    def _bitnot(self, asn, names, style, order):
        (x,) = asn.args
        self.protect({"CF", "OF"})
        if style == "xor":
            d = self.dest_for(x)
            self.emit("xor", Reg(d), Imm(-1))
        else:
            s = self.src(x, mem=True, imm=False)
            d = self.alloc()
            self.emit("mov", Reg(d), Imm(-1))
            self.emit("sub", Reg(d), s)
        self.define(d, names[0])

    def _shift(self, op, asn, names, style):
        x, k = asn.args
        k = self.cval(k)
        if k == 0:
            return self.alias(x, names[0])
        if style in ("shl", "shr"):
            self.protect({"CF", "OF"})
            d = self.dest_for(x)
            self.emit(op, Reg(d), Imm(k))
        else:
            s = self.src(x, mem=True, imm=False)
            d = self.alloc()
            self.emit("mov", Reg(d), Imm(k))
            self.emit(style, Reg(d), s, Reg(d))
        self.define(d, names[0])

    def _shl(self, asn, names, style, order):
        self._shift("shl", asn, names, style)

    def _shr(self, asn, names, style, order):
        self._shift("shr", asn, names, style)

    def _cmovznz(self, asn, names, style, order):
        t, nz, z = asn.args
        tc = self.cval(t)
        if tc is not None:
            return self.alias(nz if tc else z, names[0])
        if style == "add":
            direct = self.in_flag(t, "CF")
            if direct:
                self.protect(set())
            else:
                self.protect({"CF", "OF"})
                r = self.dest_for(t)
                self.emit("add", Reg(r), Imm(-1))
                self.scratch(r)
            d = self.dest_for(z)
            self.emit("cmovc", Reg(d), self.src(nz, mem=True, imm=False))
        else:
            self.protect({"CF", "OF"})
            self.emit("cmp", self.src(t, mem=True, imm=False), Imm(1))
            d = self.dest_for(nz)
            self.emit("cmovc", Reg(d), self.src(z, mem=True, imm=False))
        self.define(d, names[0])

    def _static_cast(self, asn, names, style, order):
        (x,) = asn.args
        w = asn.op.result_widths[0]
        if self.width(x) > 64:
            raise UnsupportedKind("static_cast from u128")
        if style == "move":
            return self.alias(x, names[0])
        if style == "and":
            self.protect({"CF", "OF"})
            d = self.dest_for(x)
            self.emit("and", Reg(d), Imm(1 if w == 1 else 0xFF))
            return self.define(d, names[0])
        L = self.loc[x.name]
        if L.reg is not None:
            rx = L.reg
            self.pinned.add(rx)
            d = rx if self.clobberable(x.name) else self.alloc()
            self.emit("movzx", Reg(d), Reg(sub_register(rx, 8)))
        elif L.mem is not None:
            d = self.alloc()
            self.emit("movzx", Reg(d), Mem(L.mem.base, L.mem.offset, 1))
        else:
            d = self.dest_for(x)  # a flag value is already a single bit
        self.define(d, names[0])

    def _move(self, asn, names, style, order):
        if self.width(asn.args[0]) > 64:
            raise UnsupportedKind("move of a u128 value")
        self.alias(asn.args[0], names[0])


def emit(prog: IrProgram, cand: Candidate, cc: CallingConvention | None = None,
         registers=DEFAULT_REGISTERS) -> AsmProgram:
    """Lower ``cand`` to a straight-line program (without the final ``ret``)."""
    cc = cc or CallingConvention.for_program(prog)
    if len(cand.schedule) != len(prog.body):
        raise InvalidCandidate("schedule does not cover the program")
    return _Emitter(prog, cand, cc, tuple(registers)).run()
