"""Straight-line SSA IR: data model, parser, validator, pretty-printer and
reference interpreters.

Surface syntax::

    fn example(X: u64 <= 0x7fffffffffffffff, Y: u64, Z: u64) -> (u64, u64) {
      t2, t1 = mulx(Z, Z);
      _, t0 = addcarryx(0b0:u1, Y, Z);
      ...
      return O1, O0;
    }

Multi-result operators list the high part first: ``addcarryx(c, a, b)``
gives ``(carry, sum)``, ``subborrowx(b, x, y)`` gives ``(borrow, diff)`` and
``mulx(a, b)`` gives ``(hi, lo)``.  ``cmovznz(t, nz, z)`` selects ``nz`` when
``t`` is non-zero.  ``x = !y`` / ``x = ~y`` / ``x = y`` are sugar for
``not``, ``bitnot`` and ``move``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from . import bits
from .bits import U64

KINDS = (
    "add", "sub", "mul", "and", "or", "not", "bitnot", "shl", "shr",
    "addcarryx", "subborrowx", "mulx", "cmovznz", "static_cast", "move",
)
WIDTHS = (1, 8, 64, 128)
ARITY = {
    "add": 2, "sub": 2, "mul": 2, "and": 2, "or": 2, "not": 1, "bitnot": 1,
    "shl": 2, "shr": 2, "addcarryx": 3, "subborrowx": 3, "mulx": 2,
    "cmovznz": 3, "static_cast": 1, "move": 1,
}
RESULTS = {"addcarryx": 2, "subborrowx": 2, "mulx": 2}
COMMUTATIVE = {"add", "mul", "and", "or", "mulx", "addcarryx"}


class IrError(Exception):
    pass


class IRSyntaxError(IrError):
    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {msg}")
        self.line = line
        self.col = col


class ValidationError(IrError):
    def __init__(self, msg: str, kind: str = "invalid"):
        super().__init__(msg)
        self.kind = kind


class WidthMismatch(IrError):
    pass


class ShiftOutOfRange(IrError):
    pass


@dataclass(frozen=True)
class Value:
    width: int
    bits: int

    def __post_init__(self):
        if not 0 <= self.bits < (1 << self.width):
            raise WidthMismatch(f"{self.bits:#x} does not fit u{self.width}")


@dataclass(frozen=True)
class Const:
    value: int
    width: int

    def __str__(self):
        if self.width == 1:
            return f"0b{self.value:b}:u1"
        return f"{self.value:#x}:u{self.width}"


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self):
        return self.name


Operand = "Var | Const"


@dataclass(frozen=True)
class Param:
    name: str
    width: int
    bound: int | None = None

    @property
    def upper(self) -> int:
        """Inclusive upper bound used by range analysis and input sampling."""
        top = bits.mask(self.width)
        return top if self.bound is None else min(self.bound, top)


@dataclass(frozen=True)
class Dest:
    name: str | None  # None is the `_` discard
    width: int


@dataclass(frozen=True)
class IrOp:
    kind: str
    arg_widths: tuple
    result_widths: tuple


@dataclass(frozen=True)
class Assignment:
    dests: tuple
    op: IrOp
    args: tuple

    @property
    def kind(self) -> str:
        return self.op.kind

    def uses(self):
        return [a.name for a in self.args if isinstance(a, Var)]

    def defs(self):
        return [d.name for d in self.dests if d.name is not None]


@dataclass(frozen=True)
class IrProgram:
    name: str
    params: tuple
    body: tuple
    returns: tuple
    widths: dict = field(default=None, compare=False, hash=False, repr=False)

    def __post_init__(self):
        if self.widths is None:
            object.__setattr__(self, "widths", validate(self))

    def width_of(self, name: str) -> int:
        return self.widths[name]

    def param(self, name: str) -> Param:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)


# --- width rules -------------------------------------------------------------

def _infer(kind, arg_widths, ann):
    """Return (arg_widths, result_widths) for an op, raising ValidationError.

    ``ann`` holds the dest annotations (None when absent).
    """
    if len(arg_widths) != ARITY[kind]:
        raise ValidationError(f"{kind} takes {ARITY[kind]} arguments, got {len(arg_widths)}", "arity")
    if len(ann) != RESULTS.get(kind, 1):
        raise ValidationError(f"{kind} produces {RESULTS.get(kind, 1)} results, got {len(ann)} dests", "arity")
    a0 = ann[0]

    def need(ws, limit):
        for w in ws:
            if w > limit:
                raise ValidationError(f"{kind}: operand u{w} wider than u{limit}", "width")

    if kind in ("addcarryx", "subborrowx"):
        need(arg_widths[:1], 1)
        need(arg_widths[1:], 64)
        res = (1, 64)
        args = (1, 64, 64)
    elif kind == "mulx":
        need(arg_widths, 64)
        res, args = (64, 64), (64, 64)
    elif kind in ("add", "mul", "sub"):
        w = a0 or max(64, *arg_widths)
        if w not in (64, 128) or (kind == "sub" and w != 64):
            raise ValidationError(f"{kind} at u{w} unsupported", "width")
        need(arg_widths, w)
        res, args = (w,), (w, w)
    elif kind in ("and", "or"):
        w = a0 or max(arg_widths)
        if w == 128:
            raise ValidationError(f"{kind} at u128 unsupported", "width")
        need(arg_widths, w)
        res, args = (w,), (w, w)
    elif kind == "not":
        need(arg_widths, 64)
        res, args = (1,), (64,)
    elif kind == "bitnot":
        need(arg_widths, 64)
        res, args = (64,), (64,)
    elif kind in ("shl", "shr"):
        w = a0 or max(64, arg_widths[0])
        if w not in (64, 128) or (kind == "shl" and w != 64):
            raise ValidationError(f"{kind} at u{w} unsupported", "width")
        need(arg_widths[:1], w)
        res, args = (w,), (w, 128)
    elif kind == "cmovznz":
        w = a0 or 64
        if w == 128:
            raise ValidationError("cmovznz at u128 unsupported", "width")
        need(arg_widths[:1], 64)
        need(arg_widths[1:], w)
        res, args = (w,), (64, w, w)
    elif kind == "static_cast":
        if a0 is None:
            raise ValidationError("static_cast needs an annotated destination width", "width")
        res, args = (a0,), (128,)
    elif kind == "move":
        w = arg_widths[0]
        res, args = (w,), (w,)
    else:  # pragma: no cover - guarded by KINDS
        raise ValidationError(f"unknown op {kind}", "kind")
    for a, r in zip(ann, res):
        if a is not None and a != r:
            raise ValidationError(f"{kind}: dest annotated u{a} but produces u{r}", "width")
    return args, res


def make_op(kind, arg_widths, ann):
    args, res = _infer(kind, tuple(arg_widths), tuple(ann))
    return IrOp(kind, args, res)


def validate(prog: IrProgram) -> dict:
    """Check SSA, def-before-use and widths. Returns the name → width map."""
    env = {}
    for p in prog.params:
        if p.width not in WIDTHS:
            raise ValidationError(f"param {p.name}: unsupported width u{p.width}", "width")
        if p.name in env:
            raise ValidationError(f"param {p.name} declared twice", "ssa")
        env[p.name] = p.width
    for i, asn in enumerate(prog.body):
        if asn.op.kind not in KINDS:
            raise ValidationError(f"unknown op {asn.op.kind}", "kind")
        aw = []
        for a in asn.args:
            if isinstance(a, Var):
                if a.name not in env:
                    raise ValidationError(f"assignment {i}: undefined identifier {a.name}", "undefined")
                aw.append(env[a.name])
            else:
                if a.width not in WIDTHS or not 0 <= a.value < (1 << a.width):
                    raise ValidationError(f"constant {a.value:#x} does not fit u{a.width}", "width")
                aw.append(a.width)
        expect = make_op(asn.op.kind, aw, [d.width for d in asn.dests])
        if expect != asn.op:
            raise ValidationError(f"assignment {i}: op signature {asn.op} != {expect}", "width")
        if asn.op.kind in ("shl", "shr"):
            k = asn.args[1]
            if not isinstance(k, Const):
                raise ValidationError("shift amount must be a constant", "shift")
            if k.value >= asn.op.result_widths[0]:
                raise ShiftOutOfRange(f"shift by {k.value} at u{asn.op.result_widths[0]}")
        for d in asn.dests:
            if d.name is None:
                continue
            if d.name in env:
                raise ValidationError(f"{d.name} assigned more than once", "ssa")
            env[d.name] = d.width
        names = asn.defs()
        if len(set(names)) != len(names):
            raise ValidationError("duplicate destination", "ssa")
    for r in prog.returns:
        if r not in env:
            raise ValidationError(f"returned identifier {r} undefined", "undefined")
    return env


# --- parsing -----------------------------------------------------------------

_TOKEN = re.compile(
    r"(?P<ws>[ \t\r]+)|(?P<nl>\n)|(?P<comment>(?:#|//)[^\n]*)"
    r"|(?P<num>0x[0-9a-fA-F_]+|0b[01_]+|[0-9][0-9_]*)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<punct>->|<=|[(){},;:=!~])"
)
_TYPE = re.compile(r"u(1|8|64|128)$")


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _lex(text):
    toks = []
    pos, line, lstart = 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise IRSyntaxError(f"unexpected character {text[pos]!r}", line, pos - lstart + 1)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            lstart = m.end()
        elif kind not in ("ws", "comment"):
            toks.append(_Tok(kind, m.group(), line, pos - lstart + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - lstart + 1))
    return toks


class _Parser:
    def __init__(self, text):
        self.toks = _lex(text)
        self.i = 0

    def peek(self, text=None):
        t = self.toks[self.i]
        return t if text is None or t.text == text else None

    def next(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def fail(self, msg, tok=None):
        tok = tok or self.toks[self.i]
        raise IRSyntaxError(msg, tok.line, tok.col)

    def expect(self, text):
        t = self.next()
        if t.text != text:
            self.fail(f"expected {text!r}, found {t.text or 'end of input'!r}", t)
        return t

    def ident(self):
        t = self.next()
        if t.kind != "ident":
            self.fail(f"expected identifier, found {t.text or 'end of input'!r}", t)
        return t.text

    def number(self):
        t = self.next()
        if t.kind != "num":
            self.fail(f"expected number, found {t.text!r}", t)
        return int(t.text.replace("_", ""), 0)

    def type_(self):
        t = self.next()
        m = _TYPE.match(t.text)
        if t.kind != "ident" or not m:
            self.fail(f"expected a type (u1, u8, u64, u128), found {t.text!r}", t)
        return int(m.group(1))

    def operand(self):
        t = self.peek()
        if t.kind == "num":
            v = self.number()
            if not self.peek(":"):
                self.fail("constants need a width suffix like :u64")
            self.next()
            return Const(v, self.type_())
        name = self.ident()
        if name == "_":
            self.fail("`_` cannot be read", t)
        return Var(name)

    def program(self):
        self.expect("fn")
        name = self.ident()
        self.expect("(")
        params = []
        while not self.peek(")"):
            pname = self.ident()
            self.expect(":")
            w = self.type_()
            bound = None
            if self.peek("<="):
                self.next()
                bound = self.number()
            params.append(Param(pname, w, bound))
            if not self.peek(")"):
                self.expect(",")
        self.expect(")")
        self.expect("->")
        self.expect("(")
        rtypes = []
        while not self.peek(")"):
            rtypes.append(self.type_())
            if not self.peek(")"):
                self.expect(",")
        self.expect(")")
        self.expect("{")
        env = {p.name: p.width for p in params}
        body = []
        while not self.peek("return"):
            if self.peek().kind == "eof":
                self.fail("missing return statement")
            body.append(self.statement(env))
        self.expect("return")
        rets = []
        while not self.peek(";"):
            rets.append(self.ident())
            if not self.peek(";"):
                self.expect(",")
        self.expect(";")
        self.expect("}")
        if self.peek().kind != "eof":
            self.fail("trailing input after function")
        for r in rets:
            if r not in env:
                raise ValidationError(f"returned identifier {r} undefined", "undefined")
        if [env[r] for r in rets] != rtypes:
            raise ValidationError("return types do not match returned values", "width")
        return IrProgram(name, tuple(params), tuple(body), tuple(rets))

    def statement(self, env):
        start = self.peek()
        dests = []
        while True:
            t = self.peek()
            n = self.ident()
            w = None
            if self.peek(":"):
                self.next()
                w = self.type_()
            dests.append((None if n == "_" else n, w, t))
            if self.peek("="):
                break
            self.expect(",")
        self.expect("=")
        t = self.peek()
        if t.text in ("!", "~"):
            self.next()
            kind, args = ("not" if t.text == "!" else "bitnot"), [self.operand()]
        elif t.kind == "ident" and self.toks[self.i + 1].text == "(":
            kind = self.ident()
            if kind not in KINDS:
                self.fail(f"unknown operator {kind!r}", t)
            self.expect("(")
            args = []
            while not self.peek(")"):
                args.append(self.operand())
                if not self.peek(")"):
                    self.expect(",")
            self.expect(")")
        else:
            kind, args = "move", [self.operand()]
        self.expect(";")
        aw = []
        for a in args:
            if isinstance(a, Var):
                if a.name not in env:
                    raise ValidationError(f"line {start.line}: undefined identifier {a.name}", "undefined")
                aw.append(env[a.name])
            else:
                aw.append(a.width)
        op = make_op(kind, aw, [d[1] for d in dests])
        out = []
        for (n, _, tok), w in zip(dests, op.result_widths):
            if n is not None:
                if n in env:
                    raise ValidationError(f"line {tok.line}: {n} assigned more than once", "ssa")
                env[n] = w
            out.append(Dest(n, w))
        return Assignment(tuple(out), op, tuple(args))


def parse_ir(text: str) -> IrProgram:
    return _Parser(text).program()


# --- printing ----------------------------------------------------------------

def _fmt_bound(b):
    return f" <= {b:#x}" if b is not None else ""


def pretty_print(prog: IrProgram) -> str:
    params = ", ".join(f"{p.name}: u{p.width}{_fmt_bound(p.bound)}" for p in prog.params)
    rtypes = ", ".join(f"u{prog.widths[r]}" for r in prog.returns)
    lines = [f"fn {prog.name}({params}) -> ({rtypes}) {{"]
    for asn in prog.body:
        aw = [prog.widths[a.name] if isinstance(a, Var) else a.width for a in asn.args]
        if asn.kind == "static_cast":
            default = (None,)
        else:
            default = _infer(asn.kind, aw, [None] * len(asn.dests))[1]
        ds = []
        for d, dw in zip(asn.dests, default):
            s = d.name or "_"
            if d.width != dw:
                s += f": u{d.width}"
            ds.append(s)
        args = ", ".join(str(a) for a in asn.args)
        lines.append(f"  {', '.join(ds)} = {asn.kind}({args});")
    lines.append(f"  return {', '.join(prog.returns)};")
    lines.append("}")
    return "\n".join(lines) + "\n"


# --- semantics ---------------------------------------------------------------

def eval_op(op: IrOp, args) -> list:
    if len(args) != len(op.arg_widths):
        raise WidthMismatch(f"{op.kind} expects {len(op.arg_widths)} args")
    for a, w in zip(args, op.arg_widths):
        if a.width > w:
            raise WidthMismatch(f"{op.kind}: u{a.width} operand where u{w} expected")
    v = [a.bits for a in args]
    k = op.kind
    w = op.result_widths[0]
    m = bits.mask(w)
    if k in ("addcarryx", "subborrowx"):
        c, a, b = v
        if k == "addcarryx":
            s = a + b + c
            return [Value(1, s >> 64), Value(64, s & bits.MASK64)]
        d = a - b - c
        return [Value(1, int(d < 0)), Value(64, d & bits.MASK64)]
    if k == "mulx":
        p = v[0] * v[1]
        return [Value(64, p >> 64), Value(64, p & bits.MASK64)]
    if k in ("shl", "shr"):
        if v[1] >= w:
            raise ShiftOutOfRange(f"{k} by {v[1]} at u{w}")
        r = (v[0] << v[1]) if k == "shl" else (v[0] >> v[1])
        return [Value(w, r & m)]
    if k == "add":
        r = v[0] + v[1]
    elif k == "sub":
        r = v[0] - v[1]
    elif k == "mul":
        r = v[0] * v[1]
    elif k == "and":
        r = v[0] & v[1]
    elif k == "or":
        r = v[0] | v[1]
    elif k == "not":
        r = int(v[0] == 0)
    elif k == "bitnot":
        r = ~v[0]
    elif k == "cmovznz":
        r = v[1] if v[0] else v[2]
    elif k in ("static_cast", "move"):
        r = v[0]
    else:  # pragma: no cover
        raise IrError(f"unknown op {k}")
    return [Value(w, r & m)]


def _coerce_inputs(prog, inputs):
    if len(inputs) != len(prog.params):
        raise WidthMismatch(f"{prog.name} takes {len(prog.params)} inputs, got {len(inputs)}")
    vals = []
    for p, x in zip(prog.params, inputs):
        if isinstance(x, Value):
            if x.width != p.width:
                raise WidthMismatch(f"input {p.name}: u{x.width} given for u{p.width}")
            vals.append(x)
        else:
            vals.append(Value(p.width, x))
    return vals


def interpret_ir(prog: IrProgram, inputs) -> list:
    env = {p.name: v for p, v in zip(prog.params, _coerce_inputs(prog, inputs))}
    for asn in prog.body:
        args = [env[a.name] if isinstance(a, Var) else Value(a.width, a.value) for a in asn.args]
        for d, r in zip(asn.dests, eval_op(asn.op, args)):
            if d.name is not None:
                env[d.name] = r
    return [env[r] for r in prog.returns]


def interpret_batch(prog: IrProgram, inputs) -> np.ndarray:
    """Vectorized interpreter: ``inputs`` is (n_params, N) uint64, one lane per
    input vector. Returns (n_returns, N). Widths above 64 are not supported."""
    inputs = np.asarray(inputs, dtype=U64)
    n = inputs.shape[1]
    env = {p.name: inputs[i] for i, p in enumerate(prog.params)}
    for asn in prog.body:
        if max(asn.op.result_widths) > 64 or any(
                isinstance(x, Var) and prog.widths[x.name] > 64 for x in asn.args):
            raise NotImplementedError("batch interpretation is limited to u64")
        a = [env[x.name] if isinstance(x, Var) else bits.vconst(x.value, n) for x in asn.args]
        k = asn.kind
        w = asn.op.result_widths[0]
        if k == "addcarryx":
            s, c = bits.vadd(a[1], a[2], a[0])
            res = [c, s]
        elif k == "subborrowx":
            d, b = bits.vsub(a[1], a[2], a[0])
            res = [b, d]
        elif k == "mulx":
            res = list(bits.vmul(a[0], a[1]))
        else:
            if k == "add":
                r = a[0] + a[1]
            elif k == "sub":
                r = a[0] - a[1]
            elif k == "mul":
                r = a[0] * a[1]
            elif k == "and":
                r = a[0] & a[1]
            elif k == "or":
                r = a[0] | a[1]
            elif k == "not":
                r = bits.vbool(a[0] == 0)
            elif k == "bitnot":
                r = ~a[0]
            elif k == "shl":
                r = a[0] << a[1]
            elif k == "shr":
                r = a[0] >> a[1]
            elif k == "cmovznz":
                r = np.where(a[0] != 0, a[1], a[2])
            else:
                r = a[0]
            if w < 64:
                r = r & U64(bits.mask(w))
            res = [r]
        for d, r in zip(asn.dests, res):
            if d.name is not None:
                env[d.name] = r
    if not prog.returns:
        return np.zeros((0, n), dtype=U64)
    return np.stack([env[r] for r in prog.returns])


def random_inputs(prog: IrProgram, rng, n: int) -> np.ndarray:
    """(n_params, n) array of inputs drawn uniformly below each param's bound.

    ``rng`` is a numpy Generator. Edge values (0 and the bound) are mixed in
    so carry paths get exercised."""
    out = np.empty((len(prog.params), n), dtype=U64)
    for i, p in enumerate(prog.params):
        hi = p.upper
        col = rng.integers(0, hi, size=n, dtype=U64, endpoint=True)
        if n >= 8:
            col[rng.integers(0, n, size=max(1, n // 16))] = U64(hi)
            col[rng.integers(0, n, size=max(1, n // 32))] = U64(0)
        out[i] = col
    return out
