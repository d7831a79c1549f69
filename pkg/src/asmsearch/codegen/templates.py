"""Instruction templates: the alternative lowerings offered for each IR op.

A template is descriptive data; the emitter dispatches on ``id`` to produce
instructions.  ``applies`` filters templates that only make sense for some
operands (strength reduction needs a suitable constant, ``movzx`` needs a
byte-sized target and so on).
"""
from __future__ import annotations

from dataclasses import dataclass, field

from ..ir import Assignment, Const


class UnsupportedKind(Exception):
    pass


@dataclass(frozen=True)
class Template:
    id: str
    ir_kind: str
    pattern: str
    reads: frozenset = field(default_factory=frozenset)
    writes: frozenset = field(default_factory=frozenset)
    constraints: tuple = ()
    applies: object = None  # callable(Assignment) -> bool

    def applicable(self, asn: Assignment) -> bool:
        return self.applies is None or self.applies(asn)


def _const_arg(asn):
    """The constant factor of a mul with exactly one constant operand."""
    a, b = asn.args
    if isinstance(a, Const) != isinstance(b, Const):
        return (a if isinstance(a, Const) else b).value
    return None


def shift_add_plan(c):
    """Shift/add steps for c = 2^p + 2^q (p > q): (p - q, q). None otherwise."""
    if c <= 0 or bin(c).count("1") != 2:
        return None
    q = (c & -c).bit_length() - 1
    p = c.bit_length() - 1
    return p - q, q


def _pow2(asn):
    c = _const_arg(asn)
    return c is not None and c > 0 and c & (c - 1) == 0


def _shift_add(asn):
    c = _const_arg(asn)
    return c is not None and shift_add_plan(c) is not None


def _lea_mul(asn):
    return _const_arg(asn) in (3, 5, 9)


def _imm32(asn):
    c = _const_arg(asn)
    return c is not None and (c < 1 << 31 or c >= (1 << 64) - (1 << 31))


def _narrowing(asn):
    return asn.op.result_widths[0] < 64


def _to_byte(asn):
    return asn.op.result_widths[0] == 8


def _widening(asn):
    return asn.op.result_widths[0] == 64


def _lea_add(asn):
    return asn.op.result_widths[0] == 64


CF, OF = "CF", "OF"
_T = Template
_f = frozenset

TEMPLATES = [
    _T("addcarryx/add", "addcarryx", "add d, s | adc d, s", _f({CF}), _f({CF, OF}),
       ("reassociates a live carry-in as (b + c) + a when the carry-out is discarded",)),
    _T("addcarryx/adcx", "addcarryx", "clc?; adcx d, s", _f({CF}), _f({CF}),
       ("clc emitted only when CF is not known clear", "source may be memory, not immediate")),
    _T("addcarryx/adox", "addcarryx", "test?; adox d, s", _f({OF}), _f({OF}),
       ("OF cleared with test when not known clear", "source may be memory, not immediate")),
    _T("add/add", "add", "add d, s", _f(), _f({CF, OF})),
    _T("add/lea", "add", "lea d, [a + b]", _f(), _f(), ("both operands in registers",), _lea_add),
    _T("subborrowx/sub", "subborrowx", "sub d, s | sbb d, s", _f({CF}), _f({CF, OF})),
    _T("subborrowx/sbb", "subborrowx", "clc?; sbb d, s", _f({CF}), _f({CF, OF})),
    _T("sub/sub", "sub", "sub d, s", _f(), _f({CF, OF})),
    _T("mulx/mulx", "mulx", "mulx hi, lo, s", _f(), _f(), ("one factor in rdx",)),
    _T("mulx/mul", "mulx", "mul s", _f(), _f({CF, OF}), ("one factor in rax; rdx:rax clobbered",)),
    _T("mul/imul", "mul", "imul d, s", _f(), _f({CF, OF})),
    _T("mul/mulx", "mul", "mulx scratch, d, s", _f(), _f(), ("one factor in rdx",)),
    _T("mul/imul-imm", "mul", "imul d, s, imm", _f(), _f({CF, OF}), ("constant fits imm32",), _imm32),
    _T("mul/shl", "mul", "shl d, k", _f(), _f({CF, OF}), ("constant is a power of two",), _pow2),
    _T("mul/shift-add", "mul", "mov t, x; shl t, p; add t, x; shl t, q", _f(), _f({CF, OF}),
       ("constant has two set bits",), _shift_add),
    _T("mul/lea", "mul", "lea d, [x + x*k]", _f(), _f(), ("constant is 3, 5 or 9",), _lea_mul),
    _T("and/and", "and", "and d, s", _f(), _f({CF, OF}), ("CF and OF known clear afterwards",)),
    _T("or/or", "or", "or d, s", _f(), _f({CF, OF}), ("CF and OF known clear afterwards",)),
    _T("not/cmp", "not", "cmp x, 1", _f(), _f({CF, OF}), ("result left in CF",)),
    _T("not/setc", "not", "cmp x, 1; setc b; movzx d, b", _f(), _f({CF, OF})),
    _T("bitnot/xor", "bitnot", "xor d, -1", _f(), _f({CF, OF})),
    _T("bitnot/sub", "bitnot", "mov d, -1; sub d, x", _f(), _f({CF, OF})),
    _T("shl/shl", "shl", "shl d, k", _f(), _f({CF, OF})),
    _T("shl/shlx", "shl", "mov c, k; shlx d, x, c", _f(), _f()),
    _T("shr/shr", "shr", "shr d, k", _f(), _f({CF, OF})),
    _T("shr/shrx", "shr", "mov c, k; shrx d, x, c", _f(), _f()),
    _T("cmovznz/add", "cmovznz", "add s, -1; cmovc z, nz", _f({CF}), _f({CF, OF}),
       ("uses a selector already in CF directly",)),
    _T("cmovznz/cmp", "cmovznz", "cmp t, 1; cmovc nz, z", _f(), _f({CF, OF})),
    _T("static_cast/and", "static_cast", "and d, mask", _f(), _f({CF, OF}), (), _narrowing),
    _T("static_cast/movzx", "static_cast", "movzx d, b", _f(), _f(), (), _to_byte),
    _T("static_cast/move", "static_cast", "mov d, x", _f(), _f(), (), _widening),
    _T("move/mov", "move", "mov d, x", _f(), _f()),
]
BY_ID = {t.id: t for t in TEMPLATES}
_BY_KIND = {}
for _t in TEMPLATES:
    _BY_KIND.setdefault(_t.ir_kind, []).append(_t)


def templates_for(kind: str) -> list:
    if kind not in _BY_KIND:
        raise UnsupportedKind(kind)
    return list(_BY_KIND[kind])


def node_templates(asn: Assignment) -> list:
    """Template ids usable for this assignment, in registry order."""
    if max(asn.op.result_widths) > 64:
        raise UnsupportedKind(f"{asn.kind} at u{max(asn.op.result_widths)}")
    out = [t.id for t in templates_for(asn.kind) if t.applicable(asn)]
    if not out:
        raise UnsupportedKind(f"no template applies to {asn.kind}")
    return out
