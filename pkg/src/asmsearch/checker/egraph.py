"""Append-only, hash-consed expression DAG with normalizing construction.

Every node is created through ``internalize``, which rewrites its arguments
into a canonical form first, so two expressions that normalize the same
way end up as the same node id.  Each node carries a sound inclusive upper
bound on its unsigned value; several rewrites are gated on those bounds.

All arithmetic is on 64-bit words.  Operators:

=============  ==========================================================
add            n-ary sum mod 2^64 (associative, commutative)
addcarry       n-ary carry-out: floor(sum / 2^64) (commutative)
sub            a - (sum of rest) mod 2^64 (rest is unordered)
subborrow      1 if a < sum of rest else 0 (rest is unordered)
mullo          n-ary product mod 2^64 (associative, commutative)
mulhi          high word of the 128-bit product of two words
and, or, xor   bitwise (associative, commutative)
shl, shr, sar  shifts by a count (taken mod 64)
lowbyte        x & 0xff
setlowbyte     (y & ~0xff) | (v & 0xff)
nonzero        1 if x != 0 else 0
iszero         1 if x == 0 else 0
select         select(c, a, b) is b when c != 0 else a
bzhi           x with bits from position n upward cleared
=============  ==========================================================
"""
from __future__ import annotations

from ..bits import MASK64

TOP = MASK64
ASSOC = frozenset({"add", "mullo", "and", "or", "xor"})
COMM = frozenset({"add", "addcarry", "mullo", "mulhi", "and", "or", "xor"})
SYMBOL = {"add": "+", "mullo": "*", "shr": ">>", "shl": "<<", "and": "&", "or": "|",
          "xor": "^", "sub": "-"}


def _sat(v):
    return v if v <= TOP else TOP


def _ones_below(b):
    """Smallest all-ones value >= b."""
    return (1 << b.bit_length()) - 1


class EGraph:
    def __init__(self):
        self.ops = []       # "const", "var" or operator name
        self.args = []      # child id tuples
        self.payload = []   # constant value, variable name, or None
        self.bounds = []
        self.index = {}

    def __len__(self):
        return len(self.ops)

    # -- leaves ------------------------------------------------------------
    def _new(self, op, args, payload, bound):
        key = (op, args, payload)
        nid = self.index.get(key)
        if nid is None:
            nid = len(self.ops)
            self.ops.append(op)
            self.args.append(args)
            self.payload.append(payload)
            self.bounds.append(bound)
            self.index[key] = nid
        return nid

    def const(self, value: int) -> int:
        if value < 0:
            raise ValueError("constants are unsigned")
        return self._new("const", (), value, value)

    def var(self, name: str, bound: int = TOP) -> int:
        key = ("var", (), name)
        if key in self.index:
            return self.index[key]
        return self._new("var", (), name, bound)

    def is_const(self, n):
        return self.ops[n] == "const"

    def value(self, n):
        return self.payload[n]

    def bound_of(self, n: int) -> int:
        return self.bounds[n]

    def describe(self, n: int) -> str:
        op = self.ops[n]
        if op == "const":
            return str(self.payload[n])
        if op == "var":
            return str(self.payload[n])
        return f"{SYMBOL.get(op, op)}({','.join(map(str, self.args[n]))})"

    def expr(self, n: int, depth: int = 6) -> str:
        """Readable expression tree, for diagnostics."""
        op = self.ops[n]
        if op in ("const", "var"):
            v = self.payload[n]
            return hex(v) if op == "const" and v > 9 else str(v)
        if depth == 0:
            return f"#{n}"
        inner = ", ".join(self.expr(c, depth - 1) for c in self.args[n])
        return f"{op}({inner})"

    # -- construction --------------------------------------------------------
    def internalize(self, op: str, args) -> int:
        args = list(args)
        if op in ASSOC:
            flat = []
            todo = args[::-1]
            while todo:
                a = todo.pop()
                if self.ops[a] == op:
                    todo.extend(self.args[a][::-1])
                elif op == "and" and self.ops[a] == "lowbyte":
                    # lowbyte(x) is and(x, 0xff); flatten it like one
                    todo.extend([self.const(0xFF), self.args[a][0]])
                else:
                    flat.append(a)
            args = flat
        rule = getattr(self, "_r_" + op, None)
        if rule is None:
            raise ValueError(f"unknown operator {op}")
        return rule(args)

    def _make(self, op, args, bound):
        return self._new(op, tuple(args), None, bound)

    def _split_consts(self, args):
        consts, rest = [], []
        for a in args:
            (consts if self.ops[a] == "const" else rest).append(a)
        return [self.payload[c] for c in consts], rest

    def _r_add(self, args):
        cs, rest = self._split_consts(args)
        k = sum(cs) & MASK64
        # collect like terms: t*c1 + t*c2 -> t*(c1+c2)
        coef = {}
        order = []
        for a in rest:
            base, c = self._term(a)
            if base not in coef:
                coef[base] = 0
                order.append(base)
            coef[base] += c
        if len(order) != len(rest):
            rest = []
            for base in order:
                c = coef[base] & MASK64
                if c == 1:
                    rest.append(base)
                elif c:
                    rest.append(self.internalize("mullo", [base, self.const(c)]))
            return self.internalize("add", rest + ([self.const(k)] if k else []))
        if k:
            rest.append(self.const(k))
        if not rest:
            return self.const(0)
        if len(rest) == 1:
            return rest[0]
        rest.sort()
        bound = _sat(sum(self.bounds[a] for a in rest))
        return self._make("add", rest, bound)

    def _term(self, a):
        """Split a summand into (base, coefficient)."""
        if self.ops[a] == "mullo":
            ch = self.args[a]
            consts = [c for c in ch if self.ops[c] == "const"]
            if consts:
                others = [c for c in ch if self.ops[c] != "const"]
                base = others[0] if len(others) == 1 else self.internalize("mullo", others)
                return base, self.payload[consts[0]]
        return a, 1

    def _r_addcarry(self, args):
        cs, rest = self._split_consts(args)
        k = sum(cs)
        if not rest:
            return self.const(k >> 64)
        if sum(self.bounds[a] for a in rest) + k <= TOP:
            return self.const(0)
        if k > TOP:
            # a constant at or above 2^64 cannot come from a word; keep exact
            return self._make("addcarry", sorted(rest) + [self.const(k)], (sum(self.bounds[a] for a in rest) + k) >> 64)
        if len(rest) == 1 and k == TOP:
            return self.internalize("nonzero", rest)
        args = sorted(rest + ([self.const(k)] if k else []))
        bound = (sum(self.bounds[a] for a in args)) >> 64
        return self._make("addcarry", args, bound)

    def _sub_parts(self, args):
        a, rest = args[0], list(args[1:])
        return a, rest

    def _r_sub(self, args):
        a, rest = args[0], list(args[1:])
        if self.ops[a] == "sub":
            rest = list(self.args[a][1:]) + rest
            a = self.args[a][0]
        cs, rest = self._split_consts(rest)
        k = sum(cs) & MASK64
        if not rest:
            if not k:
                return a
            return self.internalize("add", [a, self.const((-k) & MASK64)])
        if self.ops[a] == "const":
            if self.payload[a] == TOP and len(rest) == 1 and not k:
                return self.internalize("xor", [rest[0], self.const(TOP)])
        if k:
            rest.append(self.const(k))
        return self._make("sub", [a] + sorted(rest), TOP)

    def _r_subborrow(self, args):
        a, rest = args[0], [r for r in args[1:] if not (self.ops[r] == "const" and self.payload[r] == 0)]
        if not rest:
            return self.const(0)
        if self.ops[a] == "const" and all(self.ops[r] == "const" for r in rest):
            return self.const(int(self.payload[a] < sum(self.payload[r] for r in rest)))
        if sum(self.bounds[r] for r in rest) == 0:
            return self.const(0)
        if len(rest) == 1:
            if self.ops[a] == "const" and self.payload[a] == 0:
                return self.internalize("nonzero", rest)
            if self.ops[rest[0]] == "const" and self.payload[rest[0]] == 1:
                return self.internalize("iszero", [a])
        return self._make("subborrow", [a] + sorted(rest), 1)

    def _r_mullo(self, args):
        cs, rest = self._split_consts(args)
        k = 1
        for c in cs:
            k = (k * c) & MASK64
        if k == 0:
            return self.const(0)
        if k != 1:
            rest.append(self.const(k))
        if not rest:
            return self.const(1)
        if len(rest) == 1:
            return rest[0]
        rest.sort()
        b = 1
        for x in rest:
            b *= self.bounds[x]
        return self._make("mullo", rest, _sat(b))

    def _r_mulhi(self, args):
        a, b = args
        if self.ops[a] == "const" and self.ops[b] == "const":
            return self.const((self.payload[a] * self.payload[b]) >> 64)
        bound = (self.bounds[a] * self.bounds[b]) >> 64
        if bound == 0:
            return self.const(0)
        return self._make("mulhi", sorted(args), bound)

    def _bitwise(self, op, args, fold, unit):
        cs, rest = self._split_consts(args)
        k = unit
        for c in cs:
            k = fold(k, c)
        if op == "xor":
            seen = {}
            for a in rest:
                seen[a] = seen.get(a, 0) ^ 1
            rest = [a for a in seen if seen[a]]
        else:
            rest = list(dict.fromkeys(rest))
        return k, rest

    def _r_and(self, args):
        k, rest = self._bitwise("and", args, int.__and__, TOP)
        if rest:
            # bits above the smallest operand bound are zero in the result
            m = _ones_below(min(self.bounds[a] for a in rest))
            k &= m
            if k == m:
                k = TOP
        if k == 0 or not rest:
            return self.const(k)
        if k != TOP:
            if len(rest) == 1 and k == 0xFF:
                return self.internalize("lowbyte", rest)
            rest.append(self.const(k))
        if len(rest) == 1:
            return rest[0]
        rest.sort()
        return self._make("and", rest, min(self.bounds[a] for a in rest))

    def _r_or(self, args):
        k, rest = self._bitwise("or", args, int.__or__, 0)
        if k == TOP or not rest:
            return self.const(k)
        if k:
            rest.append(self.const(k))
        if len(rest) == 1:
            return rest[0]
        rest.sort()
        return self._make("or", rest, _ones_below(max(self.bounds[a] for a in rest)))

    def _r_xor(self, args):
        k, rest = self._bitwise("xor", args, int.__xor__, 0)
        if not rest:
            return self.const(k)
        if k:
            rest.append(self.const(k))
        if len(rest) == 1:
            return rest[0]
        rest.sort()
        return self._make("xor", rest, _ones_below(max(self.bounds[a] for a in rest)))

    def _r_shl(self, args):
        a, n = args
        if self.ops[n] == "const":
            return self.internalize("mullo", [a, self.const(1 << (self.payload[n] & 63))])
        return self._make("shl", args, TOP)

    def _r_shr(self, args):
        a, n = args
        if self.ops[n] == "const":
            k = self.payload[n] & 63
            if k == 0:
                return a
            if self.ops[a] == "const":
                return self.const(self.payload[a] >> k)
            if self.bounds[a] >> k == 0:
                return self.const(0)
            return self._make("shr", [a, self.const(k)], self.bounds[a] >> k)
        return self._make("shr", args, self.bounds[a])

    def _r_sar(self, args):
        a, n = args
        if self.ops[n] == "const":
            k = self.payload[n] & 63
            if k == 0:
                return a
            if self.ops[a] == "const":
                v = self.payload[a]
                v = v - (1 << 64) if v >> 63 else v
                return self.const((v >> k) & MASK64)
            if self.bounds[a] <= TOP >> 1:
                return self.internalize("shr", [a, self.const(k)])
        return self._make("sar", args, TOP)

    def _r_lowbyte(self, args):
        (a,) = args
        if self.ops[a] == "const":
            return self.const(self.payload[a] & 0xFF)
        if self.bounds[a] <= 0xFF:
            return a
        if self.ops[a] == "setlowbyte":
            return self.internalize("lowbyte", [self.args[a][1]])
        return self._make("lowbyte", [a], 0xFF)

    def _r_setlowbyte(self, args):
        y, v = args
        if self.ops[v] == "lowbyte":
            v = self.args[v][0]
        if self.ops[y] == "setlowbyte":
            y = self.args[y][0]
        if self.bounds[y] <= 0xFF:
            return self.internalize("lowbyte", [v])
        if self.ops[y] == "const" and self.ops[v] == "const":
            return self.const((self.payload[y] & ~0xFF) | (self.payload[v] & 0xFF))
        return self._make("setlowbyte", [y, v], _ones_below(self.bounds[y]) | 0xFF)

    def _r_nonzero(self, args):
        (a,) = args
        if self.ops[a] == "const":
            return self.const(int(self.payload[a] != 0))
        if self.bounds[a] <= 1:
            return a
        return self._make("nonzero", [a], 1)

    def _r_iszero(self, args):
        (a,) = args
        if self.ops[a] == "const":
            return self.const(int(self.payload[a] == 0))
        if self.bounds[a] == 0:
            return self.const(1)
        return self._make("iszero", [a], 1)

    def _r_select(self, args):
        c, a, b = args
        if self.ops[c] == "const":
            return b if self.payload[c] else a
        if a == b:
            return a
        if self.ops[c] == "nonzero":
            return self.internalize("select", [self.args[c][0], a, b])
        if self.ops[c] == "iszero":
            return self.internalize("select", [self.args[c][0], b, a])
        return self._make("select", [c, a, b], max(self.bounds[a], self.bounds[b]))

    def _r_bzhi(self, args):
        a, n = args
        if self.ops[n] == "const":
            k = self.payload[n] & 0xFF
            return a if k >= 64 else self.internalize("and", [a, self.const((1 << k) - 1)])
        return self._make("bzhi", args, self.bounds[a])

    # -- concrete evaluation ----------------------------------------------------
    def evaluate(self, env: dict) -> list:
        """Value of every node given variable values (by name)."""
        vals = []
        for op, ch, pl in zip(self.ops, self.args, self.payload):
            v = [vals[c] for c in ch]
            vals.append(_EVAL[op](v, pl, env))
        return vals


def _prod(v):
    r = 1
    for x in v:
        r = (r * x) & MASK64
    return r


def _xor(v):
    r = 0
    for x in v:
        r ^= x
    return r


def _and(v):
    r = MASK64
    for x in v:
        r &= x
    return r


def _or(v):
    r = 0
    for x in v:
        r |= x
    return r


def _sar(x, k):
    x = x - (1 << 64) if x >> 63 else x
    return (x >> (k & 63)) & MASK64


_EVAL = {
    "const": lambda v, p, e: p,
    "var": lambda v, p, e: e[p],
    "add": lambda v, p, e: sum(v) & MASK64,
    "addcarry": lambda v, p, e: sum(v) >> 64,
    "sub": lambda v, p, e: (v[0] - sum(v[1:])) & MASK64,
    "subborrow": lambda v, p, e: int(v[0] < sum(v[1:])),
    "mullo": lambda v, p, e: _prod(v),
    "mulhi": lambda v, p, e: (v[0] * v[1]) >> 64,
    "and": lambda v, p, e: _and(v),
    "or": lambda v, p, e: _or(v),
    "xor": lambda v, p, e: _xor(v),
    "shl": lambda v, p, e: (v[0] << (v[1] & 63)) & MASK64,
    "shr": lambda v, p, e: v[0] >> (v[1] & 63),
    "sar": lambda v, p, e: _sar(v[0], v[1]),
    "lowbyte": lambda v, p, e: v[0] & 0xFF,
    "setlowbyte": lambda v, p, e: (v[0] & ~0xFF & MASK64) | (v[1] & 0xFF),
    "nonzero": lambda v, p, e: int(v[0] != 0),
    "iszero": lambda v, p, e: int(v[0] == 0),
    "select": lambda v, p, e: v[2] if v[0] else v[1],
    "bzhi": lambda v, p, e: v[0] if (v[1] & 0xFF) >= 64 else v[0] & ((1 << (v[1] & 0xFF)) - 1),
}
