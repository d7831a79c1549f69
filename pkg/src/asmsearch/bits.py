"""Word-level helpers shared by the interpreters.

Scalar helpers work on Python ints; the ``v*`` helpers work lane-wise on
numpy ``uint64`` arrays and are used by the batch interpreters.
"""
import numpy as np

MASK64 = (1 << 64) - 1
U64 = np.uint64
_LO32 = U64(0xFFFFFFFF)
_S32 = U64(32)


def mask(width: int) -> int:
    return (1 << width) - 1


def parity8(x: int) -> int:
    """PF: 1 when the low byte has an even number of set bits."""
    return 1 - (bin(x & 0xFF).count("1") & 1)


def vconst(value: int, n: int) -> np.ndarray:
    return np.full(n, value & MASK64, dtype=U64)


def vadd(a, b, c):
    """(sum, carry) of a + b + c where c is a 0/1 lane array."""
    s1 = a + b
    c1 = s1 < a
    s2 = s1 + c
    c2 = s2 < s1
    return s2, (c1 | c2).astype(U64)


def vsub(a, b, c):
    """(difference, borrow) of a - b - c."""
    d1 = a - b
    b1 = a < b
    d2 = d1 - c
    b2 = d1 < c
    return d2, (b1 | b2).astype(U64)


def vmul(a, b):
    """(hi, lo) of the full 128-bit product."""
    a0, a1 = a & _LO32, a >> _S32
    b0, b1 = b & _LO32, b >> _S32
    p00 = a0 * b0
    p01 = a0 * b1
    p10 = a1 * b0
    p11 = a1 * b1
    mid = (p00 >> _S32) + (p01 & _LO32) + (p10 & _LO32)
    hi = p11 + (p01 >> _S32) + (p10 >> _S32) + (mid >> _S32)
    return hi, a * b


def vbool(x) -> np.ndarray:
    return x.astype(U64)
