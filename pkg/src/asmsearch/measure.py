"""Objective-function evaluation: batched, randomly interleaved,
median-of-batches comparison of two functions over a pluggable timer.

The default ``SimTimer`` charges a fixed latency per instruction, so the
search loop stays fast and reproducible.  ``NativeTimer`` assembles the code
with the system compiler and reads the time-stamp counter; it is optional and
hardware dependent.
"""
from __future__ import annotations

import ctypes
import os
import random
import shutil
import statistics
import subprocess
import sys
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .machine import AsmProgram, CallingConvention, Mem, render_function

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib


class UnknownOpcode(Exception):
    pass


DEFAULT_LATENCY = {
    "mov": 1, "movzx": 1, "lea": 1, "xchg": 1,
    "and": 1, "or": 1, "xor": 1, "test": 1, "clc": 1,
    "add": 1, "sub": 1, "cmp": 1, "inc": 1, "dec": 1,
    "shl": 1, "shr": 1, "sar": 1, "shlx": 1, "shrx": 1, "shrd": 3, "bzhi": 1,
    "setc": 1, "seto": 1, "cmovc": 1, "cmovb": 1, "cmovnz": 1,
    "adc": 3, "sbb": 3, "adcx": 3, "adox": 3,
    "mulx": 4, "mul": 4, "imul": 4,
}


@dataclass
class SimCostModel:
    latency: dict = field(default_factory=lambda: dict(DEFAULT_LATENCY))
    mem_surcharge: int = 2

    def cost(self, asm: AsmProgram) -> int:
        total = 0
        for ins in asm:
            lat = self.latency.get(ins.op)
            if lat is None:
                raise UnknownOpcode(ins.op)
            total += lat
            if ins.op != "lea":
                total += self.mem_surcharge * sum(isinstance(a, Mem) for a in ins.args)
        return total

    @classmethod
    def from_text(cls, text: str) -> "SimCostModel":
        """Parse ``opcode = cycles`` lines; ``memory = n`` sets the surcharge."""
        table = tomllib.loads(text)
        m = cls()
        for k, v in table.items():
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise ValueError(f"cost for {k!r} must be a non-negative integer")
            if k in ("memory", "mem_surcharge"):
                m.mem_surcharge = v
            else:
                m.latency[k] = v
        return m

    @classmethod
    def from_file(cls, path) -> "SimCostModel":
        with open(path, encoding="utf-8") as f:
            return cls.from_text(f.read())


def sim_cost(model: SimCostModel, asm: AsmProgram) -> int:
    return model.cost(asm)


@dataclass
class MeasureConfig:
    cyclegoal: int = 10_000
    nob: int = 31
    seed: int = 0

    def __post_init__(self):
        if self.nob < 1 or self.nob % 2 == 0:
            raise ValueError("nob must be a positive odd number")
        if self.cyclegoal <= 0:
            raise ValueError("cyclegoal must be positive")


# --- timers ------------------------------------------------------------------------

class Timer:
    """``load`` turns an assembly program into a handle; the handle is then
    timed for ``n`` back-to-back calls."""

    def load(self, asm: AsmProgram):
        raise NotImplementedError

    def count_cycles_for_n_runs(self, handle, n: int) -> int:
        raise NotImplementedError


@dataclass(frozen=True)
class SimHandle:
    cost: int


class SimTimer(Timer):
    def __init__(self, model: SimCostModel | None = None):
        self.model = model or SimCostModel()

    def load(self, asm):
        return SimHandle(self.model.cost(asm))

    def count_cycles_for_n_runs(self, handle, n):
        return handle.cost * n


_HARNESS = r"""
#include <stdint.h>
#include <x86intrin.h>
typedef void (*fn_t)(uint64_t *, uint64_t *, uint64_t *, uint64_t *, uint64_t *, uint64_t *);
extern void asmsearch_fn(uint64_t *, uint64_t *, uint64_t *, uint64_t *, uint64_t *, uint64_t *);
uint64_t asmsearch_bench(uint64_t n, uint64_t *out, uint64_t **in) {
    uint64_t t0 = __rdtsc();
    for (uint64_t i = 0; i < n; i++)
        asmsearch_fn(out, in[0], in[1], in[2], in[3], in[4]);
    return __rdtsc() - t0;
}
"""


class NativeTimer(Timer):
    """Times real execution with rdtsc.  Needs gcc and an x86-64 host that
    supports every instruction emitted (adx and bmi2 for adcx/adox/mulx).
    Pinning the core and fixing the frequency is left to the caller."""

    def __init__(self, cc: CallingConvention, cc_bin: str | None = None, seed: int = 0):
        self.cc = cc
        self.gcc = cc_bin or shutil.which("gcc") or shutil.which("cc")
        if self.gcc is None:
            raise RuntimeError("no C compiler found for the native timer")
        self.dir = tempfile.mkdtemp(prefix="asmsearch-")
        rng = np.random.default_rng(seed)
        self._in = [(ctypes.c_uint64 * max(1, size))(*map(int, rng.integers(0, 2**63, max(1, size),
                                                                           dtype=np.uint64)))
                    for size in cc.input_sizes]
        while len(self._in) < 5:
            self._in.append((ctypes.c_uint64 * 1)(0))
        self._out = (ctypes.c_uint64 * max(1, cc.output_size))()
        self._ptrs = (ctypes.POINTER(ctypes.c_uint64) * 5)(*[ctypes.cast(a, ctypes.POINTER(ctypes.c_uint64))
                                                             for a in self._in])
        self._count = 0

    def load(self, asm):
        self._count += 1
        stem = os.path.join(self.dir, f"f{self._count}")
        with open(stem + ".s", "w") as f:
            f.write(render_function(asm, "asmsearch_fn"))
        with open(stem + ".c", "w") as f:
            f.write(_HARNESS)
        subprocess.run([self.gcc, "-O2", "-shared", "-fPIC", "-o", stem + ".so", stem + ".c", stem + ".s"],
                       check=True, capture_output=True)
        lib = ctypes.CDLL(stem + ".so")
        lib.asmsearch_bench.restype = ctypes.c_uint64
        lib.asmsearch_bench.argtypes = [ctypes.c_uint64, ctypes.POINTER(ctypes.c_uint64),
                                        ctypes.POINTER(ctypes.POINTER(ctypes.c_uint64))]
        return lib

    def count_cycles_for_n_runs(self, handle, n):
        return int(handle.asmsearch_bench(n, self._out, self._ptrs))


# --- measurement -------------------------------------------------------------------

def calibrate_batch_size(timer: Timer, handle, cyclegoal: int = 10_000, bs: int = 1) -> int:
    """Scale ``bs`` so one batch takes roughly ``cyclegoal`` cycles."""
    cycles = timer.count_cycles_for_n_runs(handle, bs)
    if cycles <= 0:
        return max(1, bs * 2)
    return max(1, round(bs * cyclegoal / cycles))


def measure_pair(timer: Timer, a, b, bs: int, nob: int, rng: random.Random):
    """Measure ``nob`` batches of each handle in a random interleaving and
    return the two medians."""
    if nob % 2 == 0:
        raise ValueError("nob must be odd")
    order = [0] * nob + [1] * nob
    rng.shuffle(order)
    samples = ([], [])
    handles = (a, b)
    for f in order:
        samples[f].append(timer.count_cycles_for_n_runs(handles[f], bs))
    return statistics.median(samples[0]), statistics.median(samples[1])


def batch_medians(samples) -> np.ndarray:
    """Row-wise medians of a (trials, nob) sample matrix."""
    return np.median(np.asarray(samples), axis=1)


class Objective:
    """Ties a timer to a config; keeps the batch size calibrated between calls."""

    def __init__(self, timer: Timer | None = None, config: MeasureConfig | None = None):
        self.timer = timer or SimTimer()
        self.config = config or MeasureConfig()
        self.bs = 1

    def compare(self, ha, hb, rng):
        """(cycles per call of A, cycles per call of B)."""
        self.bs = calibrate_batch_size(self.timer, ha, self.config.cyclegoal, self.bs)
        pa, pb = measure_pair(self.timer, ha, hb, self.bs, self.config.nob, rng)
        return pa / self.bs, pb / self.bs

    def cost(self, h, rng):
        pa, _ = self.compare(h, h, rng)
        return pa
