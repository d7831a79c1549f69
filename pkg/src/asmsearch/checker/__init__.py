"""Translation validation: IR and assembly are executed symbolically into one
E-graph and accepted when every output slot holds the IR's output node."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from ..ir import IrProgram, interpret_batch, random_inputs
from ..machine import (AsmProgram, BatchUnsupported, CallingConvention, MachineError,
                       run_batch, run_function)
from .egraph import EGraph
from .symex import (NonConstantAddress, UnsupportedForm, callee_saved_ok, symex_asm,
                    symex_ir)


@dataclass
class Verdict:
    accepted: bool
    reason: str
    status: str  # Proven | Disproven | Unknown
    counterexample: dict | None = None
    node_count: int = 0
    elapsed_ms: float = 0.0

    def to_dict(self, timing=True):
        d = asdict(self)
        if self.counterexample is None:
            del d["counterexample"]
        if not timing:
            del d["elapsed_ms"]
        return d

    def to_json(self, timing=True):
        return json.dumps(self.to_dict(timing), indent=2, sort_keys=True)


def differential(prog: IrProgram, asm: AsmProgram, cc: CallingConvention, n: int = 64, seed: int = 0):
    """Compare the IR interpreter with the machine on ``n`` random inputs.
    Returns None when all agree, else a counterexample dict."""
    rng = np.random.default_rng(seed)
    xs = random_inputs(prog, rng, n)
    want = interpret_batch(prog, xs)
    try:
        got = run_batch(asm, cc, xs)
    except BatchUnsupported:
        got = None
    except MachineError as e:
        return _cex(prog, xs[:, 0], want[:, 0], None, f"{type(e).__name__}: {e}")
    if got is None:
        for j in range(n):
            try:
                out = run_function(asm, cc, [int(v) for v in xs[:, j]])
            except MachineError as e:
                return _cex(prog, xs[:, j], want[:, j], None, f"{type(e).__name__}: {e}")
            if out != [int(v) for v in want[:, j]]:
                return _cex(prog, xs[:, j], want[:, j], out)
        return None
    bad = np.nonzero((got != want).any(axis=0))[0]
    if len(bad):
        j = int(bad[0])
        return _cex(prog, xs[:, j], want[:, j], [int(v) for v in got[:, j]])
    return None


def _cex(prog, x, want, got, error=None):
    d = {"inputs": {p.name: int(v) for p, v in zip(prog.params, x)},
         "expected": [int(v) for v in want]}
    if got is not None:
        d["actual"] = got
    if error:
        d["error"] = error
    return d


def check_equivalence(prog: IrProgram, asm: AsmProgram, cc: CallingConvention | None = None,
                      fallback_inputs: int = 64, seed: int = 0) -> Verdict:
    t0 = time.perf_counter()
    cc = cc or CallingConvention.for_program(prog)
    eg = EGraph()

    def done(ok, reason, status, cex=None):
        return Verdict(ok, reason, status, cex, len(eg), round((time.perf_counter() - t0) * 1e3, 3))

    try:
        irs = symex_ir(prog, eg)
        st = symex_asm(asm, cc, eg, irs.inputs)
    except (MachineError, NonConstantAddress, UnsupportedForm) as e:
        cex = differential(prog, asm, cc, fallback_inputs, seed) if fallback_inputs else None
        return done(False, f"{type(e).__name__}: {e}", "Disproven" if cex else "Unknown", cex)

    problems = []
    out_base = st.init_regs[cc.out_reg]
    for k, node in enumerate(irs.outputs):
        got = st.mem.get((out_base, 8 * k))
        if got is None:
            problems.append(f"output slot {k} never written")
        elif got != node:
            problems.append(f"output slot {k}: assembly computes {eg.expr(got)} "
                            f"but IR computes {eg.expr(node)}")
    clobbered = callee_saved_ok(st)
    if clobbered:
        problems.append(f"callee-saved registers not restored: {', '.join(clobbered)}")
    if problems:
        cex = differential(prog, asm, cc, fallback_inputs, seed) if fallback_inputs else None
        return done(False, "; ".join(problems), "Disproven" if cex else "Unknown", cex)
    return done(True, "all outputs match", "Proven")


__all__ = ["Verdict", "check_equivalence", "differential", "EGraph", "symex_ir", "symex_asm"]
