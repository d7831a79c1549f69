"""Random local search over candidates, wrapped in Bet-and-Run.

A mutation changes one thing: where a node sits in the schedule, which
template lowers it, or one operand-order decision.  RLS keeps a mutation when
the measured cost does not get worse.
"""
from __future__ import annotations

import csv
import io
import random
from dataclasses import dataclass, field, replace

from .checker import check_equivalence, differential
from .codegen import (DEFAULT_REGISTERS, Candidate, choice_points, emit, node_templates,
                      random_candidate)
from .dfg import apply_move, build_dfg, scheduling_interval
from .ir import IrProgram
from .machine import CallingConvention
from .measure import MeasureConfig, Objective

KINDS = ("reorder", "template", "decision")


class NoMutationAvailable(Exception):
    pass


class InternalInvariantBroken(Exception):
    pass


@dataclass
class SearchConfig:
    total_budget: int = 20_000
    bet_runs: int = 10
    bet_budget: int = 200
    weights: dict = field(default_factory=lambda: {k: 1.0 for k in KINDS})
    seed: int = 0
    paranoid: bool = False
    registers: tuple = DEFAULT_REGISTERS
    measure: MeasureConfig = field(default_factory=MeasureConfig)

    def __post_init__(self):
        if self.bet_runs < 1 or self.bet_budget < 0 or self.total_budget < 0:
            raise ValueError("budgets must be non-negative and bet_runs at least 1")
        if self.bet_runs * self.bet_budget > self.total_budget:
            raise ValueError("bet_runs * bet_budget exceeds total_budget")
        if set(self.weights) - set(KINDS) or any(w <= 0 for w in self.weights.values()):
            raise ValueError("mutation weights must be positive and keyed by kind")


@dataclass(frozen=True)
class Mutation:
    kind: str
    node: int
    before: object
    after: object

    def undo(self, cand: Candidate) -> Candidate:
        return _set(cand, self.kind, self.node, self.before)


def _set(cand, kind, node, value):
    if kind == "reorder":
        return replace(cand, schedule=value)
    if kind == "template":
        t = list(cand.templates)
        t[node] = value
        return replace(cand, templates=tuple(t))
    d = list(cand.decisions)
    d[node] = value
    return replace(cand, decisions=tuple(d))


class Mutator:
    def __init__(self, prog: IrProgram, weights=None, dfg=None):
        self.prog = prog
        self.dfg = dfg or build_dfg(prog)
        self.templates = [node_templates(a) for a in prog.body]
        self.choices = [choice_points(a) for a in prog.body]
        self.weights = weights or {k: 1.0 for k in KINDS}

    def _movable(self, cand):
        out = []
        for node in range(len(cand.schedule)):
            lo, hi = scheduling_interval(self.dfg, cand.schedule, node)
            if hi > lo:
                out.append((node, lo, hi))
        return out

    def available(self, cand):
        kinds = []
        if self._movable(cand):
            kinds.append("reorder")
        if any(len(t) > 1 for t in self.templates):
            kinds.append("template")
        if any(self.choices):
            kinds.append("decision")
        return kinds

    def mutate(self, cand: Candidate, rng: random.Random):
        kinds = [k for k in self.available(cand) if k in self.weights]
        if not kinds:
            raise NoMutationAvailable("no schedule, template or decision can change")
        kind = rng.choices(kinds, weights=[self.weights[k] for k in kinds])[0]
        if kind == "reorder":
            node, lo, hi = rng.choice(self._movable(cand))
            cur = cand.schedule.index(node)
            # prefer long moves: weight grows linearly with distance
            spots = [p for p in range(lo, hi + 1) if p != cur]
            p = rng.choices(spots, weights=[abs(p - cur) for p in spots])[0]
            after = apply_move(self.dfg, cand.schedule, node, p)
            m = Mutation(kind, node, cand.schedule, after)
        elif kind == "template":
            node = rng.choice([i for i, t in enumerate(self.templates) if len(t) > 1])
            old = cand.templates[node]
            m = Mutation(kind, node, old, rng.choice([t for t in self.templates[node] if t != old]))
        else:
            node = rng.choice([i for i, c in enumerate(self.choices) if c])
            old = cand.decisions[node]
            j = rng.randrange(len(old))
            new = list(old)
            new[j] = rng.choice([v for v in range(self.choices[node][j]) if v != old[j]])
            m = Mutation(kind, node, old, tuple(new))
        return _set(cand, m.kind, m.node, m.after), m


def mutate(prog: IrProgram, cand: Candidate, rng: random.Random, mutator: Mutator | None = None):
    return (mutator or Mutator(prog)).mutate(cand, rng)


def initial_candidate(prog: IrProgram, rng: random.Random) -> Candidate:
    return random_candidate(prog, rng)


# --- tracing -------------------------------------------------------------------------

@dataclass
class TraceRow:
    run: str
    step: int
    kind: str
    pa: float
    pb: float
    accepted: bool
    cost: float


@dataclass
class SearchTrace:
    rows: list = field(default_factory=list)

    def accepted_costs(self, run=None):
        return [r.cost for r in self.rows if r.accepted and (run is None or r.run == run)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["run", "step", "kind", "PA", "PB", "accepted", "cost"])
        for r in self.rows:
            w.writerow([r.run, r.step, r.kind, f"{r.pa:g}", f"{r.pb:g}", int(r.accepted), f"{r.cost:g}"])
        return buf.getvalue()


# --- evaluation ------------------------------------------------------------------------

class Evaluator:
    """Emits and loads candidates once, then compares them with the objective."""

    def __init__(self, prog: IrProgram, cc: CallingConvention | None = None,
                 objective: Objective | None = None, registers=DEFAULT_REGISTERS):
        self.prog = prog
        self.cc = cc or CallingConvention.for_program(prog)
        self.objective = objective or Objective()
        self.registers = tuple(registers)
        self._asm = {}
        self._handle = {}

    def asm(self, cand):
        a = self._asm.get(cand)
        if a is None:
            a = self._asm[cand] = emit(self.prog, cand, self.cc, self.registers)
        return a

    def handle(self, cand):
        h = self._handle.get(cand)
        if h is None:
            h = self._handle[cand] = self.objective.timer.load(self.asm(cand))
        return h

    def compare(self, a, b, rng):
        return self.objective.compare(self.handle(a), self.handle(b), rng)

    def cost(self, cand, rng):
        return self.objective.cost(self.handle(cand), rng)


def rls_run(prog: IrProgram, cand0: Candidate, budget: int, evaluator: Evaluator,
            rng: random.Random, trace: SearchTrace | None = None, run: str = "0",
            mutator: Mutator | None = None, paranoid: bool = False):
    """Mutate ``budget`` times, keeping each mutation that is not slower."""
    trace = trace if trace is not None else SearchTrace()
    mutator = mutator or Mutator(prog)
    cur = cand0
    for step in range(budget):
        try:
            new, m = mutator.mutate(cur, rng)
        except NoMutationAvailable:
            break
        if paranoid:
            cex = differential(prog, evaluator.asm(new), evaluator.cc, n=16, seed=step)
            if cex is not None:
                raise InternalInvariantBroken(f"mutated candidate miscompiles: {cex}")
        pa, pb = evaluator.compare(cur, new, rng)
        ok = pb <= pa
        if ok:
            cur = new
        trace.rows.append(TraceRow(run, step, m.kind, pa, pb, ok, pb if ok else pa))
    return cur, trace


@dataclass
class SearchResult:
    candidate: Candidate
    asm: object
    verdict: object
    initial_cost: float
    final_cost: float
    bet_costs: list
    best_bet: int
    trace: SearchTrace


def bet_and_run(prog: IrProgram, config: SearchConfig | None = None,
                evaluator: Evaluator | None = None) -> SearchResult:
    config = config or SearchConfig()
    evaluator = evaluator or Evaluator(prog, registers=config.registers)
    mutator = Mutator(prog, config.weights)
    trace = SearchTrace()
    finals, costs, init_costs = [], [], []
    for i in range(config.bet_runs):
        rng = random.Random(f"{config.seed}/{i}")
        c0 = initial_candidate(prog, rng)
        v = check_equivalence(prog, evaluator.asm(c0), evaluator.cc)
        if not v.accepted:
            raise InternalInvariantBroken(f"initial candidate of bet {i} rejected: {v.reason}")
        init_costs.append(evaluator.cost(c0, rng))
        c, _ = rls_run(prog, c0, config.bet_budget, evaluator, rng, trace, str(i), mutator,
                       config.paranoid)
        finals.append(c)
        costs.append(evaluator.cost(c, rng))
    best = min(range(len(costs)), key=lambda i: (costs[i], i))
    rng = random.Random(f"{config.seed}/final")
    rest = config.total_budget - config.bet_runs * config.bet_budget
    cand, _ = rls_run(prog, finals[best], rest, evaluator, rng, trace, "final", mutator,
                      config.paranoid)
    asm = evaluator.asm(cand)
    verdict = check_equivalence(prog, asm, evaluator.cc)
    if not verdict.accepted:
        raise InternalInvariantBroken(f"final candidate rejected by the checker: {verdict.reason}")
    return SearchResult(cand, asm, verdict, init_costs[best], evaluator.cost(cand, rng), costs,
                        best, trace)
