"""Def-use graph over IR assignments, topological-order sampling and moves."""
from __future__ import annotations

from dataclasses import dataclass

from .ir import IrProgram


class InvalidMove(Exception):
    pass


@dataclass(frozen=True)
class DataFlowGraph:
    n: int
    edges: tuple  # sorted (producer, consumer) pairs, deduplicated
    preds: tuple  # preds[i] = tuple of producer indices
    succs: tuple
    labels: tuple = ()

    def is_valid(self, order) -> bool:
        if sorted(order) != list(range(self.n)):
            return False
        pos = {v: i for i, v in enumerate(order)}
        return all(pos[p] < pos[c] for p, c in self.edges)


def build_dfg(prog: IrProgram) -> DataFlowGraph:
    owner = {}
    edges = set()
    for i, asn in enumerate(prog.body):
        for name in asn.uses():
            if name in owner:
                edges.add((owner[name], i))
        for name in asn.defs():
            owner[name] = i
    n = len(prog.body)
    preds = [[] for _ in range(n)]
    succs = [[] for _ in range(n)]
    for p, c in sorted(edges):
        preds[c].append(p)
        succs[p].append(c)
    labels = tuple(",".join(a.defs()) or f"#{i}" for i, a in enumerate(prog.body))
    return DataFlowGraph(n, tuple(sorted(edges)), tuple(map(tuple, preds)),
                         tuple(map(tuple, succs)), labels)


def sample_topological_order(dfg: DataFlowGraph, rng) -> tuple:
    """Repeatedly pick uniformly among ready nodes (ready list kept sorted so
    the draw only depends on the rng state)."""
    indeg = [len(p) for p in dfg.preds]
    ready = [i for i in range(dfg.n) if indeg[i] == 0]
    order = []
    while ready:
        v = ready.pop(rng.randrange(len(ready)))
        order.append(v)
        for s in dfg.succs[v]:
            indeg[s] -= 1
            if indeg[s] == 0:
                ready.append(s)
        ready.sort()
    return tuple(order)


def scheduling_interval(dfg: DataFlowGraph, sched, node) -> tuple:
    pos = {v: i for i, v in enumerate(sched)}
    lo = max((pos[p] + 1 for p in dfg.preds[node]), default=0)
    hi = min((pos[s] - 1 for s in dfg.succs[node]), default=len(sched) - 1)
    return lo, hi


def apply_move(dfg: DataFlowGraph, sched, node, new_pos) -> tuple:
    lo, hi = scheduling_interval(dfg, sched, node)
    if not lo <= new_pos <= hi:
        raise InvalidMove(f"position {new_pos} outside [{lo}, {hi}] for node {node}")
    order = [v for v in sched if v != node]
    order.insert(new_pos, node)
    return tuple(order)


def to_dot(dfg: DataFlowGraph, prog: IrProgram | None = None) -> str:
    lines = ["digraph dfg {"]
    for i in range(dfg.n):
        label = dfg.labels[i] if dfg.labels else str(i)
        if prog is not None:
            label = f"{prog.body[i].kind}\\n{label}"
        lines.append(f'  n{i} [label="{label}"];')
    for p, c in dfg.edges:
        edge = ""
        if prog is not None:
            flow = sorted(set(prog.body[p].defs()) & set(prog.body[c].uses()))
            edge = f' [label="{",".join(flow)}"]'
        lines.append(f"  n{p} -> n{c}{edge};")
    lines.append("}")
    return "\n".join(lines) + "\n"
