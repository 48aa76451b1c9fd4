"""A deliberately simple rule-based fuser used as the comparison baseline.

Rules: a fusion grows from its consumer end toward producers and only absorbs
light elementwise and shape ops. Reductions and expensive ops can end a fusion
(as its consumer-most op) but are never pulled in as producers, so a reduction
feeding further work always splits the graph.
"""

from __future__ import annotations

from dataclasses import dataclass

from .graph_ir import CompGraph, FusionPattern, FusionPlan, OpClass, contraction_creates_cycle

ABSORBABLE = (OpClass.LIGHT, OpClass.SHAPE)


@dataclass(frozen=True)
class BaselineRuleFuser:
    absorbable: tuple[OpClass, ...] = ABSORBABLE

    def run(self, g: CompGraph) -> FusionPlan:
        fused: set[str] = set()
        patterns = []
        for v in reversed(g.topo_order):
            if v in fused or not g.fusable(v):
                continue
            members = {v}
            stack = list(g[v].operands)
            while stack:
                u = stack.pop(0)
                if u in members or u in fused or not g.fusable(u) or g.op_class(u) not in self.absorbable:
                    continue
                trial = members | {u}
                if contraction_creates_cycle(g, trial):
                    continue
                members = trial
                stack.extend(g[u].operands)
            fused |= members
            patterns.append(FusionPattern(frozenset(members), g.sort_ids(members)[0]))
        patterns.sort(key=lambda p: min(g.topo_index[x] for x in p.vertices))
        return FusionPlan(patterns)


def run_baseline(g: CompGraph) -> FusionPlan:
    return BaselineRuleFuser().run(g)
