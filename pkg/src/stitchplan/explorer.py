"""Fusion-plan search: candidate patterns per vertex by approximate dynamic programming,
remote packing of disconnected patterns, beam-search plan assembly and final selection.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .device_model import CostModels, DeviceSpec, LaunchDims, occupancy, warp_latency, wave_count, mem_transfer_saving
from .errors import InfeasibleKernel, InfeasiblePattern, StitchError
from .graph_ir import (
    CompGraph,
    FusionPattern,
    FusionPlan,
    OpClass,
    OpKind,
    contraction_creates_cycle,
    is_connected,
)
from .planner import KernelPlan, plan_kernel, probe_plannable
from .schedules import shared_slots

log = logging.getLogger(__name__)

VIRTUAL = "<h>"


@dataclass(frozen=True)
class DeltaScore:
    t_reduced_mem: float
    t_reduced_calls: float
    t_penalty: float
    f: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "f", self.t_reduced_mem + self.t_reduced_calls - self.t_penalty)


@dataclass(frozen=True)
class CandidatePatternSet:
    vertex: str
    patterns: tuple[FusionPattern, ...] = ()

    def __len__(self) -> int:
        return len(self.patterns)

    def __iter__(self):
        return iter(self.patterns)


@dataclass(frozen=True)
class BeamState:
    patterns: tuple[FusionPattern, ...] = ()
    covered: frozenset[str] = frozenset()
    score: float = 0.0

    def plan(self) -> FusionPlan:
        return FusionPlan(list(self.patterns))


# -- delta evaluator ------------------------------------------------------------------------------


def internal_edges(g: CompGraph, verts: frozenset[str]) -> list[tuple[str, str]]:
    """Distinct def-use edges with both ends inside ``verts``."""
    out = set()
    for v in verts:
        for o in g[v].operands:
            if o in verts and o != v:
                out.add((o, v))
    return sorted(out, key=lambda e: (g.position[e[0]], g.position[e[1]]))


def _simplified_launch(g: CompGraph, verts: frozenset[str], dev: DeviceSpec, models: CostModels) -> LaunchDims:
    block = min(models.delta_block, dev.max_threads_per_block)
    extent = max(g[v].shape.element_count for v in verts)
    grid = max(1, min(models.grid_cap_factor * dev.sm_count, -(-extent // block)))
    return LaunchDims(grid, block)


def simplified_latency(g: CompGraph, verts: frozenset[str], dev: DeviceSpec, models: CostModels) -> float:
    """Latency of one kernel computing ``verts`` under the cheap model.

    Registers are fixed, the launch uses a fixed block size, shared memory is the
    largest single requirement, and every op runs under a thread-strided mapping.
    """
    ld = _simplified_launch(g, verts, dev, models)
    T = ld.threads()
    hist: dict[str, float] = {}

    def add(kind: str, n: float) -> None:
        hist[kind] = hist.get(kind, 0) + n

    shmem = 0
    inputs = set()
    for v in verts:
        node = g[v]
        cls = g.op_class(v)
        if cls is OpClass.REDUCTION:
            add("reduce_step", -(-g[node.operands[0]].shape.element_count // T))
        else:
            add(node.kind.value, -(-node.shape.element_count // T))
        in_pattern_consumers = [c for c in g.consumers[v] if c in verts]
        if len(in_pattern_consumers) < len(g.consumers[v]) or v in g.outputs or not g.consumers[v]:
            add("global_store", -(-node.shape.element_count // T))
        if cls in (OpClass.REDUCTION, OpClass.EXPENSIVE) and in_pattern_consumers:
            add("shared_store", -(-node.shape.element_count // T))
            add("barrier", 1)
            for c in in_pattern_consumers:
                add("shared_load", -(-g[c].shape.element_count // T))
            req = shared_slots(node.shape.element_count, ld) * node.shape.dtype.itemsize
            if cls is OpClass.REDUCTION:
                req += (ld.block // dev.warp_size) * 4
            shmem = max(shmem, req)
        for o in node.operands:
            if o not in verts and g[o].kind is not OpKind.CONSTANT:
                inputs.add(o)
    for o in inputs:
        add("global_load", -(-g[o].shape.element_count // T))
    shmem = min(shmem, dev.shared_mem_per_block_limit)
    occ = occupancy(ld, models.delta_fixed_registers, shmem, dev)
    return wave_count(ld.warps(dev), occ, dev, ceil=not models.fractional_waves) * warp_latency(hist, models.cpi)


def delta_evaluate(p: FusionPattern | Iterable[str], g: CompGraph, dev: DeviceSpec, models: CostModels,
                   singleton_cache: dict[str, float] | None = None) -> DeltaScore:
    """Estimated benefit of fusing ``p`` compared with running its ops as separate kernels."""
    verts = p.vertices if isinstance(p, FusionPattern) else frozenset(p)
    t_mem = 0.0
    for u, _ in internal_edges(g, verts):
        tr = "global_to_shared" if g.op_class(u) is OpClass.REDUCTION else "global_to_register"
        t_mem += mem_transfer_saving(g[u].shape.nbytes, tr, models.mem)
    t_calls = (len(verts) - 1) * models.context_switch_cycles
    if len(verts) == 1:
        return DeltaScore(0.0, 0.0, 0.0)
    cache = singleton_cache if singleton_cache is not None else {}
    alone = 0.0
    for v in verts:
        if v not in cache:
            cache[v] = simplified_latency(g, frozenset([v]), dev, models)
        alone += cache[v]
    fused = simplified_latency(g, verts, dev, models)
    # Only a slowdown counts as a penalty; a faster fused kernel is not a gain here.
    return DeltaScore(t_mem, t_calls, max(0.0, fused - alone))


# -- candidate generation -------------------------------------------------------------------------


@dataclass
class SearchContext:
    """Per-graph search state: caches and call counters."""

    g: CompGraph
    dev: DeviceSpec
    models: CostModels
    k: int = 3
    delta_calls: int = 0
    probe_calls: int = 0
    scores: dict[frozenset[str], DeltaScore] = field(default_factory=dict)
    valid: dict[frozenset[str], bool] = field(default_factory=dict)
    singletons: dict[str, float] = field(default_factory=dict)

    def score(self, verts: frozenset[str]) -> DeltaScore:
        if verts not in self.scores:
            self.delta_calls += 1
            self.scores[verts] = delta_evaluate(verts, self.g, self.dev, self.models, self.singletons)
        return self.scores[verts]

    def admissible(self, verts: frozenset[str]) -> bool:
        if verts not in self.valid:
            ok = len(verts) <= self.models.max_pattern_size
            if ok and len(verts) > 1:
                ok = not contraction_creates_cycle(self.g, verts)
            if ok:
                self.probe_calls += 1
                ok = probe_plannable(verts, self.g, self.dev, self.models)
            self.valid[verts] = ok
        return self.valid[verts]


def _rank_key(g: CompGraph, verts: frozenset[str], f: float) -> tuple:
    return (-f, len(verts), tuple(sorted(g.position[v] for v in verts)))


def _top_k(ctx: SearchContext, unions: Iterable[frozenset[str]], k: int) -> list[frozenset[str]]:
    scored = {}
    for u in unions:
        if not u or u in scored or not ctx.admissible(u):
            continue
        scored[u] = ctx.score(u).f
    return sorted(scored, key=lambda u: _rank_key(ctx.g, u, scored[u]))[:k]


def _reduce(ctx: SearchContext, base: frozenset[str], consumer_sets: Sequence[Sequence[frozenset[str]]],
            k: int) -> list[frozenset[str]]:
    if len(consumer_sets) <= 2:
        options = [[frozenset()] + list(cs) for cs in consumer_sets]
        unions = (base.union(*choice) for choice in itertools.product(*options))
        return _top_k(ctx, unions, k)
    mid = len(consumer_sets) // 2
    left = _reduce(ctx, base, consumer_sets[:mid], k)
    right = _reduce(ctx, base, consumer_sets[mid:], k)
    return _top_k(ctx, (a | b for a in left for b in right), k)


def _as_set(ctx: SearchContext, vertex: str, tops: list[frozenset[str]], remote: bool = False) -> CandidatePatternSet:
    pats = []
    for u in tops:
        s = ctx.score(u)
        producer = vertex if vertex in u else ctx.g.sort_ids(u)[0]
        pats.append(FusionPattern(u, producer, s.f, remote=remote and not is_connected(ctx.g, u)))
    return CandidatePatternSet(vertex, tuple(pats))


def pattern_reduction(vertex: str, consumer_sets: Sequence[CandidatePatternSet], k: int, g: CompGraph,
                      dev: DeviceSpec, models: CostModels, ctx: SearchContext | None = None) -> CandidatePatternSet:
    """Top-k patterns whose producer is ``vertex``, built from its consumers' candidates.

    Consumers are split in halves until at most two remain; a leaf enumerates every
    choice of one candidate (or none) per consumer, and siblings merge their top-k.
    """
    ctx = ctx or SearchContext(g, dev, models, k)
    if not g.fusable(vertex):
        return CandidatePatternSet(vertex)
    sets = [[p.vertices for p in cs] for cs in consumer_sets if len(cs)]
    tops = _reduce(ctx, frozenset([vertex]), sets, k)
    return _as_set(ctx, vertex, tops)


def explore_candidates(g: CompGraph, k: int, dev: DeviceSpec, models: CostModels,
                       ctx: SearchContext | None = None) -> dict[str, CandidatePatternSet]:
    ctx = ctx or SearchContext(g, dev, models, k)
    out: dict[str, CandidatePatternSet] = {}
    for v in reversed(g.topo_order):
        consumer_sets = [out[c] for c in g.consumers[v] if g.fusable(c)]
        out[v] = pattern_reduction(v, consumer_sets, k, g, dev, models, ctx)
    return out


def entry_vertices(g: CompGraph) -> list[str]:
    """Fusable vertices with no fusable producer: the roots of the candidate forest."""
    return [v for v in g.topo_order if g.fusable(v) and not any(g.fusable(o) for o in g[v].operands)]


def remote_fusion(g: CompGraph, candidates: Mapping[str, CandidatePatternSet], k: int, dev: DeviceSpec,
                  models: CostModels, ctx: SearchContext | None = None) -> CandidatePatternSet:
    """Candidates for a virtual producer feeding every entry vertex, with the virtual vertex removed.

    Unions that merely repeat some vertex's own candidate are dropped. The rest
    combine patterns grown from different entry vertices: either they meet at a
    shared consumer, or they are disconnected and flagged ``remote`` (packed side
    by side into one kernel).
    """
    ctx = ctx or SearchContext(g, dev, models, k)
    entries = entry_vertices(g)
    sets = [[p.vertices for p in candidates[v]] for v in entries if len(candidates.get(v, ()))]
    if len(sets) < 2:
        return CandidatePatternSet(VIRTUAL)
    tops = _reduce(ctx, frozenset(), sets, k)
    known = {p.vertices for cs in candidates.values() for p in cs}
    tops = [u for u in tops if u not in known]
    return _as_set(ctx, VIRTUAL, tops, remote=True)


# -- plan assembly --------------------------------------------------------------------------------


def _plan_has_cycle(g: CompGraph, patterns: Sequence[FusionPattern], new: FusionPattern) -> bool:
    """Whether adding ``new`` to the contracted plan graph closes a cycle through it."""
    owner: dict[str, int] = {}
    for i, p in enumerate(patterns):
        for v in p.vertices:
            owner[v] = i
    members = [p.vertices for p in patterns]
    topo = g.topo_index
    hi = max(topo[v] for v in new.vertices)
    seen: set[str] = set()
    seen_groups: set[int] = set()
    stack = [c for v in new.vertices for c in g.consumers[v] if c not in new.vertices]
    while stack:
        u = stack.pop()
        if u in new.vertices:
            return True
        if u in seen:
            continue
        seen.add(u)
        nxt = [u]
        gi = owner.get(u)
        if gi is not None and gi not in seen_groups:
            seen_groups.add(gi)
            nxt = list(members[gi])
        for w in nxt:
            seen.add(w)
            for c in g.consumers[w]:
                if c in new.vertices:
                    return True
                low = topo[c] <= hi or (owner.get(c) is not None
                                        and min(topo[x] for x in members[owner[c]]) <= hi)
                if c not in seen and low:
                    stack.append(c)
    return False


def beam_search_plan(g: CompGraph, all_candidates: Mapping[str, CandidatePatternSet], width: int,
                     dev: DeviceSpec | None = None, models: CostModels | None = None,
                     remote: CandidatePatternSet | None = None, reverse: bool = False) -> list[FusionPlan]:
    """Keep the ``width`` best partial plans while offering each vertex's candidates in topological order.

    Only candidates with positive score are appended. Remote candidates are offered first.
    ``reverse`` walks consumers before producers instead.
    """
    order: list[CandidatePatternSet] = []
    if remote is not None and len(remote):
        order.append(remote)
    walk = reversed(g.topo_order) if reverse else g.topo_order
    order += [all_candidates[v] for v in walk if v in all_candidates and len(all_candidates[v])]
    states = [BeamState()]
    for cset in order:
        grown = list(states)
        for s in states:
            for p in cset:
                if p.score <= 0 or p.vertices & s.covered or len(p) < 2:
                    continue
                if s.patterns and _plan_has_cycle(g, s.patterns, p):
                    continue
                grown.append(BeamState(s.patterns + (p,), s.covered | p.vertices, s.score + p.score))
        uniq: dict[frozenset, BeamState] = {}
        for s in grown:
            key = frozenset(p.vertices for p in s.patterns)
            if key not in uniq:
                uniq[key] = s
        states = sorted(uniq.values(), key=lambda s: (-s.score, len(s.patterns),
                                                      sorted(tuple(sorted(g.position[v] for v in p.vertices))
                                                             for p in s.patterns)))[:width]
    return [s.plan() for s in states]


def singleton_patterns(g: CompGraph, plan: FusionPlan) -> list[FusionPattern]:
    covered = plan.covered
    return [FusionPattern(frozenset([v]), v, 0.0) for v in g.fusable_vertices if v not in covered]


@dataclass
class PlanCost:
    total_cycles: float
    kernel_cycles: float
    kernels: int
    kernel_plans: dict[frozenset[str], KernelPlan]


def plan_cost(plan: FusionPlan, g: CompGraph, dev: DeviceSpec, models: CostModels,
              cache: dict[frozenset[str], KernelPlan] | None = None) -> PlanCost:
    """Latency-evaluator cost of a whole plan: every kernel (fused and singleton) plus launch overhead."""
    cache = cache if cache is not None else {}
    kplans = {}
    for p in list(plan.patterns) + singleton_patterns(g, plan):
        if p.vertices not in cache:
            cache[p.vertices] = plan_kernel(p, g, dev, models)
        kplans[p.vertices] = cache[p.vertices]
    cycles = sum(kp.estimated_cycles for kp in kplans.values())
    n = len(kplans)
    return PlanCost(cycles + n * models.context_switch_cycles, cycles, n, kplans)


def select_final_plan(plans: Sequence[FusionPlan], g: CompGraph, dev: DeviceSpec, models: CostModels,
                      cache: dict[frozenset[str], KernelPlan] | None = None) -> FusionPlan:
    cache = cache if cache is not None else {}
    best = None
    for i, plan in enumerate(plans):
        try:
            c = plan_cost(plan, g, dev, models, cache)
        except (InfeasiblePattern, InfeasibleKernel) as exc:
            log.warning("dropping candidate plan %d: %s", i, exc)
            continue
        key = (c.total_cycles, c.kernels, i)
        if best is None or key < best[0]:
            best = (key, plan)
    if best is None:
        raise StitchError("no candidate plan could be planned")
    return best[1]


@dataclass
class ExploreResult:
    plan: FusionPlan
    candidates: dict[str, CandidatePatternSet]
    remote: CandidatePatternSet
    beam: list[FusionPlan]
    cost: PlanCost
    ctx: SearchContext


def explore(g: CompGraph, dev: DeviceSpec, models: CostModels, k: int = 3, width: int = 3,
            use_remote: bool = True, reverse_beam: bool = False) -> ExploreResult:
    """Full search: candidates, remote packing, beam search, and final selection."""
    if k < 1 or width < 1:
        raise ValueError("k and beam width must be at least 1")
    ctx = SearchContext(g, dev, models, k)
    cands = explore_candidates(g, k, dev, models, ctx)
    remote = remote_fusion(g, cands, k, dev, models, ctx) if use_remote else CandidatePatternSet(VIRTUAL)
    beam = beam_search_plan(g, cands, width, dev, models, remote, reverse=reverse_beam)
    if not any(len(p.patterns) == 0 for p in beam):
        beam.append(FusionPlan([]))
    cache: dict[frozenset[str], KernelPlan] = {}
    final = select_final_plan(beam, g, dev, models, cache)
    return ExploreResult(final, cands, remote, beam, plan_cost(final, g, dev, models, cache), ctx)
