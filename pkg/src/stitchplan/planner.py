"""Per-pattern kernel planning: grouping, schedule enumeration, shared-memory
allocation and latency estimation, producing the cheapest stitched kernel.

Execution model of a stitched kernel: one *phase* per group root, in
topological order. A phase computes its root's elements under the root's
template, recomputing every non-sub-root op of its group inline. Sub-roots
hand their values to later phases through their placement (thread-local
register, lane-0 register + shuffle, or shared memory + barrier).
"""

from __future__ import annotations

import heapq
import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from . import indexing
from .device_model import (
    CostModels,
    DeviceSpec,
    LaunchDims,
    occupancy,
    warp_latency,
    wave_count,
)
from .errors import InfeasibleKernel, InfeasiblePattern, InfeasibleSchedule
from .graph_ir import (
    ELEMENTWISE_KINDS,
    CompGraph,
    DType,
    FusionPattern,
    OpClass,
    OpKind,
    contraction_creates_cycle,
    pattern_inputs,
    pattern_outputs,
)
from .kernel_text import Kernel, Phase, SharedDecl, Stmt, emit_text
from .schedules import (
    CompositionScheme,
    Placement,
    ScheduleTemplate,
    elementwise_threads,
    pairs_compatible,
    reduction_threads,
    schedules_for,
    shared_slots,
)

ACC_BYTES = 4  # block-reduction partials are f32 / i32


# -- grouping -------------------------------------------------------------------------------------


@dataclass(frozen=True)
class Grouping:
    sub_roots: frozenset[str]
    roots: tuple[str, ...]
    groups: tuple[tuple[str, tuple[str, ...]], ...]

    @property
    def group_roots(self) -> tuple[str, ...]:
        return tuple(r for r, _ in self.groups)

    def group_of(self, v: str) -> str:
        for r, members in self.groups:
            if v in members:
                return r
        raise KeyError(v)


def _verts(p: FusionPattern | Iterable[str]) -> frozenset[str]:
    return p.vertices if isinstance(p, FusionPattern) else frozenset(p)


def _check_fusable(g: CompGraph, verts: frozenset[str]) -> None:
    for v in verts:
        cls = g.op_class(v)
        if cls is None or cls is OpClass.OPAQUE:
            raise InfeasiblePattern(f"{v} ({g[v].kind.value}) cannot be fused")


def inpattern_consumers(g: CompGraph, verts: frozenset[str], v: str) -> list[str]:
    return [c for c in g.consumers[v] if c in verts]


def make_grouping(g: CompGraph, p: FusionPattern | Iterable[str], sub_roots: Iterable[str]) -> Grouping:
    verts = _verts(p)
    topo = g.topo_index
    sub = frozenset(sub_roots)
    roots = tuple(pattern_outputs(g, verts))
    group_roots = sorted(sub | set(roots), key=topo.__getitem__)
    members: dict[str, list[str]] = {r: [] for r in group_roots}
    for v in sorted(verts, key=topo.__getitem__):
        if v in members:
            members[v].append(v)
            continue
        # nearest group root downstream: BFS over in-pattern consumers
        frontier = [v]
        seen = {v}
        owner = None
        while frontier and owner is None:
            nxt = []
            for u in frontier:
                for c in inpattern_consumers(g, verts, u):
                    if c not in seen:
                        seen.add(c)
                        nxt.append(c)
            hits = [c for c in nxt if c in members]
            if hits:
                owner = min(hits, key=topo.__getitem__)
            frontier = nxt
        if owner is None:  # pragma: no cover - every non-root has a consumer path to a root
            raise InfeasiblePattern(f"{v} reaches no group root")
        members[owner].append(v)
    return Grouping(sub, roots, tuple((r, tuple(members[r])) for r in group_roots))


def enumerate_groupings(p: FusionPattern | Iterable[str], g: CompGraph, max_groupings: int = 64) -> list[Grouping]:
    """Reductions are always sub-roots; expensive ops that feed in-pattern consumers are
    enumerated in and out, largest tensors first, up to ``max_groupings`` combinations."""
    verts = _verts(p)
    _check_fusable(g, verts)
    topo = g.topo_index
    reductions = {v for v in verts if g.op_class(v) is OpClass.REDUCTION}
    expensive = [
        v for v in verts
        if g.op_class(v) is OpClass.EXPENSIVE and inpattern_consumers(g, verts, v)
    ]
    expensive.sort(key=lambda v: (-g[v].shape.element_count, topo[v]))
    n_free = min(len(expensive), int(math.floor(math.log2(max(1, max_groupings)))))
    free = expensive[:n_free]
    out = []
    for mask in range(2**n_free):
        chosen = {free[i] for i in range(n_free) if mask >> i & 1}
        out.append(make_grouping(g, verts, reductions | chosen))
    return out


# -- index propagation ----------------------------------------------------------------------------


def _dedup_pairs(threads: list[np.ndarray], elems: list[np.ndarray], n: int) -> tuple[np.ndarray, np.ndarray]:
    t = np.concatenate(threads)
    e = np.concatenate(elems)
    key = np.unique(t * n + e)
    return key // n, key % n


def group_read_pairs(g: CompGraph, p: FusionPattern | Iterable[str], sub_roots: frozenset[str], root: str,
                     template: ScheduleTemplate, ld: LaunchDims, warp: int) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """For the phase of group ``root``: which thread reads which element of each sub-root.

    Walks the group's inline region in reverse topological order, rewriting
    element ids through every shape op on the way.
    """
    verts = _verts(p)
    topo = g.topo_index
    node = g[root]
    pending: dict[str, tuple[list[np.ndarray], list[np.ndarray]]] = {}
    heap: list[int] = []
    boundary: dict[str, tuple[list[np.ndarray], list[np.ndarray]]] = {}

    def add(v: str, thr: np.ndarray, el: np.ndarray) -> None:
        if v not in verts:
            return
        target = boundary if (v in sub_roots and v != root) else pending
        if v not in target:
            target[v] = ([], [])
            if target is pending:
                heapq.heappush(heap, -topo[v])
        target[v][0].append(thr)
        target[v][1].append(el)

    if node.kind in (OpKind.REDUCE_SUM, OpKind.REDUCE_MAX):
        src = node.operands[0]
        in_dims = g[src].shape.dims
        el = np.arange(g[src].shape.element_count, dtype=np.int64)
        out_e, inner = indexing.reduce_output_of_input(el, in_dims, node.attr("axes"))
        add(src, reduction_threads(template, out_e, inner, ld, warp), el)
    else:
        el = np.arange(node.shape.element_count, dtype=np.int64)
        pending[root] = ([elementwise_threads(template, el, ld, warp)], [el])
        heapq.heappush(heap, -topo[root])

    while heap:
        v = g.topo_order[-heapq.heappop(heap)]
        thr_l, el_l = pending.pop(v)
        n = g[v].shape.element_count
        thr, el = _dedup_pairs(thr_l, el_l, n)
        vn = g[v]
        if vn.kind in (OpKind.REDUCE_SUM, OpKind.REDUCE_MAX):  # pragma: no cover - reductions are sub-roots
            raise InfeasibleSchedule(f"reduction {v} cannot be inlined")
        for pos, o in enumerate(vn.operands):
            if vn.kind is OpKind.GATHER and pos == 0:
                if o in verts:
                    raise InfeasibleSchedule(f"{v}: gather data {o} is produced inside the kernel")
                continue
            add(o, thr, indexing.operand_index(vn, pos, el, g[o].shape))

    return {
        s: _dedup_pairs(t, e, g[s].shape.element_count) for s, (t, e) in boundary.items()
    }


def propagate_schedules(grouping: Grouping, sub_root_choice: Mapping[str, ScheduleTemplate],
                        root_choice: ScheduleTemplate | Mapping[str, ScheduleTemplate], g: CompGraph,
                        ) -> dict[str, ScheduleTemplate]:
    """Every vertex receives the template of its group root.

    Raises :class:`InfeasibleSchedule` when an index cannot be propagated
    statically (gather reading data produced inside the pattern).
    """
    verts = frozenset(v for _, m in grouping.groups for v in m)
    choice: dict[str, ScheduleTemplate] = dict(sub_root_choice)
    for r in grouping.roots:
        if r in choice:
            continue
        choice[r] = root_choice[r] if isinstance(root_choice, Mapping) else root_choice
    for r, _ in grouping.groups:
        allowed = schedules_for(g.op_class(r))
        if choice[r] not in allowed:
            raise InfeasibleSchedule(f"template {choice[r].name} not available for {r}")
    for v in verts:
        node = g[v]
        if node.kind is OpKind.GATHER and node.operands[0] in verts:
            raise InfeasibleSchedule(f"{v}: gather data {node.operands[0]} is produced inside the kernel")
    return {v: choice[grouping.group_of(v)] for v in verts}


# -- launch dimensions ----------------------------------------------------------------------------


def parallel_extent(g: CompGraph, p: FusionPattern | Iterable[str]) -> int:
    return max((g[v].shape.element_count for v in _verts(p)), default=1)


def enumerate_launch_dims(p: FusionPattern | Iterable[str], g: CompGraph, dev: DeviceSpec,
                          models: CostModels | None = None) -> list[LaunchDims]:
    models = models or CostModels()
    extent = parallel_extent(g, p)
    cap = models.grid_cap_factor * dev.sm_count
    out = []
    for b in models.block_sizes:
        if b > dev.max_threads_per_block or b % dev.warp_size:
            continue
        out.append(LaunchDims(grid=max(1, min(cap, -(-extent // b))), block=b))
    return out


# -- shared memory --------------------------------------------------------------------------------


@dataclass(frozen=True)
class Allocation:
    offset: int
    size: int
    reused_from: str | None = None


@dataclass(frozen=True)
class AllocationMap:
    entries: Mapping[str, Allocation] = field(default_factory=dict)

    def __getitem__(self, v: str) -> Allocation:
        return self.entries[v]

    def __contains__(self, v: str) -> bool:
        return v in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def total(self) -> int:
        return max((a.offset + a.size for a in self.entries.values()), default=0)


def dominators(g: CompGraph, verts: frozenset[str]) -> dict[str, str]:
    """Immediate dominators of the pattern's def-use DAG under a virtual entry."""
    topo = g.topo_index
    order = sorted(verts, key=topo.__getitem__)
    idom: dict[str, str] = {}
    depth: dict[str, int] = {ENTRY: 0}

    def intersect(a: str, b: str) -> str:
        while a != b:
            while depth[a] > depth[b]:
                a = idom[a]
            while depth[b] > depth[a]:
                b = idom[b]
            if a != b:
                a, b = idom[a], idom[b]
        return a

    for v in order:
        preds = [o for o in dict.fromkeys(g[v].operands) if o in verts]
        if not preds:
            d = ENTRY
        else:
            d = preds[0]
            for q in preds[1:]:
                d = intersect(d, q)
        idom[v] = d
        depth[v] = depth[d] + 1
    return idom


ENTRY = "<entry>"


def dominates(idom: Mapping[str, str], a: str, b: str) -> bool:
    while b != ENTRY:
        if b == a:
            return True
        b = idom[b]
    return a == ENTRY


def live_ranges(g: CompGraph, verts: frozenset[str], vertices: Iterable[str],
                group_roots: Iterable[str] | None = None) -> dict[str, tuple[int, int]]:
    """(definition, last use) in topological positions for values read across groups.

    With ``group_roots`` given, a value is read at the phase of every group root
    whose inline region reaches it; otherwise each vertex is its own group.
    """
    topo = g.topo_index
    roots = frozenset(group_roots) if group_roots is not None else verts
    readers: dict[str, set[str]] = {v: set() for v in verts}
    for r in roots:
        stack = [o for o in g[r].operands if o in verts]
        seen: set[str] = set()
        while stack:
            u = stack.pop()
            if u in seen:
                continue
            seen.add(u)
            readers[u].add(r)
            if u not in roots:
                stack.extend(o for o in g[u].operands if o in verts)
    out = {}
    for v in vertices:
        uses = [topo[r] for r in readers[v] if r in roots and r != v]
        out[v] = (topo[v], max(uses, default=topo[v]))
    return out


def allocate_shared_memory(p: FusionPattern | Iterable[str], requests: Mapping[str, int], g: CompGraph,
                           group_roots: Iterable[str] | None = None, limit: int | None = None) -> AllocationMap:
    """Assign shared-memory offsets, reusing dead buffers whose owner dominates the requester.

    Traverses the pattern in topological order, propagating the set of known
    allocations along def-use edges. A request takes the largest fitting dead,
    dominating region (a region at the end of the arena may grow); otherwise a
    fresh region is appended.
    """
    verts = _verts(p)
    topo = g.topo_index
    req = {v: int(b) for v, b in requests.items() if b > 0}
    ranges = live_ranges(g, verts, req, group_roots)
    idom = dominators(g, verts)
    regions: list[dict] = []  # offset, capacity, owner
    info: dict[str, frozenset[int]] = {}
    entries: dict[str, Allocation] = {}
    arena = 0
    for v in sorted(verts, key=topo.__getitem__):
        known = frozenset().union(*(info[o] for o in dict.fromkeys(g[v].operands) if o in info))
        if v in req:
            size = req[v]
            pos = topo[v]
            best = None
            for rid in sorted(known):
                r = regions[rid]
                owner = r["owner"]
                if ranges[owner][1] >= pos or not dominates(idom, owner, v):
                    continue
                fits = r["capacity"] >= size
                at_end = r["offset"] + r["capacity"] == arena
                if not fits and not at_end:
                    continue
                rank = (fits, r["capacity"] if fits else -r["capacity"], -r["offset"])
                if best is None or rank > best[0]:
                    best = (rank, rid)
            if best is not None:
                rid = best[1]
                r = regions[rid]
                donor = r["owner"]
                if r["capacity"] < size:
                    arena += size - r["capacity"]
                    r["capacity"] = size
                r["owner"] = v
                entries[v] = Allocation(r["offset"], size, donor)
                known = known | {rid}
            else:
                regions.append({"offset": arena, "capacity": size, "owner": v})
                entries[v] = Allocation(arena, size, None)
                known = known | {len(regions) - 1}
                arena += size
        info[v] = known
    amap = AllocationMap(entries)
    if limit is not None and amap.total > limit:
        raise InfeasibleSchedule(f"shared memory {amap.total} exceeds per-block limit {limit}")
    return amap


# -- program construction -------------------------------------------------------------------------


def _acc_dtype(dt: DType) -> DType:
    return DType.I32 if dt is DType.I32 else DType.F32


def _dims(d: tuple[int, ...]) -> tuple[int, ...]:
    return tuple(d)


class _PhaseBuilder:
    """Emits one phase body with value numbering (identical expressions share a register)."""

    def __init__(self, g: CompGraph, verts: frozenset[str], sub_roots: frozenset[str],
                 choice: Mapping[str, ScheduleTemplate], root: str, counter: itertools.count):
        self.g, self.verts, self.sub_roots, self.choice, self.root = g, verts, sub_roots, choice, root
        self.counter = counter
        self.memo: dict[tuple, str] = {}
        self.out: list[Stmt] = []

    def reg(self) -> str:
        return f"%{next(self.counter)}"

    def emit(self, op: str, args: tuple[str, ...] = (), attrs: Mapping | None = None, dst: bool = True) -> str | None:
        attrs_t = tuple(sorted((attrs or {}).items()))
        key = (op, args, attrs_t)
        if dst and key in self.memo:
            return self.memo[key]
        d = self.reg() if dst else None
        self.out.append(Stmt(op, d, args, attrs_t))
        if dst:
            self.memo[key] = d
        return d

    def value(self, v: str, idx: str, compute_root: bool = False) -> str:
        g = self.g
        node = g[v]
        if v not in self.verts:
            if node.kind is OpKind.CONSTANT:
                return self.emit("const", (node.shape.dtype.value, repr(node.attr("value", 0))))
            return self.emit("gload", (v, idx))
        if v in self.sub_roots and not (compute_root and v == self.root):
            t = self.choice[v]
            op = {
                Placement.THREAD_REGISTER: "tload",
                Placement.WARP_LANE0: "shuffle_from_lane0",
                Placement.SHARED: "shared_load",
            }[t.output_placement]
            return self.emit(op, (v, idx))
        kind = node.kind
        if kind in ELEMENTWISE_KINDS:
            args = tuple(self.value(o, idx) for o in node.operands)
            return self.emit(kind.value, args)
        (src,) = node.operands[:1]
        if kind is OpKind.BROADCAST:
            i2 = self.emit("idx.bcast", (idx,), {"out": tuple(node.shape.dims), "in": tuple(g[src].shape.dims),
                                                  "dims": node.attr("dims")})
            return self.value(src, i2)
        if kind is OpKind.TRANSPOSE:
            i2 = self.emit("idx.transpose", (idx,), {"out": tuple(node.shape.dims), "perm": node.attr("perm")})
            return self.value(src, i2)
        if kind is OpKind.SLICE:
            i2 = self.emit("idx.slice", (idx,), {"out": tuple(node.shape.dims), "in": tuple(g[src].shape.dims),
                                                  "start": node.attr("start")})
            return self.value(src, i2)
        if kind is OpKind.GATHER:
            data, ids = node.operands
            if data in self.verts:
                raise InfeasibleSchedule(f"{v}: gather data {data} is produced inside the kernel")
            ri = self.emit("idx.gather_row", (idx,), {"out": tuple(node.shape.dims)})
            rows = self.value(ids, ri)
            i2 = self.emit("idx.gather_data", (idx, rows), {"out": tuple(node.shape.dims),
                                                            "data": tuple(g[data].shape.dims)})
            return self.value(data, i2)
        raise InfeasibleSchedule(f"{v}: {kind.value} cannot be computed inline")


def build_program(name: str, g: CompGraph, p: FusionPattern | Iterable[str], grouping: Grouping,
                  choice: Mapping[str, ScheduleTemplate], ld: LaunchDims, warp: int,
                  alloc: AllocationMap) -> Kernel:
    verts = _verts(p)
    sub = grouping.sub_roots
    outputs = set(grouping.roots)
    params = [(v, g[v].shape) for v in pattern_inputs(g, verts) if g[v].kind is not OpKind.CONSTANT]
    k = Kernel(name, ld.grid, ld.block, warp, params=params,
               outputs=[(v, g[v].shape) for v in grouping.roots])
    for v in g.sort_ids(alloc.entries):
        a = alloc[v]
        data = _data_bytes(g, v, sub, choice, ld)
        dt = g[v].shape.dtype
        if data:
            k.shared.append(SharedDecl(v, dt, a.offset, data))
        if a.size > data:
            k.shared.append(SharedDecl(f"{v}.p", _acc_dtype(dt), a.offset + data, a.size - data))
    counter = itertools.count()
    prev_shared = False
    for r in grouping.group_roots:
        t = choice[r]
        node = g[r]
        b = _PhaseBuilder(g, verts, sub, choice, r, counter)
        scheme = t.name
        dt = node.shape.dtype
        touches_shared = r in alloc or any(
            choice[s].output_placement is Placement.SHARED for s in _region_reads(g, verts, sub, r)
        )
        if prev_shared or touches_shared:
            if k.items and k.items[-1] != "barrier":
                k.items.append("barrier")
        if node.kind in (OpKind.REDUCE_SUM, OpKind.REDUCE_MAX):
            src = node.operands[0]
            in_dims = g[src].shape.dims
            axes = node.attr("axes")
            i = b.emit("idx.reduce_in", ("%e", "%j"), {"in": tuple(in_dims), "axes": axes})
            x = b.value(src, i)
            b.emit("acc", (x,), dst=False)
            loop = b.out
            b.out = []
            b.memo = {}
            if scheme == "thread":
                res = b.emit("reduce.thread")
            elif scheme == "warp":
                res = b.emit("reduce.warp")
                b.emit("leader", dst=False)
            else:
                part = b.emit("reduce.warp")
                b.emit("partial_store", (f"{r}.p", part), dst=False)
                b.emit("barrier", dst=False)
                res = b.emit("partial_reduce", (f"{r}.p",))
                b.emit("barrier", dst=False)
                b.emit("leader", dst=False)
            phase = Phase(r, scheme, "reduce", node.shape.element_count, dt,
                          op="sum" if node.kind is OpKind.REDUCE_SUM else "max",
                          in_dims=_dims(in_dims), axes=tuple(axes), loop=loop)
        else:
            res = b.value(r, "%e", compute_root=True)
            phase = Phase(r, scheme, "map", node.shape.element_count, dt)
        if r in sub:
            store = {
                Placement.THREAD_REGISTER: "tstore",
                Placement.WARP_LANE0: "lane0_store",
                Placement.SHARED: "shared_store",
            }[t.output_placement]
            b.emit(store, (r, "%e", res), dst=False)
        if r in outputs:
            b.emit("gstore", (r, "%e", res), dst=False)
        phase.body = b.out
        k.items.append(phase)
        prev_shared = touches_shared
    return k


def _region_reads(g: CompGraph, verts: frozenset[str], sub: frozenset[str], root: str) -> set[str]:
    out: set[str] = set()
    stack = [o for o in g[root].operands if o in verts]
    seen: set[str] = set()
    while stack:
        u = stack.pop()
        if u in seen:
            continue
        seen.add(u)
        if u in sub:
            out.add(u)
        else:
            stack.extend(o for o in g[u].operands if o in verts)
    return out


def _data_bytes(g: CompGraph, v: str, sub: frozenset[str], choice: Mapping[str, ScheduleTemplate],
                ld: LaunchDims) -> int:
    if v in sub and choice[v].output_placement is Placement.SHARED:
        return shared_slots(g[v].shape.element_count, ld) * g[v].shape.dtype.itemsize
    return 0


def shared_requests(g: CompGraph, grouping: Grouping, choice: Mapping[str, ScheduleTemplate], ld: LaunchDims,
                    warp: int) -> dict[str, int]:
    """Bytes per vertex: shared slots for block-placed sub-roots plus partials for block reductions."""
    req = {}
    for r in grouping.group_roots:
        t = choice[r]
        if t.scheme is not CompositionScheme.BLOCK:
            continue
        n = _data_bytes(g, r, grouping.sub_roots, choice, ld)
        if g.op_class(r) is OpClass.REDUCTION:
            n += (ld.block // warp) * ACC_BYTES
        if n:
            req[r] = n
    return req


# -- program analysis -----------------------------------------------------------------------------


def phase_iterations(ph: Phase, grid: int, block: int, warp: int) -> tuple[int, int]:
    """(outer iterations of the busiest executor, inner reduction steps)."""
    T = grid * block
    n = ph.extent
    if ph.scheme == "thread":
        it = -(-n // T)
    elif ph.scheme == "warp":
        it = -(-n // (T // warp))
    elif ph.kind == "reduce":
        it = -(-n // grid)
    else:
        it = -(-(-(-n // grid)) // block)
    steps = 0
    if ph.kind == "reduce":
        k = ph.inner_extent
        steps = {"thread": k, "warp": -(-k // warp), "block": -(-k // block)}[ph.scheme]
    return it, steps


def _stmt_histogram(s: Stmt, warp: int, block: int) -> Counter:
    h: Counter = Counter()
    op = s.op
    log_w = int(math.log2(warp))
    if op in ("add", "sub", "mul", "div", "max", "min", "power", "exp", "tanh", "log", "rsqrt"):
        h[op] += 1
    elif op == "gload":
        h["global_load"] += 1
    elif op == "gstore":
        h["global_store"] += 1
    elif op == "shuffle_from_lane0":
        h["shuffle"] += 1
    elif op in ("shared_load",):
        h["shared_load"] += 1
    elif op in ("shared_store", "partial_store"):
        h["shared_store"] += 1
    elif op == "partial_reduce":
        n = block // warp
        h["shared_load"] += n
        h["reduce_step"] += n - 1
    elif op == "barrier":
        h["barrier"] += 1
    elif op == "acc":
        h["reduce_step"] += 1
    elif op == "reduce.warp":
        h["shuffle"] += log_w
        h["reduce_step"] += log_w
    elif op.startswith("idx."):
        h["index"] += 1
    return h


def _mapping_key(ph: Phase) -> tuple:
    return (ph.scheme, ph.kind, ph.extent, ph.in_dims, ph.axes)


def count_instructions(k: Kernel, dedup_index: bool = True) -> dict[str, int]:
    """Per-thread instruction histogram of the busiest thread.

    Index computations depending only on the loop variables are shared across
    phases that iterate the same mapping, so they are counted once.
    """
    hist: Counter = Counter()
    seen_index: set[tuple] = set()
    for item in k.items:
        if isinstance(item, str):
            hist["barrier"] += 1
            continue
        it, steps = phase_iterations(item, k.grid, k.block, k.warp)
        mk = _mapping_key(item)
        for region, mult in ((item.loop, it * steps), (item.body, it)):
            for s in region:
                if dedup_index and s.op.startswith("idx.") and all(a in ("%e", "%j") for a in s.args):
                    key = (mk, s.op, s.args, s.attrs)
                    if key in seen_index:
                        continue
                    seen_index.add(key)
                for kind, c in _stmt_histogram(s, k.warp, k.block).items():
                    hist[kind] += c * mult
    return dict(sorted((kk, v) for kk, v in hist.items() if v))


def _pressure(stmts: list[Stmt], extra_live: int = 0) -> int:
    """Max simultaneously live registers in a straight-line statement list."""
    defs: dict[str, int] = {}
    last: dict[str, int] = {}
    for i, s in enumerate(stmts):
        for a in s.args:
            if a.startswith("%") and a not in ("%e", "%j"):
                last[a] = i
        if s.dst:
            defs[s.dst] = i
            last.setdefault(s.dst, i)
    best = 0
    for i in range(len(stmts)):
        live = sum(1 for r, d in defs.items() if d <= i <= last[r])
        best = max(best, live)
    return best + extra_live if stmts else extra_live


def estimate_register_usage(k: Kernel | None, overhead: int = 8) -> int:
    """Overhead plus the peak of live thread-local values over all program points.

    Values parked in thread registers between phases (thread-local and lane-0
    hand-offs) stay live from their producing phase to their last reader.
    """
    if k is None or not k.phases:
        return overhead
    phases = k.phases
    parked: list[tuple[int, int, int]] = []  # (from, to, slots)
    for i, ph in enumerate(phases):
        stores = [s for s in ph.body if s.op in ("tstore", "lane0_store")]
        if not stores:
            continue
        name = stores[0].args[0]
        readers = [j for j, q in enumerate(phases) if j > i and any(
            s.op in ("tload", "shuffle_from_lane0") and s.args[0] == name for s in q.loop + q.body)]
        it, _ = phase_iterations(ph, k.grid, k.block, k.warp)
        parked.append((i, max(readers, default=i), it))
    peak = 0
    for i, ph in enumerate(phases):
        across = sum(slots for a, b, slots in parked if a <= i <= b)
        loop_p = _pressure(ph.loop, extra_live=1) if ph.loop else 0  # +1 accumulator
        body_p = _pressure(ph.body)
        peak = max(peak, across + max(loop_p, body_p))
    return overhead + peak


# -- plan -----------------------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelPlan:
    pattern: FusionPattern
    grouping: Grouping
    per_op_schedule: Mapping[str, ScheduleTemplate]
    launch: LaunchDims
    shmem_alloc: AllocationMap
    regs_per_thread: int
    estimated_cycles: float
    instr_histogram: Mapping[str, int]
    occupancy: float
    n_warps: int
    program: Kernel = field(compare=False, repr=False)

    @property
    def shared_bytes(self) -> int:
        return self.shmem_alloc.total

    def recompute_cycles(self, dev: DeviceSpec, models: CostModels) -> float:
        occ = occupancy(self.launch, self.regs_per_thread, self.shared_bytes, dev)
        return wave_count(self.n_warps, occ, dev, ceil=not models.fractional_waves) * warp_latency(
            self.instr_histogram, models.cpi)

    def global_intermediates(self, g: CompGraph) -> list[tuple[str, str]]:
        """In-kernel def-use edges whose value travels through global memory."""
        verts = self.pattern.vertices
        out = []
        for v in verts:
            for c in g.consumers[v]:
                if c in verts and self.per_op_schedule[v].output_placement is Placement.GLOBAL:
                    out.append((v, c))
        return out

    def schedule_ids(self) -> tuple:
        return tuple((r, self.per_op_schedule[r].name) for r in self.grouping.group_roots)


def emit_kernel_text(k: KernelPlan) -> str:
    return emit_text(k.program)


def kernel_name(g: CompGraph, p: FusionPattern) -> str:
    first = p.sorted_vertices(g)[0]
    return f"fused_{first}" if len(p) > 1 else f"k_{first}"


def evaluate_config(g: CompGraph, p: FusionPattern, grouping: Grouping, choice: Mapping[str, ScheduleTemplate],
                    ld: LaunchDims, dev: DeviceSpec, models: CostModels) -> KernelPlan:
    """Build and cost one fully decided configuration (no locality check)."""
    warp = dev.warp_size
    req = shared_requests(g, grouping, choice, ld, warp)
    alloc = allocate_shared_memory(p, req, g, grouping.group_roots, limit=dev.shared_mem_per_block_limit)
    prog = build_program(kernel_name(g, p), g, p, grouping, choice, ld, warp, alloc)
    hist = count_instructions(prog)
    regs = estimate_register_usage(prog, models.register_overhead)
    occ = occupancy(ld, regs, alloc.total, dev)
    n_warps = ld.warps(dev)
    cycles = wave_count(n_warps, occ, dev, ceil=not models.fractional_waves) * warp_latency(hist, models.cpi)
    per_op = propagate_schedules(grouping, {s: choice[s] for s in grouping.sub_roots}, choice, g)
    return KernelPlan(p, grouping, per_op, ld, alloc, regs, cycles, hist, occ, n_warps, prog)


def feasible_choices(g: CompGraph, p: FusionPattern | Iterable[str], grouping: Grouping, ld: LaunchDims,
                     warp: int) -> Iterable[dict[str, ScheduleTemplate]]:
    """Template assignments for the group roots that pass every locality check, in lexicographic order."""
    verts = _verts(p)
    roots = grouping.group_roots
    options = [schedules_for(g.op_class(r)) for r in roots]
    cache: dict[tuple[str, ScheduleTemplate], dict] = {}

    def reads(r: str, t: ScheduleTemplate) -> dict:
        if (r, t) not in cache:
            cache[(r, t)] = group_read_pairs(g, verts, grouping.sub_roots, r, t, ld, warp)
        return cache[(r, t)]

    for combo in itertools.product(*options):
        choice = dict(zip(roots, combo))
        ok = True
        for r in roots:
            for s, (thr, el) in reads(r, choice[r]).items():
                if not pairs_compatible(choice[s], thr, el, ld, warp):
                    ok = False
                    break
            if not ok:
                break
        if ok:
            yield choice


def plan_kernel(p: FusionPattern, g: CompGraph, dev: DeviceSpec, models: CostModels | None = None) -> KernelPlan:
    """Exhaustively cost every (grouping, root templates, launch dims) that passes the
    locality and resource checks; return the cheapest."""
    models = models or CostModels()
    verts = p.vertices
    _check_fusable(g, verts)
    if contraction_creates_cycle(g, p):
        raise InfeasiblePattern("pattern contraction creates a cycle")
    best: tuple | None = None
    for gi, grouping in enumerate(enumerate_groupings(p, g, models.max_groupings)):
        for ld in enumerate_launch_dims(p, g, dev, models):
            try:
                choices = list(feasible_choices(g, p, grouping, ld, dev.warp_size))
            except InfeasibleSchedule:
                continue
            for choice in choices:
                try:
                    kp = evaluate_config(g, p, grouping, choice, ld, dev, models)
                except (InfeasibleSchedule, InfeasibleKernel):
                    continue
                key = (kp.estimated_cycles, kp.shared_bytes, ld.block,
                       tuple(choice[r].sort_key for r in grouping.group_roots), gi)
                if best is None or key < best[0]:
                    best = (key, kp)
    if best is None:
        raise InfeasiblePattern(f"no feasible schedule for pattern {sorted(verts)}")
    return best[1]


def probe_plannable(p: FusionPattern | Iterable[str], g: CompGraph, dev: DeviceSpec,
                    models: CostModels | None = None) -> bool:
    """Cheap feasibility probe used during search.

    A success here implies :func:`plan_kernel` succeeds: it tests a subset of
    the configurations plan_kernel enumerates (reductions as the only sub-roots,
    one scheme shared by all of them).
    """
    models = models or CostModels()
    verts = _verts(p)
    for v in verts:
        cls = g.op_class(v)
        if cls is None or cls is OpClass.OPAQUE:
            return False
        node = g[v]
        if node.kind is OpKind.GATHER and node.operands[0] in verts:
            return False
    if len(verts) > 1 and contraction_creates_cycle(g, verts):
        return False
    reductions = [v for v in verts if g.op_class(v) is OpClass.REDUCTION]
    if not any(inpattern_consumers(g, verts, r) for r in reductions):
        return True
    grouping = make_grouping(g, verts, reductions)
    roots = grouping.group_roots
    warp = dev.warp_size
    for ld in enumerate_launch_dims(verts, g, dev, models):
        for scheme_idx in (1, 2, 0):
            choice = {}
            for r in roots:
                opts = schedules_for(g.op_class(r))
                choice[r] = opts[scheme_idx] if len(opts) > scheme_idx else opts[0]
            try:
                ok = all(
                    pairs_compatible(choice[s], thr, el, ld, warp)
                    for r in roots
                    for s, (thr, el) in group_read_pairs(g, verts, grouping.sub_roots, r, choice[r], ld, warp).items()
                )
            except InfeasibleSchedule:
                return False
            if not ok:
                continue
            req = shared_requests(g, grouping, choice, ld, warp)
            if sum(req.values()) <= dev.shared_mem_per_block_limit:
                return True
    return False
