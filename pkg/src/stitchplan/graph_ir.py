"""Tensor-operator graph, op classification, and fusion pattern/plan containers.

Vertices are string ids. Wherever an ordering is needed, ties are broken by the
vertex's definition position in the graph, which keeps every search reproducible.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Any, Iterable, Mapping

import numpy as np

from .errors import (
    CycleError,
    DeadNodeError,
    GraphError,
    ShapeMismatchError,
    UnknownOpError,
    UnresolvedOperandError,
)


class DType(str, Enum):
    F32 = "f32"
    F16 = "f16"
    I32 = "i32"
    BOOL = "bool"

    @property
    def np(self) -> np.dtype:
        return _NP_DTYPES[self]

    @property
    def itemsize(self) -> int:
        return self.np.itemsize

    @property
    def is_float(self) -> bool:
        return self in (DType.F32, DType.F16)


_NP_DTYPES = {
    DType.F32: np.dtype(np.float32),
    DType.F16: np.dtype(np.float16),
    DType.I32: np.dtype(np.int32),
    DType.BOOL: np.dtype(np.bool_),
}


@dataclass(frozen=True)
class TensorShape:
    dims: tuple[int, ...]
    dtype: DType = DType.F32

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "dtype", DType(self.dtype))
        if any(d < 1 for d in self.dims):
            raise ShapeMismatchError(f"non-positive dimension in {self.dims}")
        if self.element_count >= 2**64:
            raise ShapeMismatchError(f"element count of {self.dims} overflows 64 bits")

    @property
    def rank(self) -> int:
        return len(self.dims)

    @property
    def element_count(self) -> int:
        return math.prod(self.dims)

    @property
    def nbytes(self) -> int:
        return self.element_count * self.dtype.itemsize

    def __str__(self) -> str:
        return f"{self.dtype.value}[{','.join(map(str, self.dims))}]"


class OpKind(str, Enum):
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    DIV = "div"
    MAX = "max"
    MIN = "min"
    EXP = "exp"
    TANH = "tanh"
    LOG = "log"
    RSQRT = "rsqrt"
    POWER = "power"
    REDUCE_SUM = "reduce_sum"
    REDUCE_MAX = "reduce_max"
    BROADCAST = "broadcast"
    TRANSPOSE = "transpose"
    SLICE = "slice"
    GATHER = "gather"
    CONSTANT = "constant"
    PARAMETER = "parameter"
    OPAQUE_COMPUTE = "opaque_compute"


class OpClass(str, Enum):
    LIGHT = "LightElementwise"
    EXPENSIVE = "ExpensiveElementwise"
    REDUCTION = "Reduction"
    SHAPE = "ShapeOp"
    OPAQUE = "Opaque"


BINARY_KINDS = frozenset(
    {OpKind.ADD, OpKind.SUB, OpKind.MUL, OpKind.DIV, OpKind.MAX, OpKind.MIN, OpKind.POWER}
)
UNARY_KINDS = frozenset({OpKind.EXP, OpKind.TANH, OpKind.LOG, OpKind.RSQRT})
ELEMENTWISE_KINDS = BINARY_KINDS | UNARY_KINDS
REDUCE_KINDS = frozenset({OpKind.REDUCE_SUM, OpKind.REDUCE_MAX})
SHAPE_KINDS = frozenset({OpKind.BROADCAST, OpKind.TRANSPOSE, OpKind.SLICE, OpKind.GATHER})
SOURCE_KINDS = frozenset({OpKind.CONSTANT, OpKind.PARAMETER})

_ARITY: dict[OpKind, tuple[int, int]] = {
    **{k: (2, 2) for k in BINARY_KINDS},
    **{k: (1, 1) for k in UNARY_KINDS},
    **{k: (1, 1) for k in REDUCE_KINDS},
    OpKind.BROADCAST: (1, 1),
    OpKind.TRANSPOSE: (1, 1),
    OpKind.SLICE: (1, 1),
    OpKind.GATHER: (2, 2),
    OpKind.CONSTANT: (0, 0),
    OpKind.PARAMETER: (0, 0),
    OpKind.OPAQUE_COMPUTE: (1, 2),
}

_CLASS_TABLE: dict[OpKind, OpClass] = {
    **{k: OpClass.LIGHT for k in (OpKind.ADD, OpKind.SUB, OpKind.MUL, OpKind.DIV, OpKind.MAX, OpKind.MIN)},
    **{k: OpClass.EXPENSIVE for k in (OpKind.EXP, OpKind.TANH, OpKind.LOG, OpKind.RSQRT, OpKind.POWER)},
    **{k: OpClass.REDUCTION for k in REDUCE_KINDS},
    **{k: OpClass.SHAPE for k in SHAPE_KINDS},
    OpKind.OPAQUE_COMPUTE: OpClass.OPAQUE,
}

# Attributes whose values are integer tuples.
TUPLE_ATTRS = frozenset({"axes", "dims", "perm", "start", "limit"})


def _freeze_attrs(attrs: Mapping[str, Any] | Iterable[tuple[str, Any]] | None) -> tuple[tuple[str, Any], ...]:
    if attrs is None:
        return ()
    items = attrs.items() if isinstance(attrs, Mapping) else attrs
    out = []
    for key, value in items:
        if key in TUPLE_ATTRS:
            value = (int(value),) if isinstance(value, (int, np.integer)) else tuple(int(v) for v in value)
        out.append((key, value))
    return tuple(sorted(out))


@dataclass(frozen=True)
class OpNode:
    id: str
    kind: OpKind
    operands: tuple[str, ...]
    shape: TensorShape
    attrs: tuple[tuple[str, Any], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", OpKind(self.kind))
        object.__setattr__(self, "operands", tuple(self.operands))
        object.__setattr__(self, "attrs", _freeze_attrs(self.attrs))
        lo, hi = _ARITY[self.kind]
        if not lo <= len(self.operands) <= hi:
            raise GraphError(
                f"{self.id}: {self.kind.value} takes {lo}..{hi} operands, got {len(self.operands)}"
            )
        if self.kind in REDUCE_KINDS and not self.attr("axes"):
            raise GraphError(f"{self.id}: reduction needs a non-empty axes attribute")

    def attr(self, key: str, default: Any = None) -> Any:
        for k, v in self.attrs:
            if k == key:
                return v
        return default

    @property
    def attr_dict(self) -> dict[str, Any]:
        return dict(self.attrs)


def kind_class(kind: OpKind | str) -> OpClass | None:
    return _CLASS_TABLE.get(OpKind(kind))


def classify_op(node: OpNode) -> OpClass | None:
    """Class of a node; ``None`` for parameters and constants, which are never fused."""
    return _CLASS_TABLE.get(node.kind)


def is_fusable(node: OpNode) -> bool:
    cls = classify_op(node)
    return cls is not None and cls is not OpClass.OPAQUE


def infer_shape(node_kind: OpKind, operand_shapes: list[TensorShape], attrs: Mapping[str, Any],
                declared: TensorShape | None, node_id: str = "?") -> TensorShape:
    """Output shape of an op under its shape rule; checks ``declared`` when given."""

    def mismatch(msg: str) -> ShapeMismatchError:
        return ShapeMismatchError(f"{node_id}: {msg}")

    kind = OpKind(node_kind)
    if kind in SOURCE_KINDS:
        if declared is None:
            raise mismatch(f"{kind.value} needs an explicit type")
        return declared
    if kind in BINARY_KINDS:
        a, b = operand_shapes
        if a != b:
            raise mismatch(f"operand shapes differ: {a} vs {b}")
        if kind is OpKind.POWER and not a.dtype.is_float:
            raise mismatch("power needs a float dtype")
        if a.dtype is DType.BOOL and kind not in (OpKind.MAX, OpKind.MIN):
            raise mismatch(f"{kind.value} not defined on bool")
        out = a
    elif kind in UNARY_KINDS:
        (a,) = operand_shapes
        if not a.dtype.is_float:
            raise mismatch(f"{kind.value} needs a float dtype")
        out = a
    elif kind in REDUCE_KINDS:
        (a,) = operand_shapes
        axes = tuple(attrs.get("axes", ()))
        if not axes or len(set(axes)) != len(axes) or any(not 0 <= ax < a.rank for ax in axes):
            raise mismatch(f"bad reduce axes {axes} for rank {a.rank}")
        if a.dtype is DType.BOOL:
            raise mismatch("reduction over bool is not supported")
        out = TensorShape(tuple(d for i, d in enumerate(a.dims) if i not in axes), a.dtype)
    elif kind is OpKind.BROADCAST:
        (a,) = operand_shapes
        if declared is None:
            raise mismatch("broadcast needs an explicit output type")
        dims = tuple(attrs.get("dims", ()))
        if len(dims) != a.rank or list(dims) != sorted(set(dims)):
            raise mismatch(f"broadcast dims {dims} must be increasing and match operand rank {a.rank}")
        if any(not 0 <= d < declared.rank for d in dims):
            raise mismatch(f"broadcast dims {dims} out of range")
        if any(declared.dims[d] != a.dims[i] for i, d in enumerate(dims)):
            raise mismatch(f"broadcast {a} -> {declared} inconsistent with dims {dims}")
        out = TensorShape(declared.dims, a.dtype)
    elif kind is OpKind.TRANSPOSE:
        (a,) = operand_shapes
        perm = tuple(attrs.get("perm", ()))
        if sorted(perm) != list(range(a.rank)):
            raise mismatch(f"bad permutation {perm}")
        out = TensorShape(tuple(a.dims[p] for p in perm), a.dtype)
    elif kind is OpKind.SLICE:
        (a,) = operand_shapes
        start = tuple(attrs.get("start", ()))
        limit = tuple(attrs.get("limit", ()))
        if len(start) != a.rank or len(limit) != a.rank:
            raise mismatch("slice start/limit must match operand rank")
        if any(not 0 <= s < l <= d for s, l, d in zip(start, limit, a.dims)):
            raise mismatch(f"slice bounds {start}..{limit} outside {a.dims}")
        out = TensorShape(tuple(l - s for s, l in zip(start, limit)), a.dtype)
    elif kind is OpKind.GATHER:
        data, idx = operand_shapes
        if idx.dtype is not DType.I32 or idx.rank != 1:
            raise mismatch("gather indices must be a rank-1 i32 tensor")
        if data.rank < 1:
            raise mismatch("gather data must have rank >= 1")
        out = TensorShape((idx.dims[0],) + data.dims[1:], data.dtype)
    elif kind is OpKind.OPAQUE_COMPUTE:
        if len(operand_shapes) == 1:
            out = operand_shapes[0]
        else:
            a, b = operand_shapes
            if a.rank != 2 or b.rank != 2 or a.dims[1] != b.dims[0] or a.dtype != b.dtype:
                raise mismatch(f"opaque matmul needs [m,k]x[k,n], got {a} x {b}")
            out = TensorShape((a.dims[0], b.dims[1]), a.dtype)
    else:  # pragma: no cover - enum is closed
        raise UnknownOpError(f"{node_id}: unknown op kind {kind}")
    if declared is not None and declared != out:
        raise mismatch(f"declared type {declared} but shape rule gives {out}")
    return out


@dataclass(frozen=True)
class CompGraph:
    """Immutable DAG of operators. ``nodes`` preserves definition order."""

    nodes: Mapping[str, OpNode]
    outputs: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "nodes", dict(self.nodes))
        object.__setattr__(self, "outputs", tuple(self.outputs))

    def __contains__(self, vid: str) -> bool:
        return vid in self.nodes

    def __getitem__(self, vid: str) -> OpNode:
        return self.nodes[vid]

    def __len__(self) -> int:
        return len(self.nodes)

    @cached_property
    def position(self) -> dict[str, int]:
        return {vid: i for i, vid in enumerate(self.nodes)}

    @cached_property
    def consumers(self) -> dict[str, tuple[str, ...]]:
        cons: dict[str, list[str]] = {vid: [] for vid in self.nodes}
        for node in self.nodes.values():
            for op in dict.fromkeys(node.operands):
                if op in cons:
                    cons[op].append(node.id)
        pos = self.position
        return {vid: tuple(sorted(c, key=pos.__getitem__)) for vid, c in cons.items()}

    @cached_property
    def topo_order(self) -> tuple[str, ...]:
        return tuple(topo_sort(self))

    @cached_property
    def topo_index(self) -> dict[str, int]:
        return {vid: i for i, vid in enumerate(self.topo_order)}

    def op_class(self, vid: str) -> OpClass | None:
        return classify_op(self.nodes[vid])

    def fusable(self, vid: str) -> bool:
        return is_fusable(self.nodes[vid])

    @cached_property
    def fusable_vertices(self) -> tuple[str, ...]:
        return tuple(v for v in self.topo_order if self.fusable(v))

    def edges(self) -> list[tuple[str, str]]:
        return [(op, n.id) for n in self.nodes.values() for op in dict.fromkeys(n.operands)]

    def sort_ids(self, ids: Iterable[str]) -> list[str]:
        pos = self.position
        return sorted(ids, key=pos.__getitem__)


def topo_sort(g: CompGraph) -> list[str]:
    """Kahn's algorithm; among ready vertices the earliest-defined goes first."""
    pos = g.position
    indeg = {vid: 0 for vid in g.nodes}
    for node in g.nodes.values():
        for op in dict.fromkeys(node.operands):
            if op not in g.nodes:
                raise UnresolvedOperandError(f"{node.id}: operand {op!r} is not defined")
            indeg[node.id] += 1
    heap = [(pos[v], v) for v, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    order: list[str] = []
    cons = g.consumers
    while heap:
        _, v = heapq.heappop(heap)
        order.append(v)
        for c in cons[v]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(heap, (pos[c], c))
    if len(order) != len(g.nodes):
        stuck = sorted((v for v, d in indeg.items() if d > 0), key=pos.__getitem__)
        raise CycleError(f"cycle through {stuck[:5]}")
    return order


def validate_graph(g: CompGraph) -> CompGraph:
    """Raise on unresolved operands, bad shapes, cycles or dead nodes; return ``g``."""
    for node in g.nodes.values():
        for op in node.operands:
            if op not in g.nodes:
                raise UnresolvedOperandError(f"{node.id}: operand {op!r} is not defined")
        shapes = [g.nodes[op].shape for op in node.operands]
        infer_shape(node.kind, shapes, node.attr_dict, node.shape, node.id)
    for out in g.outputs:
        if out not in g.nodes:
            raise UnresolvedOperandError(f"output {out!r} is not defined")
    if not g.outputs and g.nodes:
        raise DeadNodeError("graph has no outputs")
    topo_sort(g)
    live = set()
    stack = list(g.outputs)
    while stack:
        v = stack.pop()
        if v in live:
            continue
        live.add(v)
        stack.extend(g.nodes[v].operands)
    dead = [v for v in g.nodes if v not in live]
    if dead:
        raise DeadNodeError(f"nodes not reachable from any output: {dead}")
    return g


@dataclass(frozen=True)
class FusionPattern:
    vertices: frozenset[str]
    producer: str
    score: float = 0.0
    remote: bool = False

    def __post_init__(self):
        object.__setattr__(self, "vertices", frozenset(self.vertices))

    def __len__(self) -> int:
        return len(self.vertices)

    def with_score(self, score: float) -> FusionPattern:
        return FusionPattern(self.vertices, self.producer, float(score), self.remote)

    def sorted_vertices(self, g: CompGraph) -> list[str]:
        return sorted(self.vertices, key=g.topo_index.__getitem__)


@dataclass(frozen=True)
class FusionPlan:
    patterns: tuple[FusionPattern, ...] = ()
    total_score: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "patterns", tuple(self.patterns))
        if self.total_score is None:
            object.__setattr__(self, "total_score", float(sum(p.score for p in self.patterns)))

    @property
    def covered(self) -> frozenset[str]:
        return frozenset().union(*(p.vertices for p in self.patterns)) if self.patterns else frozenset()

    def kernel_count(self, g: CompGraph) -> int:
        """Memory-intensive kernels: one per pattern plus one per unfused fusable vertex."""
        covered = self.covered
        return len(self.patterns) + sum(1 for v in g.fusable_vertices if v not in covered)


def contraction_creates_cycle(g: CompGraph, p: FusionPattern | Iterable[str]) -> bool:
    """True iff some path leaves the vertex set and re-enters it through an outside vertex."""
    verts = p.vertices if isinstance(p, FusionPattern) else frozenset(p)
    cons = g.consumers
    topo = g.topo_index
    # a re-entry can only land at or before the set's last vertex in topological order
    horizon = max((topo[v] for v in verts), default=-1)
    frontier = deque(c for v in verts for c in cons[v] if c not in verts and topo[c] < horizon)
    seen = set(frontier)
    while frontier:
        u = frontier.popleft()
        for c in cons[u]:
            if c in verts:
                return True
            if c not in seen and topo[c] < horizon:
                seen.add(c)
                frontier.append(c)
    return False


def is_connected(g: CompGraph, vertices: Iterable[str]) -> bool:
    verts = set(vertices)
    if not verts:
        return True
    start = next(iter(verts))
    seen = {start}
    stack = [start]
    while stack:
        v = stack.pop()
        nbrs = list(g.nodes[v].operands) + list(g.consumers[v])
        for n in nbrs:
            if n in verts and n not in seen:
                seen.add(n)
                stack.append(n)
    return len(seen) == len(verts)


def pattern_outputs(g: CompGraph, vertices: Iterable[str]) -> list[str]:
    """Vertices whose value escapes the pattern (graph outputs or outside consumers)."""
    verts = frozenset(vertices)
    outs = set(g.outputs)
    res = [v for v in verts if v in outs or any(c not in verts for c in g.consumers[v])]
    return sorted(res, key=g.topo_index.__getitem__)


def pattern_inputs(g: CompGraph, vertices: Iterable[str]) -> list[str]:
    """Outside vertices read by the pattern, in topological order."""
    verts = frozenset(vertices)
    ins = {op for v in verts for op in g.nodes[v].operands if op not in verts}
    return sorted(ins, key=g.topo_index.__getitem__)


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    message: str

    def __str__(self) -> str:
        return f"{self.severity}: {self.message}"


def validate_plan(g: CompGraph, s: FusionPlan, rel_tol: float = 1e-9) -> list[Diagnostic]:
    """Check disjointness, per-pattern acyclicity and score consistency.

    Returns a list of diagnostics; the plan is acceptable iff none has severity ``error``.
    """
    diags: list[Diagnostic] = []
    owner: dict[str, int] = {}
    for i, p in enumerate(s.patterns):
        missing = sorted(v for v in p.vertices if v not in g.nodes)
        if missing:
            diags.append(Diagnostic("error", f"pattern {i}: unknown vertices {missing}"))
            continue
        if p.producer not in p.vertices:
            diags.append(Diagnostic("error", f"pattern {i}: producer {p.producer} not in pattern"))
        for v in g.sort_ids(p.vertices):
            if not g.fusable(v):
                diags.append(Diagnostic("error", f"pattern {i}: {v} ({g[v].kind.value}) is not fusable"))
            if v in owner:
                diags.append(Diagnostic("error", f"patterns {owner[v]} and {i} share vertex {v}"))
            else:
                owner[v] = i
        if contraction_creates_cycle(g, p):
            diags.append(Diagnostic("error", f"pattern {i}: contraction creates a cycle"))
        if not p.remote and not is_connected(g, p.vertices):
            diags.append(Diagnostic("error", f"pattern {i}: disconnected but not flagged remote"))
        for r in pattern_outputs(g, p.vertices):
            if g.op_class(r) is OpClass.SHAPE:
                diags.append(Diagnostic("warning", f"pattern {i}: shape op {r} is a pattern root"))
    expected = sum(p.score for p in s.patterns)
    if not math.isclose(s.total_score, expected, rel_tol=rel_tol, abs_tol=1e-9):
        diags.append(Diagnostic("error", f"total_score {s.total_score} != sum of pattern scores {expected}"))
    return diags


def plan_errors(diags: Iterable[Diagnostic]) -> list[Diagnostic]:
    return [d for d in diags if d.severity == "error"]
