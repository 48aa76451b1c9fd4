"""Schedule templates, composition schemes and the producer/consumer locality rule.

Parallel mappings (G blocks of B threads, T = G*B threads, W = T/warp warps):

* thread scheme: element ``e`` belongs to thread ``e mod T`` (grid-stride loop).
  A thread-scheme reduction walks its whole row serially.
* warp scheme: element ``e`` belongs to warp ``e mod W`` and ends up in lane 0.
  A warp reduction has lane ``l`` accumulate inner positions ``j = l mod warp``.
* block scheme: element ``e`` belongs to block ``e mod G`` and ends up in shared
  memory slot ``e // G``. A block reduction has thread ``j mod B`` accumulate and
  thread 0 store; a block elementwise op has thread ``(e // G) mod B`` compute it.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum, IntEnum

import numpy as np

from .device_model import LaunchDims
from .errors import UnsupportedClass
from .graph_ir import OpClass, TensorShape
from . import indexing


class CompositionScheme(str, Enum):
    KERNEL_PACKING = "KernelPacking"
    THREAD = "ThreadComposition"
    WARP = "WarpComposition"
    BLOCK = "BlockComposition"


class Placement(str, Enum):
    THREAD_REGISTER = "thread_register"
    WARP_LANE0 = "warp_lane0_register"
    SHARED = "shared_memory"
    GLOBAL = "global_memory"


class Scope(IntEnum):
    """Reuse scopes, ordered from narrowest to widest. GRID is never reachable by reuse."""

    NONE = 0
    THREAD = 1
    WARP = 2
    BLOCK = 3
    GRID = 4


@dataclass(frozen=True)
class ScheduleTemplate:
    op_class: OpClass
    scheme: CompositionScheme
    output_placement: Placement
    reuse_scope: Scope

    def __post_init__(self):
        if self.scheme is CompositionScheme.WARP:
            assert self.output_placement is Placement.WARP_LANE0 and self.reuse_scope is Scope.WARP
        elif self.scheme is CompositionScheme.BLOCK:
            assert self.output_placement is Placement.SHARED and self.reuse_scope is Scope.BLOCK
        else:
            assert self.reuse_scope is Scope.NONE

    @property
    def name(self) -> str:
        return {
            CompositionScheme.KERNEL_PACKING: "thread",
            CompositionScheme.THREAD: "thread",
            CompositionScheme.WARP: "warp",
            CompositionScheme.BLOCK: "block",
        }[self.scheme]

    @property
    def sort_key(self) -> tuple[int, str]:
        return (_SCHEME_ORDER[self.scheme], self.op_class.value)

    @property
    def holds_scope(self) -> Scope:
        """Widest scope from which consumers may read the value."""
        if self.scheme is CompositionScheme.WARP:
            return Scope.WARP
        if self.scheme is CompositionScheme.BLOCK:
            return Scope.BLOCK
        return Scope.THREAD


_SCHEME_ORDER = {
    CompositionScheme.KERNEL_PACKING: 0,
    CompositionScheme.THREAD: 0,
    CompositionScheme.WARP: 1,
    CompositionScheme.BLOCK: 2,
}


def _thread_template(cls: OpClass) -> ScheduleTemplate:
    return ScheduleTemplate(cls, CompositionScheme.THREAD, Placement.THREAD_REGISTER, Scope.NONE)


_CATALOG: dict[OpClass, tuple[ScheduleTemplate, ...]] = {
    OpClass.LIGHT: (_thread_template(OpClass.LIGHT),),
    OpClass.SHAPE: (_thread_template(OpClass.SHAPE),),
    **{
        cls: (
            _thread_template(cls),
            ScheduleTemplate(cls, CompositionScheme.WARP, Placement.WARP_LANE0, Scope.WARP),
            ScheduleTemplate(cls, CompositionScheme.BLOCK, Placement.SHARED, Scope.BLOCK),
        )
        for cls in (OpClass.EXPENSIVE, OpClass.REDUCTION)
    },
}


def schedules_for(cls: OpClass) -> tuple[ScheduleTemplate, ...]:
    if cls not in _CATALOG:
        raise UnsupportedClass(f"no schedules for {cls.value}")
    return _CATALOG[cls]


# -- parallel mappings ----------------------------------------------------------------------------


def owner_thread(template: ScheduleTemplate, elems: np.ndarray, ld: LaunchDims, warp: int) -> np.ndarray:
    """Global id of the thread that holds each produced element's final value."""
    elems = np.asarray(elems, dtype=np.int64)
    G, B = ld.grid, ld.block
    T = G * B
    if template.scheme is CompositionScheme.WARP:
        return (elems % (T // warp)) * warp
    if template.scheme is CompositionScheme.BLOCK:
        block = elems % G
        if template.op_class is OpClass.REDUCTION:
            return block * B
        return block * B + (elems // G) % B
    return elems % T


def elementwise_threads(template: ScheduleTemplate, elems: np.ndarray, ld: LaunchDims, warp: int) -> np.ndarray:
    """Thread computing each element of an elementwise (or shape-op) group root."""
    return owner_thread(template, elems, ld, warp)


def reduction_threads(template: ScheduleTemplate, out_elems: np.ndarray, inner: np.ndarray, ld: LaunchDims,
                      warp: int) -> np.ndarray:
    """Thread accumulating input position ``inner`` of reduction output ``out_elems``."""
    out_elems = np.asarray(out_elems, dtype=np.int64)
    inner = np.asarray(inner, dtype=np.int64)
    G, B = ld.grid, ld.block
    T = G * B
    if template.scheme is CompositionScheme.WARP:
        return (out_elems % (T // warp)) * warp + inner % warp
    if template.scheme is CompositionScheme.BLOCK:
        return (out_elems % G) * B + inner % B
    return out_elems % T


def iteration_count(template: ScheduleTemplate, n_out: int, ld: LaunchDims, warp: int) -> int:
    """Loop trip count of the busiest executor for a group root with ``n_out`` outputs."""
    G, B = ld.grid, ld.block
    T = G * B
    if template.scheme is CompositionScheme.WARP:
        W = T // warp
        return -(-n_out // W)
    if template.scheme is CompositionScheme.BLOCK:
        per_block = -(-n_out // G)
        if template.op_class is OpClass.REDUCTION:
            return per_block
        return -(-per_block // B)
    return -(-n_out // T)


def shared_slots(n_out: int, ld: LaunchDims) -> int:
    """Shared-memory slots one block needs to hold its share of a block-placed tensor."""
    return -(-n_out // ld.grid)


def common_scope(t1: np.ndarray, t2: np.ndarray, ld: LaunchDims, warp: int) -> np.ndarray:
    """Narrowest scope shared by two thread ids (elementwise over arrays)."""
    t1 = np.asarray(t1, np.int64)
    t2 = np.asarray(t2, np.int64)
    out = np.full(np.broadcast(t1, t2).shape, int(Scope.GRID), dtype=np.int64)
    out[(t1 // ld.block) == (t2 // ld.block)] = int(Scope.BLOCK)
    out[(t1 // warp) == (t2 // warp)] = int(Scope.WARP)
    out[t1 == t2] = int(Scope.THREAD)
    return out


def required_scope(producer: ScheduleTemplate, reader_threads: np.ndarray, producer_elems: np.ndarray,
                   ld: LaunchDims, warp: int) -> Scope:
    """Narrowest scope containing every (reader thread, producer element) pair."""
    if len(reader_threads) == 0:
        return Scope.NONE
    owners = owner_thread(producer, producer_elems, ld, warp)
    return Scope(int(common_scope(reader_threads, owners, ld, warp).max()))


def pairs_compatible(producer: ScheduleTemplate, reader_threads: np.ndarray, producer_elems: np.ndarray,
                     ld: LaunchDims, warp: int) -> bool:
    if producer.op_class is OpClass.LIGHT:
        return True
    return required_scope(producer, reader_threads, producer_elems, ld, warp) <= producer.holds_scope


@dataclass(frozen=True)
class LocalityRequirement:
    scope: Scope
    description: str


def consumer_read_pairs(consumer: ScheduleTemplate, producer_shape: TensorShape, consumer_shape: TensorShape,
                        ld: LaunchDims, warp: int, reduce_axes: tuple[int, ...] | None = None,
                        broadcast_dims: tuple[int, ...] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(reader thread, producer element) pairs for a consumer reading the producer directly.

    ``consumer_shape`` is the tensor the consumer iterates: its output for
    elementwise consumers, its input for reductions (``reduce_axes`` given).
    The consumer reads the producer elementwise when shapes match, otherwise
    through a broadcast along ``broadcast_dims`` (default: leading axes).
    """
    n = consumer_shape.element_count
    elems = np.arange(n, dtype=np.int64)
    if reduce_axes is not None:
        out_e, inner = indexing.reduce_output_of_input(elems, consumer_shape.dims, tuple(reduce_axes))
        threads = reduction_threads(consumer, out_e, inner, ld, warp)
    else:
        threads = elementwise_threads(consumer, elems, ld, warp)
    if producer_shape.dims == consumer_shape.dims:
        prod = elems
    else:
        if broadcast_dims is None:
            broadcast_dims = tuple(range(producer_shape.rank))
        if any(consumer_shape.dims[d] != producer_shape.dims[i] for i, d in enumerate(broadcast_dims)):
            raise ValueError(f"cannot relate {producer_shape} to {consumer_shape} via dims {broadcast_dims}")
        prod = indexing.broadcast_index(elems, consumer_shape.dims, producer_shape.dims, tuple(broadcast_dims))
    return threads, prod


def locality_requirement(producer: ScheduleTemplate, consumer: ScheduleTemplate, producer_shape: TensorShape,
                         consumer_shape: TensorShape, ld: LaunchDims, warp: int = 32,
                         reduce_axes: tuple[int, ...] | None = None,
                         broadcast_dims: tuple[int, ...] | None = None) -> LocalityRequirement:
    threads, prod = consumer_read_pairs(consumer, producer_shape, consumer_shape, ld, warp, reduce_axes,
                                        broadcast_dims)
    scope = required_scope(producer, threads, prod, ld, warp)
    return LocalityRequirement(scope, f"{consumer.name} consumer of {consumer_shape} reads {producer.name} "
                                      f"producer of {producer_shape} within {scope.name.lower()} scope")


def locality_compatible(producer: ScheduleTemplate, consumer: ScheduleTemplate, producer_shape: TensorShape,
                        consumer_shape: TensorShape, ld: LaunchDims, warp: int = 32,
                        reduce_axes: tuple[int, ...] | None = None,
                        broadcast_dims: tuple[int, ...] | None = None) -> bool:
    """Whether every producer element a consumer thread reads lies in the producer's reuse scope.

    Light producers are always compatible: the consumer recomputes them.
    """
    if producer.op_class is OpClass.LIGHT:
        return True
    req = locality_requirement(producer, consumer, producer_shape, consumer_shape, ld, warp, reduce_axes,
                               broadcast_dims)
    return req.scope <= producer.holds_scope


def all_template_pairs() -> list[tuple[ScheduleTemplate, ScheduleTemplate]]:
    templates = [t for cls in _CATALOG for t in _CATALOG[cls]]
    return list(itertools.product(templates, templates))
