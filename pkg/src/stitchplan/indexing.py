"""Vectorized index algebra: map output element ids to operand element ids.

All element ids are row-major linear indices (int64 numpy arrays).
"""

from __future__ import annotations

import numpy as np

from .errors import InfeasibleSchedule
from .graph_ir import ELEMENTWISE_KINDS, OpKind, OpNode, TensorShape


def _unravel(idx: np.ndarray, dims: tuple[int, ...]) -> tuple[np.ndarray, ...]:
    if not dims:
        return ()
    return np.unravel_index(idx, dims)


def _ravel(coords: tuple[np.ndarray, ...] | list[np.ndarray], dims: tuple[int, ...], like: np.ndarray) -> np.ndarray:
    if not dims:
        return np.zeros_like(like, dtype=np.int64)
    return np.ravel_multi_index(tuple(coords), dims).astype(np.int64)


def broadcast_index(out_idx: np.ndarray, out_dims: tuple[int, ...], in_dims: tuple[int, ...],
                    dims: tuple[int, ...]) -> np.ndarray:
    """Operand element read by each broadcast output element; ``dims[i]`` is the output axis of operand axis i."""
    coords = _unravel(out_idx, out_dims)
    return _ravel([coords[d] for d in dims], in_dims, out_idx)


def transpose_index(out_idx: np.ndarray, out_dims: tuple[int, ...], perm: tuple[int, ...]) -> np.ndarray:
    coords = _unravel(out_idx, out_dims)
    in_dims = [0] * len(perm)
    in_coords: list[np.ndarray] = [None] * len(perm)  # type: ignore[list-item]
    for i, p in enumerate(perm):
        in_coords[p] = coords[i]
        in_dims[p] = out_dims[i]
    return _ravel(in_coords, tuple(in_dims), out_idx)


def slice_index(out_idx: np.ndarray, out_dims: tuple[int, ...], in_dims: tuple[int, ...],
                start: tuple[int, ...]) -> np.ndarray:
    coords = _unravel(out_idx, out_dims)
    return _ravel([c + s for c, s in zip(coords, start)], in_dims, out_idx)


def gather_row_index(out_idx: np.ndarray, out_dims: tuple[int, ...]) -> np.ndarray:
    """Element of the (rank-1) index operand read by each gather output element."""
    return _unravel(out_idx, out_dims)[0].astype(np.int64)


def gather_data_index(out_idx: np.ndarray, out_dims: tuple[int, ...], data_dims: tuple[int, ...],
                      rows: np.ndarray) -> np.ndarray:
    """Data element read by each gather output element given the loaded row indices."""
    coords = list(_unravel(out_idx, out_dims))
    coords[0] = np.clip(np.asarray(rows, dtype=np.int64), 0, data_dims[0] - 1)
    return _ravel(coords, data_dims, out_idx)


def reduce_split(in_dims: tuple[int, ...], axes: tuple[int, ...]) -> tuple[tuple[int, ...], tuple[int, ...]]:
    kept = tuple(d for i, d in enumerate(in_dims) if i not in axes)
    reduced = tuple(in_dims[a] for a in sorted(axes))
    return kept, reduced


def reduce_input_index(out_idx: np.ndarray, inner: np.ndarray, in_dims: tuple[int, ...],
                       axes: tuple[int, ...]) -> np.ndarray:
    """Input element for (output element, position within the reduced sub-space)."""
    kept_dims, red_dims = reduce_split(in_dims, axes)
    out_idx, inner = np.broadcast_arrays(np.asarray(out_idx, np.int64), np.asarray(inner, np.int64))
    kc = iter(_unravel(out_idx, kept_dims))
    rc = iter(_unravel(inner, red_dims))
    axes_set = set(axes)
    coords = [next(rc) if i in axes_set else next(kc) for i in range(len(in_dims))]
    return _ravel(coords, in_dims, out_idx)


def reduce_output_of_input(in_idx: np.ndarray, in_dims: tuple[int, ...],
                           axes: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`reduce_input_index`: (output element, inner position) per input element."""
    kept_dims, red_dims = reduce_split(in_dims, axes)
    coords = _unravel(in_idx, in_dims)
    axes_set = set(axes)
    kept = [c for i, c in enumerate(coords) if i not in axes_set]
    red = [coords[a] for a in sorted(axes)]
    return _ravel(kept, kept_dims, in_idx), _ravel(red, red_dims, in_idx)


def operand_index(node: OpNode, pos: int, out_idx: np.ndarray, operand_shape: TensorShape) -> np.ndarray:
    """Operand ``pos`` element read when computing output elements ``out_idx`` of ``node``.

    Reductions are excluded: their operand domain is iterated directly.
    """
    kind = node.kind
    out_dims = node.shape.dims
    if kind in ELEMENTWISE_KINDS:
        return out_idx
    if kind is OpKind.BROADCAST:
        return broadcast_index(out_idx, out_dims, operand_shape.dims, node.attr("dims"))
    if kind is OpKind.TRANSPOSE:
        return transpose_index(out_idx, out_dims, node.attr("perm"))
    if kind is OpKind.SLICE:
        return slice_index(out_idx, out_dims, operand_shape.dims, node.attr("start"))
    if kind is OpKind.GATHER:
        if pos == 1:
            return gather_row_index(out_idx, out_dims)
        raise InfeasibleSchedule(f"{node.id}: gather data index depends on runtime values")
    raise InfeasibleSchedule(f"{node.id}: no static index map for {kind.value}")
