"""Seeded random operator graphs and brute-force oracles shared by the tests."""

from __future__ import annotations

import itertools

import numpy as np

from stitchplan.explorer import delta_evaluate
from stitchplan.graph_ir import CompGraph, DType, OpKind, OpNode, TensorShape, contraction_creates_cycle, validate_graph
from stitchplan.planner import probe_plannable

ROWS, COLS = 8, 32
MAT = TensorShape((ROWS, COLS), DType.F32)
VEC = TensorShape((ROWS,), DType.F32)

LIGHT = (OpKind.ADD, OpKind.SUB, OpKind.MUL, OpKind.MAX, OpKind.MIN)
EXPENSIVE = (OpKind.EXP, OpKind.TANH)


def random_graph(seed: int, max_ops: int = 10) -> CompGraph:
    """A DAG of up to ``max_ops`` fusable ops over [8,32] matrices and [8] row vectors."""
    rng = np.random.default_rng(seed)
    nodes: list[OpNode] = [
        OpNode("p0", OpKind.PARAMETER, (), MAT),
        OpNode("p1", OpKind.PARAMETER, (), MAT),
        OpNode("p2", OpKind.PARAMETER, (), VEC),
    ]
    n_ops = int(rng.integers(4, max_ops + 1))
    for i in range(n_ops):
        mats = [n.id for n in nodes if n.shape == MAT]
        vecs = [n.id for n in nodes if n.shape == VEC]
        # prefer recent values so graphs are deep rather than flat
        def pick(pool):
            w = np.arange(1, len(pool) + 1, dtype=float) ** 2
            return pool[int(rng.choice(len(pool), p=w / w.sum()))]
        r = rng.random()
        vid = f"v{i}"
        if r < 0.40:
            pool = mats if rng.random() < 0.7 else vecs
            kind = LIGHT[int(rng.integers(len(LIGHT)))]
            nodes.append(OpNode(vid, kind, (pick(pool), pick(pool)), MAT if pool is mats else VEC))
        elif r < 0.58:
            pool = mats if rng.random() < 0.7 else vecs
            kind = EXPENSIVE[int(rng.integers(len(EXPENSIVE)))]
            nodes.append(OpNode(vid, kind, (pick(pool),), MAT if pool is mats else VEC))
        elif r < 0.80:
            kind = OpKind.REDUCE_SUM if rng.random() < 0.6 else OpKind.REDUCE_MAX
            nodes.append(OpNode(vid, kind, (pick(mats),), VEC, {"axes": (1,)}))
        else:
            nodes.append(OpNode(vid, OpKind.BROADCAST, (pick(vecs),), MAT, {"dims": (0,)}))
    used = {o for n in nodes for o in n.operands}
    outputs = [n.id for n in nodes if n.id not in used and n.kind is not OpKind.PARAMETER]
    keep = [n for n in nodes if n.kind is not OpKind.PARAMETER or n.id in used]
    return validate_graph(CompGraph({n.id: n for n in keep}, tuple(outputs)))


def valid_pattern(g: CompGraph, verts: frozenset[str], dev, models) -> bool:
    if len(verts) > models.max_pattern_size:
        return False
    if len(verts) > 1 and contraction_creates_cycle(g, verts):
        return False
    return probe_plannable(verts, g, dev, models)


def brute_force_optimum(g: CompGraph, dev, models) -> tuple[float, list[frozenset[str]]]:
    """Best total delta score over all sets of disjoint valid patterns (singletons score 0).

    Patterns need not be connected. Joint acyclicity of the chosen set is not
    enforced, so the value is an upper bound on what any legal plan can reach.
    """
    fv = list(g.fusable_vertices)
    n = len(fv)
    score: dict[int, float] = {}
    for mask in range(1, 1 << n):
        if bin(mask).count("1") < 2:
            continue
        verts = frozenset(fv[i] for i in range(n) if mask >> i & 1)
        if valid_pattern(g, verts, dev, models):
            f = delta_evaluate(verts, g, dev, models).f
            if f > 0:
                score[mask] = f
    best = [0.0] * (1 << n)
    choice: list[int] = [0] * (1 << n)
    for mask in range(1, 1 << n):
        low = mask & -mask
        best[mask] = best[mask ^ low]
        choice[mask] = 0
        rest = mask ^ low
        sub = rest
        while True:
            s = sub | low
            if s in score and score[s] + best[mask ^ s] > best[mask]:
                best[mask] = score[s] + best[mask ^ s]
                choice[mask] = s
            if sub == 0:
                break
            sub = (sub - 1) & rest
    pats = []
    mask = (1 << n) - 1
    while mask:
        s = choice[mask]
        if s:
            pats.append(frozenset(fv[i] for i in range(n) if s >> i & 1))
            mask ^= s
        else:
            mask ^= mask & -mask
    return best[(1 << n) - 1], pats


def first_fit(order, sizes, conflicts) -> int:
    """Place buffers in ``order`` at the lowest offset clear of already placed conflicting buffers."""
    placed: dict[int, tuple[int, int]] = {}
    for b in order:
        spans = sorted(placed[o] for o in conflicts[b] if o in placed)
        off = 0
        for lo, hi in spans:
            if off + sizes[b] <= lo:
                break
            off = max(off, hi)
        placed[b] = (off, off + sizes[b])
    return max((hi for _, hi in placed.values()), default=0)


def interference_optimum(sizes: list[int], ranges: list[tuple[int, int]]) -> int:
    """Exact minimum arena size: first-fit over every placement order (optimal for some order)."""
    n = len(sizes)
    conflicts = [
        {j for j in range(n) if j != i and ranges[i][0] <= ranges[j][1] and ranges[j][0] <= ranges[i][1]}
        for i in range(n)
    ]
    return min(first_fit(p, sizes, conflicts) for p in itertools.permutations(range(n)))
