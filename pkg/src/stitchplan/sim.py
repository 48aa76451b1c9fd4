"""Reference semantics and a SIMT interpreter for stitched-kernel programs.

The interpreter runs every thread of the grid in lockstep, one statement at a
time, with numpy arrays indexed by global thread id. Shared memory is a byte
array per block. Every shared byte remembers which thread wrote it, in which
barrier epoch, and for which buffer, so that unordered or stale reads fault
instead of silently depending on interleaving.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import indexing
from .errors import HappensBeforeFault, InputError, LocalityFault, SharedBoundsFault, SimFault
from .graph_ir import CompGraph, DType, FusionPlan, OpKind, TensorShape
from .kernel_text import Kernel, Phase, Stmt, parse_text


@dataclass(frozen=True)
class TensorValue:
    shape: TensorShape
    data: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(np.asarray(self.data, dtype=self.shape.dtype.np).reshape(-1))
        if data.size != self.shape.element_count:
            raise InputError(f"{self.shape} needs {self.shape.element_count} elements, got {data.size}")
        object.__setattr__(self, "data", data)

    def array(self) -> np.ndarray:
        return self.data.reshape(self.shape.dims)


# -- elementwise semantics (shared by reference and interpreter) ------------------------------------


def apply_elementwise(kind: str, *args: np.ndarray) -> np.ndarray:
    dt = args[0].dtype
    if kind == "add":
        return args[0] + args[1]
    if kind == "sub":
        return args[0] - args[1]
    if kind == "mul":
        return args[0] * args[1]
    if kind == "div":
        a, b = args
        if np.issubdtype(dt, np.integer):
            with np.errstate(divide="ignore", invalid="ignore"):
                q = np.trunc(a.astype(np.float64) / np.where(b == 0, 1, b))
            return np.where(b == 0, 0, q).astype(dt)
        with np.errstate(divide="ignore", invalid="ignore"):
            return a / b
    if kind == "max":
        return np.maximum(args[0], args[1])
    if kind == "min":
        return np.minimum(args[0], args[1])
    with np.errstate(all="ignore"):
        if kind == "power":
            return np.power(args[0], args[1])
        if kind == "exp":
            return np.exp(args[0])
        if kind == "tanh":
            return np.tanh(args[0])
        if kind == "log":
            return np.log(args[0])
        if kind == "rsqrt":
            return (np.ones((), dt) / np.sqrt(args[0])).astype(dt)
    raise SimFault(f"unknown elementwise op {kind!r}")


def _identity(op: str, dt: np.dtype):
    if op == "sum":
        return dt.type(0)
    if np.issubdtype(dt, np.integer):
        return np.iinfo(dt).min
    return dt.type(-np.inf)


def _combine(op: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a + b if op == "sum" else np.maximum(a, b)


def _acc_np(dt: DType) -> np.dtype:
    return np.dtype(np.int32) if dt is DType.I32 else np.dtype(np.float32)


# -- reference evaluation -------------------------------------------------------------------------


def _check_inputs(g: CompGraph, inputs: Mapping[str, TensorValue]) -> None:
    for v in g.topo_order:
        if g[v].kind is not OpKind.PARAMETER:
            continue
        if v not in inputs:
            raise InputError(f"missing input for parameter {v}")
        if inputs[v].shape != g[v].shape:
            raise InputError(f"input {v}: expected {g[v].shape}, got {inputs[v].shape}")


def eval_node(g: CompGraph, v: str, values: Mapping[str, np.ndarray]) -> np.ndarray:
    """One op on whole arrays (shaped numpy values in, shaped value out)."""
    node = g[v]
    kind = node.kind
    dt = node.shape.dtype.np
    ops = [values[o] for o in node.operands]
    if kind is OpKind.CONSTANT:
        return np.full(node.shape.dims, node.attr("value", 0), dtype=dt)
    if kind.value in ("add", "sub", "mul", "div", "max", "min", "power", "exp", "tanh", "log", "rsqrt"):
        return apply_elementwise(kind.value, *ops)
    if kind in (OpKind.REDUCE_SUM, OpKind.REDUCE_MAX):
        axes = tuple(node.attr("axes"))
        x = ops[0]
        if kind is OpKind.REDUCE_MAX:
            return x.max(axis=axes).astype(dt)
        acc = np.int64 if np.issubdtype(x.dtype, np.integer) else np.float64
        return x.astype(acc).sum(axis=axes).astype(dt)
    if kind is OpKind.BROADCAST:
        dims = tuple(node.attr("dims"))
        out_rank = len(node.shape.dims)
        shape = [1] * out_rank
        for i, d in enumerate(dims):
            shape[d] = ops[0].shape[i]
        return np.broadcast_to(ops[0].reshape(shape), node.shape.dims).copy()
    if kind is OpKind.TRANSPOSE:
        return np.transpose(ops[0], tuple(node.attr("perm"))).copy()
    if kind is OpKind.SLICE:
        sl = tuple(slice(s, l) for s, l in zip(node.attr("start"), node.attr("limit")))
        return ops[0][sl].copy()
    if kind is OpKind.GATHER:
        data, idx = ops
        return data[np.clip(idx.astype(np.int64), 0, data.shape[0] - 1)]
    if kind is OpKind.OPAQUE_COMPUTE:
        if len(ops) == 1:
            return ops[0].copy()
        return np.matmul(ops[0].astype(np.float64), ops[1].astype(np.float64)).astype(dt)
    raise SimFault(f"{v}: cannot evaluate {kind.value}")


def eval_reference(g: CompGraph, inputs: Mapping[str, TensorValue]) -> dict[str, TensorValue]:
    _check_inputs(g, inputs)
    values: dict[str, np.ndarray] = {}
    for v in g.topo_order:
        if g[v].kind is OpKind.PARAMETER:
            values[v] = inputs[v].array()
        else:
            values[v] = eval_node(g, v, values)
    return {o: TensorValue(g[o].shape, values[o]) for o in g.outputs}


# -- SIMT interpreter -----------------------------------------------------------------------------


@dataclass
class _Local:
    """Per-element values parked in a thread's registers, tagged with the writing thread."""

    values: np.ndarray
    owner: np.ndarray


@dataclass
class SimMachine:
    kernel: Kernel
    globals: dict[str, np.ndarray]
    shared: np.ndarray = field(init=False)
    writer: np.ndarray = field(init=False)
    wepoch: np.ndarray = field(init=False)
    tag: np.ndarray = field(init=False)
    reader: np.ndarray = field(init=False)
    repoch: np.ndarray = field(init=False)
    epoch: int = 0
    locals: dict[str, _Local] = field(default_factory=dict)
    written: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        k = self.kernel
        nbytes = max(k.shared_bytes, 1)
        self.shared = np.zeros((k.grid, nbytes), np.uint8)
        self.writer = np.full((k.grid, nbytes), -1, np.int64)
        self.wepoch = np.full((k.grid, nbytes), -1, np.int64)
        self.tag = np.full((k.grid, nbytes), -1, np.int64)
        self.reader = np.full((k.grid, nbytes), -1, np.int64)
        self.repoch = np.full((k.grid, nbytes), -1, np.int64)
        self.decls = {d.name: (i, d) for i, d in enumerate(k.shared)}
        self.tid = np.arange(k.grid * k.block, dtype=np.int64)
        for name, shape in k.outputs:
            self.globals.setdefault(name, np.zeros(shape.element_count, shape.dtype.np))
            self.written[name] = np.zeros(shape.element_count, bool)

    # shared memory -------------------------------------------------------------------------------

    def _bytes(self, name: str, blocks: np.ndarray, slots: np.ndarray):
        if name not in self.decls:
            raise SimFault(f"unknown shared buffer {name!r}")
        bid, d = self.decls[name]
        isz = d.dtype.itemsize
        lo = slots * isz
        if np.any(slots < 0) or np.any(lo + isz > d.size):
            bad = int(slots[(slots < 0) | (lo + isz > d.size)][0])
            raise SharedBoundsFault(f"{name}: slot {bad} outside {d.size} bytes")
        addr = d.offset + lo[:, None] + np.arange(isz)[None, :]
        return bid, d, np.broadcast_to(blocks[:, None], addr.shape), addr

    def shared_write(self, name: str, threads: np.ndarray, blocks: np.ndarray, slots: np.ndarray,
                     vals: np.ndarray) -> None:
        bid, d, b, a = self._bytes(name, blocks, slots)
        same_epoch = (self.repoch[b, a] == self.epoch) & (self.reader[b, a] >= 0) & (
            self.reader[b, a] != threads[:, None])
        if np.any(same_epoch):
            raise HappensBeforeFault(f"{name}: write races with a read in the same barrier interval")
        raw = np.ascontiguousarray(vals.astype(d.dtype.np)).view(np.uint8).reshape(len(vals), -1)
        self.shared[b, a] = raw
        self.writer[b, a] = threads[:, None]
        self.wepoch[b, a] = self.epoch
        self.tag[b, a] = bid

    def shared_read(self, name: str, threads: np.ndarray, blocks: np.ndarray, slots: np.ndarray) -> np.ndarray:
        bid, d, b, a = self._bytes(name, blocks, slots)
        if np.any(self.tag[b, a] != bid):
            raise HappensBeforeFault(f"{name}: read of bytes not holding this buffer (unwritten or reused)")
        racy = (self.wepoch[b, a] == self.epoch) & (self.writer[b, a] != threads[:, None])
        if np.any(racy):
            raise HappensBeforeFault(f"{name}: read of a value written by another thread without a barrier")
        self.reader[b, a] = threads[:, None]
        self.repoch[b, a] = self.epoch
        return np.ascontiguousarray(self.shared[b, a]).view(d.dtype.np).reshape(-1)

    # execution -----------------------------------------------------------------------------------

    def run(self) -> None:
        for item in self.kernel.items:
            if isinstance(item, str):
                self.epoch += 1
            else:
                self.run_phase(item)

    def run_phase(self, ph: Phase) -> None:
        k = self.kernel
        G, B, w = k.grid, k.block, k.warp
        T = G * B
        W = T // w
        tid = self.tid
        lane = tid % w
        block = tid // B
        n = ph.extent
        if ph.scheme == "thread":
            iters = -(-n // T)
        elif ph.scheme == "warp":
            iters = -(-n // W)
        elif ph.kind == "reduce":
            iters = -(-n // G)
        else:
            iters = -(-(-(-n // G)) // B)
        for i in range(iters):
            if ph.scheme == "thread":
                e = tid + i * T
                active = e < n
            elif ph.scheme == "warp":
                e = tid // w + i * W
                active = e < n
                if ph.kind == "map":
                    active &= lane == 0
            elif ph.kind == "reduce":
                e = block + i * G
                active = e < n
            else:
                e = ((tid % B) + i * B) * G + block
                active = e < n
            regs: dict[str, np.ndarray] = {"%e": e}
            if ph.kind == "reduce":
                self._reduce_loop(ph, regs, active, e)
            self._exec(ph, ph.body, regs, active)

    def _reduce_loop(self, ph: Phase, regs: dict, active: np.ndarray, e: np.ndarray) -> None:
        k = self.kernel
        K = ph.inner_extent
        tid = self.tid
        acc_dt = _acc_np(ph.dtype)
        acc = np.full(len(tid), _identity(ph.op, acc_dt), acc_dt)
        if ph.scheme == "thread":
            starts, stride = np.zeros_like(tid), 1
        elif ph.scheme == "warp":
            starts, stride = tid % k.warp, k.warp
        else:
            starts, stride = tid % k.block, k.block
        steps = int(-(-K // stride))
        for t in range(steps):
            j = starts + t * stride
            act = active & (j < K)
            regs["%j"] = j
            for s in ph.loop:
                if s.op == "acc":
                    x = regs[s.args[0]]
                    acc[act] = _combine(ph.op, acc[act], x[act].astype(acc_dt))
                else:
                    self._stmt(s, regs, act)
        regs["%acc"] = acc

    def _exec(self, ph: Phase, stmts: list[Stmt], regs: dict, active: np.ndarray) -> None:
        k = self.kernel
        act = active.copy()
        for s in stmts:
            if s.op == "leader":
                lead = (self.tid % k.warp == 0) if ph.scheme == "warp" else (self.tid % k.block == 0)
                act &= lead
            elif s.op in ("reduce.thread", "reduce.warp", "partial_reduce", "partial_store", "barrier"):
                self._reduce_stmt(ph, s, regs, act)
            else:
                self._stmt(s, regs, act, ph)

    def _reduce_stmt(self, ph: Phase, s: Stmt, regs: dict, act: np.ndarray) -> None:
        k = self.kernel
        tid = self.tid
        if s.op == "barrier":
            self.epoch += 1
        elif s.op == "reduce.thread":
            regs[s.dst] = regs["%acc"].copy()
        elif s.op == "reduce.warp":
            v = regs["%acc"].reshape(-1, k.warp).copy()
            h = k.warp
            while h > 1:  # lane-ascending pairwise tree
                h //= 2
                v[:, :h] = _combine(ph.op, v[:, :h], v[:, h:2 * h])
            regs[s.dst] = np.repeat(v[:, 0], k.warp)
        elif s.op == "partial_store":
            sel = act & (tid % k.warp == 0)
            t = tid[sel]
            self.shared_write(s.args[0], t, t // k.block, (t % k.block) // k.warp, regs[s.args[1]][sel])
        elif s.op == "partial_reduce":
            nw = k.block // k.warp
            t = tid[act]
            acc_dt = _acc_np(ph.dtype)
            out = np.full(len(t), _identity(ph.op, acc_dt), acc_dt)
            for slot in range(nw):
                vals = self.shared_read(s.args[0], t, t // k.block, np.full(len(t), slot, np.int64))
                out = _combine(ph.op, out, vals.astype(acc_dt))
            res = np.zeros(len(tid), acc_dt)
            res[act] = out
            regs[s.dst] = res

    def _local(self, name: str, n: int, dtype: np.dtype) -> _Local:
        if name not in self.locals:
            self.locals[name] = _Local(np.zeros(n, dtype), np.full(n, -1, np.int64))
        return self.locals[name]

    def _stmt(self, s: Stmt, regs: dict, act: np.ndarray, ph: Phase | None = None) -> None:
        k = self.kernel
        op = s.op
        tid = self.tid
        sel = np.nonzero(act)[0]

        def arg(i: int) -> np.ndarray:
            a = s.args[i]
            if a not in regs:
                raise SimFault(f"use of undefined register {a}")
            return regs[a][sel]

        def put(vals: np.ndarray, dtype=None) -> None:
            dtype = dtype or vals.dtype
            if s.dst not in regs or regs[s.dst].dtype != dtype:
                regs[s.dst] = np.zeros(len(tid), dtype)
            regs[s.dst][sel] = vals

        if op == "const":
            dt = DType(s.args[0]).np
            put(np.full(len(sel), float(s.args[1]) if dt.kind == "f" else int(float(s.args[1])), dt), dt)
        elif op == "gload":
            name = s.args[0]
            if name not in self.globals:
                raise SimFault(f"unknown global tensor {name!r}")
            buf = self.globals[name]
            idx = arg(1)
            if np.any((idx < 0) | (idx >= buf.size)):
                raise SimFault(f"global load of {name} out of bounds")
            put(buf[idx], buf.dtype)
        elif op == "gstore":
            name = s.args[0]
            buf = self.globals.get(name)
            if buf is None or name not in self.written:
                raise SimFault(f"store to non-output tensor {name!r}")
            idx = arg(1)
            if np.any((idx < 0) | (idx >= buf.size)):
                raise SimFault(f"global store to {name} out of bounds")
            buf[idx] = arg(2).astype(buf.dtype)
            self.written[name][idx] = True
        elif op in ("tstore", "lane0_store"):
            dt = ph.dtype.np
            loc = self._local(s.args[0], ph.extent, dt)
            idx = arg(1)
            loc.values[idx] = arg(2).astype(dt)
            loc.owner[idx] = tid[sel]
        elif op in ("tload", "shuffle_from_lane0"):
            loc = self.locals.get(s.args[0])
            if loc is None:
                raise SimFault(f"{op} of {s.args[0]} before it was produced")
            idx = arg(1)
            owner = loc.owner[idx]
            me = tid[sel]
            ok = owner == me if op == "tload" else (owner == (me // k.warp) * k.warp)
            if not np.all(ok):
                bad = int(np.nonzero(~ok)[0][0])
                raise LocalityFault(f"{op} {s.args[0]}[{int(idx[bad])}] by thread {int(me[bad])}: "
                                    f"value held by thread {int(owner[bad])}")
            put(loc.values[idx])
        elif op in ("shared_store", "shared_load"):
            idx = arg(1)
            me = tid[sel]
            blocks = idx % k.grid
            if np.any(blocks != me // k.block):
                raise LocalityFault(f"{op} {s.args[0]}: element held by another block")
            if op == "shared_store":
                self.shared_write(s.args[0], me, blocks, idx // k.grid, arg(2))
            else:
                put(self.shared_read(s.args[0], me, blocks, idx // k.grid))
        elif op.startswith("idx."):
            put(self._index(s, [arg(i) for i in range(len(s.args))]), np.dtype(np.int64))
        elif op in ("add", "sub", "mul", "div", "max", "min", "power", "exp", "tanh", "log", "rsqrt"):
            put(apply_elementwise(op, *(arg(i) for i in range(len(s.args)))))
        else:
            raise SimFault(f"statement {op!r} not allowed here")

    @staticmethod
    def _index(s: Stmt, a: list[np.ndarray]) -> np.ndarray:
        op = s.op
        if op == "idx.bcast":
            return indexing.broadcast_index(a[0], s.attr("out"), s.attr("in"), s.attr("dims"))
        if op == "idx.transpose":
            return indexing.transpose_index(a[0], s.attr("out"), s.attr("perm"))
        if op == "idx.slice":
            return indexing.slice_index(a[0], s.attr("out"), s.attr("in"), s.attr("start"))
        if op == "idx.gather_row":
            return indexing.gather_row_index(a[0], s.attr("out"))
        if op == "idx.gather_data":
            return indexing.gather_data_index(a[0], s.attr("out"), s.attr("data"), a[1])
        if op == "idx.reduce_in":
            return indexing.reduce_input_index(a[0], a[1], s.attr("in"), s.attr("axes"))
        raise SimFault(f"unknown index op {op}")


def run_kernel(k: Kernel, params: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Interpret one stitched kernel; returns its outputs as flat arrays."""
    globals_ = {}
    for name, shape in k.params:
        if name not in params:
            raise InputError(f"kernel {k.name}: missing parameter {name}")
        arr = np.asarray(params[name], dtype=shape.dtype.np).reshape(-1)
        if arr.size != shape.element_count:
            raise InputError(f"kernel {k.name}: parameter {name} has {arr.size} elements, expected {shape}")
        globals_[name] = arr
    m = SimMachine(k, globals_)
    m.run()
    out = {}
    for name, _ in k.outputs:
        if not m.written[name].all():
            missing = int(np.nonzero(~m.written[name])[0][0])
            raise SimFault(f"kernel {k.name}: output {name}[{missing}] never written")
        out[name] = m.globals[name]
    return out


def eval_plan(g: CompGraph, plan: FusionPlan, kernel_plans: Mapping, inputs: Mapping[str, TensorValue]
              ) -> dict[str, TensorValue]:
    """Run the plan: fused patterns through their emitted programs, the rest op by op.

    ``kernel_plans`` maps a pattern's vertex set to its KernelPlan.
    """
    from .planner import emit_kernel_text

    _check_inputs(g, inputs)
    owner: dict[str, int] = {}
    for i, p in enumerate(plan.patterns):
        for v in p.vertices:
            owner[v] = i
    values: dict[str, np.ndarray] = {}
    done_patterns: set[int] = set()
    # A pattern runs once the first of its vertices comes up in topological order; this is
    # valid because plans are acyclic after contraction.
    pending = list(g.topo_order)
    progress = True
    while pending and progress:
        progress = False
        rest = []
        for v in pending:
            node = g[v]
            if v in values:
                continue
            if node.kind is OpKind.PARAMETER:
                values[v] = inputs[v].array()
                progress = True
                continue
            if v not in owner:
                if all(o in values for o in node.operands):
                    values[v] = eval_node(g, v, values)
                    progress = True
                else:
                    rest.append(v)
                continue
            pi = owner[v]
            p = plan.patterns[pi]
            needs = [o for u in p.vertices for o in g[u].operands if o not in p.vertices]
            if pi in done_patterns:
                continue
            if not all(o in values for o in needs):
                rest.append(v)
                continue
            kp = kernel_plans[p.vertices]
            kernel = parse_text(emit_kernel_text(kp))
            params = {name: values[name] for name, _ in kernel.params}
            outs = run_kernel(kernel, params)
            for name, arr in outs.items():
                values[name] = arr.reshape(g[name].shape.dims)
            done_patterns.add(pi)
            progress = True
        pending = [v for v in rest if v not in values]
    missing = [o for o in g.outputs if o not in values]
    if missing:
        raise SimFault(f"plan could not be scheduled; outputs {missing} never computed")
    return {o: TensorValue(g[o].shape, values[o]) for o in g.outputs}


# -- comparison -----------------------------------------------------------------------------------

F16_REL_TOL = 1e-2
F16_ABS_TOL = 1e-3


@dataclass(frozen=True)
class OutputDiff:
    name: str
    max_abs: float
    max_rel: float
    worst_index: int
    passed: bool


@dataclass(frozen=True)
class CompareReport:
    entries: tuple[OutputDiff, ...]

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def text(self) -> str:
        lines = [f"{'pass' if self.passed else 'FAIL'}"]
        for e in self.entries:
            lines.append(f"  {e.name}: max_abs={e.max_abs:.3g} max_rel={e.max_rel:.3g} "
                         f"worst_index={e.worst_index} {'ok' if e.passed else 'MISMATCH'}")
        return "\n".join(lines)


def compare(a: Mapping[str, TensorValue], b: Mapping[str, TensorValue], rel_tol: float = 1e-4,
            abs_tol: float = 1e-5) -> CompareReport:
    """Element-wise check ``|a - b| <= abs_tol + rel_tol * |b|``; integers and bools must match exactly."""
    if set(a) != set(b):
        raise InputError(f"output sets differ: {sorted(set(a) ^ set(b))}")
    entries = []
    for name in sorted(a):
        x, y = a[name], b[name]
        if x.shape != y.shape:
            raise InputError(f"{name}: shape {x.shape} vs {y.shape}")
        if not x.shape.dtype.is_float:
            bad = x.data != y.data
            diff = np.abs(x.data.astype(np.float64) - y.data.astype(np.float64))
            worst = int(np.argmax(diff)) if diff.size else 0
            mabs = float(diff.max()) if diff.size else 0.0
            entries.append(OutputDiff(name, mabs, mabs / max(1.0, float(np.abs(y.data[worst]))) if diff.size else 0.0,
                                      worst, not bool(bad.any())))
            continue
        rt, at = (max(rel_tol, F16_REL_TOL), max(abs_tol, F16_ABS_TOL)) if x.shape.dtype is DType.F16 else (
            rel_tol, abs_tol)
        xd = x.data.astype(np.float64)
        yd = y.data.astype(np.float64)
        both_nan = np.isnan(xd) & np.isnan(yd)
        same_inf = np.isinf(xd) & (xd == yd)
        with np.errstate(invalid="ignore"):
            diff = np.where(both_nan | same_inf, 0.0, np.abs(xd - yd))
        diff = np.where(np.isnan(diff), np.inf, diff)
        rel = diff / np.maximum(np.abs(yd), np.finfo(np.float64).tiny)
        rel = np.where(diff == 0, 0.0, rel)
        ok = diff <= at + rt * np.abs(np.where(np.isfinite(yd), yd, 0))
        worst = int(np.argmax(diff - (at + rt * np.abs(np.nan_to_num(yd))))) if diff.size else 0
        entries.append(OutputDiff(name, float(diff.max()) if diff.size else 0.0,
                                  float(rel.max()) if rel.size else 0.0, worst, bool(ok.all())))
    return CompareReport(tuple(entries))


# -- inputs and binary tensor files -------------------------------------------------------------------


def random_inputs(g: CompGraph, seed: int) -> dict[str, TensorValue]:
    """Seeded inputs: floats uniform in (-1, 1), integers in [-8, 8], bools fair coin flips."""
    rng = np.random.default_rng(seed)
    out = {}
    for v in g.topo_order:
        node = g[v]
        if node.kind is not OpKind.PARAMETER:
            continue
        n = node.shape.element_count
        dt = node.shape.dtype
        if dt.is_float:
            data = rng.uniform(-1.0, 1.0, n)
        elif dt is DType.I32:
            data = rng.integers(-8, 9, n)
        else:
            data = rng.random(n) < 0.5
        out[v] = TensorValue(node.shape, data)
    return out


_MAGIC = b"STPT"
_DTYPE_CODES = {DType.F32: 0, DType.F16: 1, DType.I32: 2, DType.BOOL: 3}


def write_tensor(path: str | Path, t: TensorValue) -> None:
    """Header: magic, u32 dtype code, u32 rank, u64 dims; then the row-major little-endian body."""
    dims = t.shape.dims
    head = _MAGIC + struct.pack(f"<II{len(dims)}Q", _DTYPE_CODES[t.shape.dtype], len(dims), *dims)
    body = t.data.astype(t.shape.dtype.np.newbyteorder("<"), copy=False).tobytes()
    Path(path).write_bytes(head + body)


def read_tensor(path: str | Path) -> TensorValue:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC or len(raw) < 12:
        raise InputError(f"{path}: not a tensor file")
    code, rank = struct.unpack_from("<II", raw, 4)
    codes = {c: d for d, c in _DTYPE_CODES.items()}
    if code not in codes:
        raise InputError(f"{path}: unknown dtype code {code}")
    dims = struct.unpack_from(f"<{rank}Q", raw, 12)
    dt = codes[code]
    start = 12 + 8 * rank
    shape = TensorShape(tuple(int(d) for d in dims), dt)
    body = raw[start:]
    if len(body) != shape.element_count * dt.itemsize:
        raise InputError(f"{path}: body has {len(body)} bytes, expected {shape.element_count * dt.itemsize}")
    return TensorValue(shape, np.frombuffer(body, dtype=dt.np.newbyteorder("<")).astype(dt.np))
