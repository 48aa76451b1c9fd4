"""Abstract stitched-kernel programs: data structures, text emission and parsing.

Grammar (one item per line, ``#`` comments)::

    kernel NAME grid=G block=B warp=W
    param NAME DTYPE[dims]            # global input
    output NAME DTYPE[dims]           # global output
    shared NAME DTYPE offset=O size=S # shared-memory buffer (bytes)
    phase ROOT scheme=thread|warp|block kind=map|reduce extent=N dtype=DT [op=sum|max in=[dims] axes={..}]
      STMT*                           # map: per element %e; reduce: after the loop
      loop                            # reduce only, per inner position %j
        STMT*
      endloop
    end
    barrier                           # top-level: between phases

Statements are ``%dst = OP args attrs`` or ``OP args attrs``. Arguments are
``%regs``, tensor/buffer names, or literals; attributes are ``key=value``.
``leader`` switches the rest of a reduce phase to the thread(s) holding the
result (lane 0 for warp, thread 0 for block).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any

from .errors import KernelTextError
from .graph_ir import DType, TensorShape

# op -> (has destination, number of positional args or None for variadic)
STATEMENT_OPS: dict[str, tuple[bool, int | None]] = {
    "const": (True, 2),  # dtype value
    "gload": (True, 2),
    "gstore": (False, 3),
    "tload": (True, 2),
    "tstore": (False, 3),
    "shuffle_from_lane0": (True, 2),
    "lane0_store": (False, 3),
    "shared_load": (True, 2),
    "shared_store": (False, 3),
    "partial_store": (False, 2),
    "partial_reduce": (True, 1),
    "barrier": (False, 0),
    "leader": (False, 0),
    "acc": (False, 1),
    "reduce.thread": (True, 0),
    "reduce.warp": (True, 0),
    "idx.bcast": (True, 1),
    "idx.transpose": (True, 1),
    "idx.slice": (True, 1),
    "idx.gather_row": (True, 1),
    "idx.gather_data": (True, 2),
    "idx.reduce_in": (True, 2),
}
ARITH_OPS = {
    "add": 2, "sub": 2, "mul": 2, "div": 2, "max": 2, "min": 2, "power": 2,
    "exp": 1, "tanh": 1, "log": 1, "rsqrt": 1,
}


@dataclass(frozen=True)
class Stmt:
    op: str
    dst: str | None = None
    args: tuple[str, ...] = ()
    attrs: tuple[tuple[str, Any], ...] = ()

    def attr(self, key: str, default: Any = None) -> Any:
        for k, v in self.attrs:
            if k == key:
                return v
        return default

    def text(self) -> str:
        parts = [self.op, *self.args, *(f"{k}={_fmt(v)}" for k, v in self.attrs)]
        s = " ".join(parts)
        return f"{self.dst} = {s}" if self.dst else s


@dataclass
class Phase:
    root: str
    scheme: str  # thread | warp | block
    kind: str  # map | reduce
    extent: int
    dtype: DType
    op: str | None = None  # reduce combiner
    in_dims: tuple[int, ...] = ()
    axes: tuple[int, ...] = ()
    loop: list[Stmt] = field(default_factory=list)
    body: list[Stmt] = field(default_factory=list)

    @property
    def inner_extent(self) -> int:
        n = 1
        for a in self.axes:
            n *= self.in_dims[a]
        return n

    def header(self) -> str:
        s = f"phase {self.root} scheme={self.scheme} kind={self.kind} extent={self.extent} dtype={self.dtype.value}"
        if self.kind == "reduce":
            s += f" op={self.op} in={_fmt(list(self.in_dims))} axes={_fmt(self.axes)}"
        return s


@dataclass(frozen=True)
class SharedDecl:
    name: str
    dtype: DType
    offset: int
    size: int


@dataclass
class Kernel:
    name: str
    grid: int
    block: int
    warp: int
    params: list[tuple[str, TensorShape]] = field(default_factory=list)
    outputs: list[tuple[str, TensorShape]] = field(default_factory=list)
    shared: list[SharedDecl] = field(default_factory=list)
    # Phase objects and the string "barrier" for top-level barriers.
    items: list[Phase | str] = field(default_factory=list)

    @property
    def phases(self) -> list[Phase]:
        return [it for it in self.items if isinstance(it, Phase)]

    @property
    def shared_bytes(self) -> int:
        return max((d.offset + d.size for d in self.shared), default=0)


def _fmt(v: Any) -> str:
    if isinstance(v, tuple):
        return "{" + ",".join(str(x) for x in v) + "}"
    if isinstance(v, list):
        return "[" + ",".join(str(x) for x in v) + "]"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_text(k: Kernel) -> str:
    lines = [f"kernel {k.name} grid={k.grid} block={k.block} warp={k.warp}"]
    lines += [f"param {n} {s}" for n, s in k.params]
    lines += [f"output {n} {s}" for n, s in k.outputs]
    lines += [f"shared {d.name} {d.dtype.value} offset={d.offset} size={d.size}" for d in k.shared]
    for item in k.items:
        if isinstance(item, str):
            lines.append(item)
            continue
        lines.append(item.header())
        if item.kind == "reduce":
            lines.append("  loop")
            lines += [f"    {s.text()}" for s in item.loop]
            lines.append("  endloop")
        lines += [f"  {s.text()}" for s in item.body]
        lines.append("end")
    return "\n".join(lines) + "\n"


# -- parsing --------------------------------------------------------------------------------------

_SHAPE = re.compile(r"^(f32|f16|i32|bool)\[([0-9,]*)\]$")


def _parse_shape(tok: str, lineno: int) -> TensorShape:
    m = _SHAPE.match(tok)
    if not m:
        raise KernelTextError(f"line {lineno}: bad tensor type {tok!r}")
    dims = tuple(int(x) for x in m.group(2).split(",") if x)
    return TensorShape(dims, DType(m.group(1)))


def _parse_value(text: str) -> Any:
    if text.startswith("{") and text.endswith("}"):
        return tuple(int(x) for x in text[1:-1].split(",") if x)
    if text.startswith("[") and text.endswith("]"):
        return tuple(int(x) for x in text[1:-1].split(",") if x)
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def _kv(tokens: list[str], lineno: int) -> dict[str, Any]:
    out = {}
    for t in tokens:
        if "=" not in t:
            raise KernelTextError(f"line {lineno}: expected key=value, found {t!r}")
        k, v = t.split("=", 1)
        out[k] = _parse_value(v)
    return out


def _parse_stmt(line: str, lineno: int) -> Stmt:
    dst = None
    if "=" in line.split()[0] or (len(line.split()) > 1 and line.split()[1] == "="):
        lhs, rhs = line.split("=", 1)
        dst = lhs.strip()
        if not dst.startswith("%"):
            raise KernelTextError(f"line {lineno}: destination must be a %register, found {dst!r}")
        line = rhs.strip()
    toks = line.split()
    op = toks[0]
    rest = toks[1:]
    args = [t for t in rest if "=" not in t]
    attrs = [t for t in rest if "=" in t]
    if op in ARITH_OPS:
        want_dst, nargs = True, ARITH_OPS[op]
    elif op in STATEMENT_OPS:
        want_dst, nargs = STATEMENT_OPS[op]
    else:
        raise KernelTextError(f"line {lineno}: unknown statement {op!r}")
    if want_dst != (dst is not None):
        raise KernelTextError(f"line {lineno}: {op} {'needs' if want_dst else 'takes no'} destination")
    if nargs is not None and len(args) != nargs:
        raise KernelTextError(f"line {lineno}: {op} takes {nargs} arguments, got {len(args)}")
    return Stmt(op, dst, tuple(args), tuple(sorted(_kv(attrs, lineno).items())))


def parse_text(text: str) -> Kernel:
    kernel: Kernel | None = None
    phase: Phase | None = None
    in_loop = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        head = toks[0]
        if head == "kernel":
            if kernel is not None:
                raise KernelTextError(f"line {lineno}: second kernel header")
            kv = _kv(toks[2:], lineno)
            try:
                kernel = Kernel(toks[1], int(kv["grid"]), int(kv["block"]), int(kv["warp"]))
            except (KeyError, IndexError):
                raise KernelTextError(f"line {lineno}: kernel header needs name grid= block= warp=") from None
            continue
        if kernel is None:
            raise KernelTextError(f"line {lineno}: statement before kernel header")
        if phase is None:
            if head in ("param", "output"):
                if len(toks) != 3:
                    raise KernelTextError(f"line {lineno}: expected '{head} NAME TYPE'")
                (kernel.params if head == "param" else kernel.outputs).append(
                    (toks[1], _parse_shape(toks[2], lineno)))
            elif head == "shared":
                kv = _kv(toks[3:], lineno)
                kernel.shared.append(SharedDecl(toks[1], DType(toks[2]), int(kv["offset"]), int(kv["size"])))
            elif head == "barrier":
                kernel.items.append("barrier")
            elif head == "phase":
                kv = _kv(toks[2:], lineno)
                try:
                    phase = Phase(
                        root=toks[1], scheme=str(kv["scheme"]), kind=str(kv["kind"]), extent=int(kv["extent"]),
                        dtype=DType(kv["dtype"]), op=kv.get("op"), in_dims=tuple(kv.get("in", ())),
                        axes=tuple(kv.get("axes", ())),
                    )
                except KeyError as exc:
                    raise KernelTextError(f"line {lineno}: phase header missing {exc}") from None
                if phase.scheme not in ("thread", "warp", "block") or phase.kind not in ("map", "reduce"):
                    raise KernelTextError(f"line {lineno}: bad phase scheme/kind")
            else:
                raise KernelTextError(f"line {lineno}: unexpected {head!r} outside a phase")
            continue
        if head == "end":
            if in_loop:
                raise KernelTextError(f"line {lineno}: 'end' inside loop")
            kernel.items.append(phase)
            phase = None
        elif head == "loop":
            if phase.kind != "reduce" or in_loop or phase.loop:
                raise KernelTextError(f"line {lineno}: unexpected loop")
            in_loop = True
        elif head == "endloop":
            if not in_loop:
                raise KernelTextError(f"line {lineno}: endloop without loop")
            in_loop = False
        else:
            stmt = _parse_stmt(line, lineno)
            (phase.loop if in_loop else phase.body).append(stmt)
    if kernel is None:
        raise KernelTextError("no kernel header")
    if phase is not None:
        raise KernelTextError("unterminated phase")
    return kernel
