"""Text format for operator graphs.

One statement per line (``;`` also separates statements, ``#`` starts a comment)::

    x    = parameter : f32[16,64]
    s    = reduce_sum(x) [axes={1}]          # type inferred: f32[16]
    c    = constant [value=0.015625] : f32[16]
    mean = mul(s, c)
    output mean

``out = id`` is accepted as a synonym for ``output id``. Attribute values are
numbers, ``{a,b,...}`` integer lists, or ``true``/``false``. Operation
attributes may also be written inside the parentheses (``reduce_sum(x, axes=1)``).
"""

from __future__ import annotations

import re
from typing import Any

from .errors import GraphSyntaxError, UnknownOpError, UnresolvedOperandError
from .graph_ir import TUPLE_ATTRS, CompGraph, DType, OpKind, OpNode, TensorShape, infer_shape, validate_graph

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<nl>[\n;])
  | (?P<num>[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?|[-+]?inf\b|nan\b)
  | (?P<id>[A-Za-z_][A-Za-z0-9_.]*)
  | (?P<punct>[=(),\[\]{}:])
    """,
    re.VERBOSE,
)

_KINDS = {k.value: k for k in OpKind}
_DTYPES = {d.value: d for d in DType}


class _Tok:
    __slots__ = ("kind", "text", "line", "col")

    def __init__(self, kind: str, text: str, line: int, col: int):
        self.kind, self.text, self.line, self.col = kind, text, line, col

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"{self.kind}:{self.text!r}@{self.line}:{self.col}"


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise GraphSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        col = pos - line_start + 1
        if kind == "nl":
            toks.append(_Tok("nl", m.group(), line, col))
            if m.group() == "\n":
                line += 1
                line_start = m.end()
        elif kind not in ("ws", "comment"):
            toks.append(_Tok(kind, m.group(), line, col))
        pos = m.end()
    toks.append(_Tok("nl", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def next(self) -> _Tok:
        tok = self.toks[self.i]
        if self.i < len(self.toks) - 1:
            self.i += 1
        return tok

    def expect(self, text: str) -> _Tok:
        tok = self.next()
        if tok.text != text:
            raise GraphSyntaxError(f"expected {text!r}, found {tok.text or 'end of line'!r}", tok.line, tok.col)
        return tok

    def expect_kind(self, kind: str, what: str) -> _Tok:
        tok = self.next()
        if tok.kind != kind:
            raise GraphSyntaxError(f"expected {what}, found {tok.text or 'end of line'!r}", tok.line, tok.col)
        return tok

    def at_end_of_stmt(self) -> bool:
        return self.peek().kind == "nl"

    def value(self) -> Any:
        tok = self.next()
        if tok.text == "{":
            vals: list[int] = []
            while self.peek().text != "}":
                t = self.expect_kind("num", "integer")
                vals.append(_to_int(t))
                if self.peek().text == ",":
                    self.next()
            self.expect("}")
            return tuple(vals)
        if tok.kind == "num":
            return _to_number(tok.text)
        if tok.kind == "id" and tok.text in ("true", "false"):
            return tok.text == "true"
        raise GraphSyntaxError(f"bad attribute value {tok.text!r}", tok.line, tok.col)

    def type_spec(self) -> TensorShape:
        tok = self.expect_kind("id", "dtype")
        if tok.text not in _DTYPES:
            raise GraphSyntaxError(f"unknown dtype {tok.text!r}", tok.line, tok.col)
        self.expect("[")
        dims: list[int] = []
        while self.peek().text != "]":
            t = self.expect_kind("num", "dimension")
            d = _to_int(t)
            if d < 1:
                raise GraphSyntaxError(f"dimension must be >= 1, got {d}", t.line, t.col)
            dims.append(d)
            if self.peek().text == ",":
                self.next()
        self.expect("]")
        return TensorShape(tuple(dims), _DTYPES[tok.text])


def _to_int(tok: _Tok) -> int:
    try:
        return int(tok.text)
    except ValueError:
        raise GraphSyntaxError(f"expected integer, found {tok.text!r}", tok.line, tok.col) from None


def _to_number(text: str) -> int | float:
    try:
        return int(text)
    except ValueError:
        return float(text)


def parse_graph(text: str) -> CompGraph:
    """Parse and validate a graph file. Raises a distinct error per failure class."""
    p = _Parser(text)
    nodes: dict[str, OpNode] = {}
    outputs: list[str] = []
    while True:
        tok = p.peek()
        if tok.kind == "nl":
            if tok.text == "":
                break
            p.next()
            continue
        head = p.expect_kind("id", "statement")
        if head.text in ("output", "out"):
            if p.peek().text == "=":
                p.next()
            outputs.extend(_parse_id_list(p, nodes))
            _end_stmt(p)
            continue
        p.expect("=")
        node = _parse_op(p, head, nodes)
        nodes[node.id] = node
        _end_stmt(p)
    if not nodes:
        raise GraphSyntaxError("empty graph", 1, 1)
    return validate_graph(CompGraph(nodes, tuple(dict.fromkeys(outputs))))


def _end_stmt(p: _Parser) -> None:
    tok = p.peek()
    if tok.kind != "nl":
        raise GraphSyntaxError(f"unexpected {tok.text!r} at end of statement", tok.line, tok.col)


def _parse_id_list(p: _Parser, nodes: dict[str, OpNode]) -> list[str]:
    ids = []
    while True:
        t = p.expect_kind("id", "vertex id")
        if t.text not in nodes:
            raise UnresolvedOperandError(f"line {t.line}: output {t.text!r} is not defined")
        ids.append(t.text)
        if p.peek().text != ",":
            return ids
        p.next()


def _parse_op(p: _Parser, name: _Tok, nodes: dict[str, OpNode]) -> OpNode:
    if name.text in nodes:
        raise GraphSyntaxError(f"duplicate definition of {name.text!r}", name.line, name.col)
    kt = p.expect_kind("id", "op kind")
    if kt.text not in _KINDS:
        raise UnknownOpError(f"line {kt.line}, col {kt.col}: unknown op kind {kt.text!r}")
    kind = _KINDS[kt.text]
    operands: list[str] = []
    attrs: dict[str, Any] = {}
    if p.peek().text == "(":
        p.next()
        while p.peek().text != ")":
            t = p.expect_kind("id", "operand")
            if p.peek().text == "=":
                p.next()
                attrs[t.text] = p.value()
            else:
                if t.text not in nodes:
                    raise UnresolvedOperandError(
                        f"line {t.line}, col {t.col}: operand {t.text!r} is not defined"
                    )
                operands.append(t.text)
            if p.peek().text == ",":
                p.next()
            elif p.peek().text != ")":
                t = p.peek()
                raise GraphSyntaxError(f"expected ',' or ')', found {t.text!r}", t.line, t.col)
        p.expect(")")
    if p.peek().text == "[":
        p.next()
        while p.peek().text != "]":
            key = p.expect_kind("id", "attribute name")
            p.expect("=")
            attrs[key.text] = p.value()
            if p.peek().text == ",":
                p.next()
        p.expect("]")
    declared = None
    if p.peek().text == ":":
        p.next()
        declared = p.type_spec()
    elif p.peek().kind == "id":
        declared = p.type_spec()
    # singular spellings used in hand-written files
    if "axis" in attrs:
        attrs["axes"] = attrs.pop("axis")
    for key in TUPLE_ATTRS & attrs.keys():
        if not isinstance(attrs[key], tuple):
            attrs[key] = (int(attrs[key]),)
    shapes = [nodes[o].shape for o in operands]
    try:
        shape = infer_shape(kind, shapes, attrs, declared, name.text)
    except Exception as exc:
        exc.args = (f"line {name.line}: {exc.args[0]}",) + exc.args[1:]
        raise
    try:
        return OpNode(name.text, kind, tuple(operands), shape, attrs)
    except Exception as exc:
        exc.args = (f"line {name.line}: {exc.args[0]}",) + exc.args[1:]
        raise


def _format_value(v: Any) -> str:
    if isinstance(v, tuple):
        return "{" + ",".join(str(x) for x in v) + "}"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize_graph(g: CompGraph) -> str:
    lines = []
    for node in g.nodes.values():
        s = f"{node.id} = {node.kind.value}"
        if node.operands:
            s += "(" + ", ".join(node.operands) + ")"
        if node.attrs:
            s += " [" + ", ".join(f"{k}={_format_value(v)}" for k, v in node.attrs) + "]"
        s += f" : {node.shape}"
        lines.append(s)
    if g.outputs:
        lines.append("output " + ", ".join(g.outputs))
    return "\n".join(lines) + "\n"
