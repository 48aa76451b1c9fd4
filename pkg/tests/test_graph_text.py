from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import load_fixture
from randgraphs import random_graph
from stitchplan import list_fixtures
from stitchplan.errors import GraphSyntaxError, ShapeMismatchError, UnknownOpError, UnresolvedOperandError
from stitchplan.graph_ir import OpClass, OpKind
from stitchplan.graph_text import parse_graph, serialize_graph


def test_three_statement_file():
    g = parse_graph("p0 = parameter : f32[4,8]; r = reduce_sum(p0, axes=1); out = r\n")
    assert len(g) == 2
    assert g["r"].shape.dims == (4,)
    assert g.outputs == ("r",)


def test_bracket_attributes_and_comments():
    text = "# header\nx = parameter : f32[2,3]  # input\ns = reduce_max(x) [axes={0}]\noutput s\n"
    g = parse_graph(text)
    assert g["s"].shape.dims == (3,)
    assert g["s"].attr("axes") == (0,)


def test_unresolved_operand():
    with pytest.raises(UnresolvedOperandError):
        parse_graph("p = parameter : f32[4]\ny = add(p, x)\noutput y\n")


def test_unknown_op():
    with pytest.raises(UnknownOpError):
        parse_graph("p = parameter : f32[4]\ny = frobnicate(p)\noutput y\n")


def test_syntax_error_has_position():
    with pytest.raises(GraphSyntaxError) as ei:
        parse_graph("p = parameter : f32[4]\ny = add(p p)\noutput y\n")
    assert ei.value.line == 2 and ei.value.column > 1
    assert "line 2" in str(ei.value)


def test_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        parse_graph("p = parameter : f32[4]\nq = parameter : f32[5]\ny = add(p, q)\noutput y\n")


def test_empty_graph_is_an_error():
    with pytest.raises(GraphSyntaxError):
        parse_graph("# nothing here\n")


def test_layer_norm_fixture_structure():
    g = load_fixture("layer_norm")
    kinds = [n.kind for n in g.nodes.values()]
    assert sum(g.op_class(v) is OpClass.REDUCTION for v in g.nodes) == 2
    assert OpKind.RSQRT in kinds


def _same_graph(a, b):
    assert list(a.nodes) == list(b.nodes)
    assert a.outputs == b.outputs
    assert set(a.edges()) == set(b.edges())
    for v in a.nodes:
        assert a[v].kind is b[v].kind
        assert a[v].shape == b[v].shape
        assert a[v].attrs == b[v].attrs


@pytest.mark.parametrize("name", list_fixtures())
def test_fixture_round_trip(name):
    g = load_fixture(name)
    _same_graph(g, parse_graph(serialize_graph(g)))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000))
def test_random_graph_round_trip(seed):
    g = random_graph(seed)
    text = serialize_graph(g)
    _same_graph(g, parse_graph(text))
    assert serialize_graph(parse_graph(text)) == text
