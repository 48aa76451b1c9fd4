from __future__ import annotations

import itertools

import networkx as nx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import load_fixture
from stitchplan import list_fixtures
from stitchplan.errors import CycleError, DeadNodeError, ShapeMismatchError, UnresolvedOperandError
from stitchplan.graph_ir import (
    CompGraph,
    DType,
    FusionPattern,
    FusionPlan,
    OpClass,
    OpKind,
    OpNode,
    TensorShape,
    classify_op,
    kind_class,
    contraction_creates_cycle,
    plan_errors,
    topo_sort,
    validate_graph,
    validate_plan,
)

F = TensorShape((4,), DType.F32)


def node(vid, kind, *ops, shape=F, **attrs):
    return OpNode(vid, OpKind(kind), tuple(ops), shape, attrs)


def chain_graph(n):
    nodes = [node("p", "parameter")]
    prev = "p"
    for i in range(n):
        nodes.append(node(f"a{i}", "exp", prev))
        prev = f"a{i}"
    return CompGraph({x.id: x for x in nodes}, (prev,))


def diamond():
    nodes = [node("a", "parameter"), node("b", "exp", "a"), node("c", "tanh", "a"), node("d", "add", "b", "c")]
    return CompGraph({x.id: x for x in nodes}, ("d",))


# -- shapes and classes -------------------------------------------------------------------------


def test_shape_basics():
    s = TensorShape((4, 8), DType.F16)
    assert s.rank == 2 and s.element_count == 32 and s.nbytes == 64
    assert TensorShape((), DType.F32).element_count == 1


@pytest.mark.parametrize("dims", [(0,), (4, -1)])
def test_shape_rejects_nonpositive_dims(dims):
    with pytest.raises(ShapeMismatchError):
        TensorShape(dims)


@pytest.mark.parametrize(
    "kind,cls",
    [
        ("add", OpClass.LIGHT), ("sub", OpClass.LIGHT), ("mul", OpClass.LIGHT), ("div", OpClass.LIGHT),
        ("max", OpClass.LIGHT), ("min", OpClass.LIGHT),
        ("exp", OpClass.EXPENSIVE), ("tanh", OpClass.EXPENSIVE), ("log", OpClass.EXPENSIVE),
        ("rsqrt", OpClass.EXPENSIVE), ("power", OpClass.EXPENSIVE),
        ("reduce_sum", OpClass.REDUCTION), ("reduce_max", OpClass.REDUCTION),
        ("broadcast", OpClass.SHAPE), ("transpose", OpClass.SHAPE), ("slice", OpClass.SHAPE),
        ("gather", OpClass.SHAPE), ("opaque_compute", OpClass.OPAQUE),
    ],
)
def test_classify_op_table(kind, cls):
    assert kind_class(kind) is cls
    assert kind_class(OpKind(kind)) is kind_class(kind)


def test_classify_op_on_nodes():
    assert classify_op(node("a", "add", "p", "q")) is OpClass.LIGHT
    assert classify_op(node("t", "tanh", "p")) is OpClass.EXPENSIVE
    assert classify_op(node("r", "reduce_sum", "p", axes=(0,))) is OpClass.REDUCTION


def test_sources_have_no_class():
    assert classify_op(node("p", "parameter")) is None
    assert classify_op(node("c", "constant", value=1.0)) is None


def test_reduce_shape_rule_and_mismatch():
    x = node("x", "parameter", shape=TensorShape((4, 8)))
    r = node("r", "reduce_sum", "x", shape=TensorShape((4,)), axes=(1,))
    validate_graph(CompGraph({"x": x, "r": r}, ("r",)))
    bad = node("r", "reduce_sum", "x", shape=TensorShape((8,)), axes=(1,))
    with pytest.raises(ShapeMismatchError):
        validate_graph(CompGraph({"x": x, "r": bad}, ("r",)))


def test_validate_rejects_unresolved_dead_and_cycles():
    with pytest.raises(UnresolvedOperandError):
        validate_graph(CompGraph({"a": node("a", "exp", "zz")}, ("a",)))
    g = CompGraph({"p": node("p", "parameter"), "a": node("a", "exp", "p"), "b": node("b", "exp", "p")}, ("a",))
    with pytest.raises(DeadNodeError):
        validate_graph(g)
    cyc = CompGraph({"a": node("a", "exp", "b"), "b": node("b", "exp", "a")}, ("a",))
    with pytest.raises(CycleError):
        topo_sort(cyc)


def test_bool_only_for_max_min():
    b = TensorShape((4,), DType.BOOL)
    p = node("p", "parameter", shape=b)
    validate_graph(CompGraph({"p": p, "m": node("m", "max", "p", "p", shape=b)}, ("m",)))
    with pytest.raises(ShapeMismatchError):
        validate_graph(CompGraph({"p": p, "m": node("m", "add", "p", "p", shape=b)}, ("m",)))


# -- ordering -----------------------------------------------------------------------------------


def test_topo_chain_and_diamond():
    assert topo_sort(chain_graph(3)) == ["p", "a0", "a1", "a2"]
    order = topo_sort(diamond())
    assert order[0] == "a" and order[-1] == "d"


def test_topo_random_dag_edges_go_forward():
    g = nx.gnp_random_graph(50, 0.1, seed=3, directed=True)
    dag = nx.DiGraph([(u, v) for u, v in g.edges() if u < v])
    dag.add_nodes_from(range(50))
    nodes = {}
    for v in range(50):
        preds = sorted(dag.predecessors(v))
        if not preds:
            nodes[f"n{v}"] = node(f"n{v}", "parameter")
        elif len(preds) == 1:
            nodes[f"n{v}"] = node(f"n{v}", "exp", f"n{preds[0]}")
        else:
            nodes[f"n{v}"] = node(f"n{v}", "add", f"n{preds[0]}", f"n{preds[1]}")
    used = {o for n in nodes.values() for o in n.operands}
    g2 = CompGraph(nodes, tuple(v for v in nodes if v not in used))
    order = topo_sort(g2)
    pos = {v: i for i, v in enumerate(order)}
    assert len(order) == 50
    assert all(pos[a] < pos[b] for a, b in g2.edges())


# -- contraction cycles -------------------------------------------------------------------------


def test_cycle_examples():
    nodes = [node("p", "parameter"), node("A", "exp", "p"), node("B", "exp", "A"), node("C", "add", "A", "B")]
    g = CompGraph({x.id: x for x in nodes}, ("C",))
    assert contraction_creates_cycle(g, {"A", "C"})
    assert not contraction_creates_cycle(g, {"A"})
    assert not contraction_creates_cycle(g, set(g.nodes))


def cycle_oracle(g: CompGraph, verts: frozenset[str]) -> bool:
    """Contract ``verts`` in a networkx copy and ask whether the quotient is still a DAG."""
    dg = nx.DiGraph()
    dg.add_nodes_from(g.nodes)
    dg.add_edges_from(g.edges())
    rep = "<contracted>"
    mapping = {v: (rep if v in verts else v) for v in g.nodes}
    q = nx.DiGraph()
    q.add_nodes_from(set(mapping.values()))
    q.add_edges_from((mapping[a], mapping[b]) for a, b in dg.edges() if mapping[a] != mapping[b])
    return not nx.is_directed_acyclic_graph(q)


@st.composite
def small_dags(draw):
    n = draw(st.integers(3, 12))
    nodes = {"n0": node("n0", "parameter")}
    for v in range(1, n):
        k = draw(st.integers(1, 2))
        preds = sorted(set(draw(st.lists(st.integers(0, v - 1), min_size=k, max_size=k))))
        ops = [f"n{p}" for p in preds]
        nodes[f"n{v}"] = node(f"n{v}", "exp", *ops) if len(ops) == 1 else node(f"n{v}", "add", *ops)
    used = {o for x in nodes.values() for o in x.operands}
    g = CompGraph(nodes, tuple(v for v in nodes if v not in used))
    subset = draw(st.sets(st.sampled_from(sorted(nodes)), min_size=1))
    return g, frozenset(subset)


@settings(max_examples=300, deadline=None)
@given(small_dags())
def test_contraction_cycle_matches_networkx_oracle(case):
    g, verts = case
    assert contraction_creates_cycle(g, verts) == cycle_oracle(g, verts)


def test_contraction_cycle_exhaustive_on_fixture_subsets():
    g = load_fixture("two_reductions")
    fv = list(g.nodes)
    for r in (2, 3):
        for sub in itertools.combinations(fv, r):
            s = frozenset(sub)
            assert contraction_creates_cycle(g, s) == cycle_oracle(g, s)


# -- plan validation ----------------------------------------------------------------------------


def test_validate_plan_disjointness_and_empty():
    g = diamond()
    assert validate_plan(g, FusionPlan([])) == []
    p1 = FusionPattern(frozenset({"b", "d"}), "b", 1.0)
    p2 = FusionPattern(frozenset({"c", "d"}), "c", 1.0)
    errs = plan_errors(validate_plan(g, FusionPlan([p1, p2])))
    assert any("share vertex d" in str(e) for e in errs)


def test_validate_plan_score_consistency():
    g = diamond()
    p = FusionPattern(frozenset({"b", "d"}), "b", 2.0)
    assert plan_errors(validate_plan(g, FusionPlan([p], total_score=5.0)))
    assert not plan_errors(validate_plan(g, FusionPlan([p])))


def test_validate_plan_disconnected_needs_remote_flag():
    g = diamond()
    p = FusionPattern(frozenset({"b", "c"}), "b", 1.0)
    assert plan_errors(validate_plan(g, FusionPlan([p])))
    assert not plan_errors(validate_plan(g, FusionPlan([FusionPattern(p.vertices, "b", 1.0, remote=True)])))


@pytest.mark.parametrize("name", list_fixtures())
def test_fixtures_are_valid_graphs(name):
    g = load_fixture(name)
    assert validate_graph(g) is g
    assert len(g.fusable_vertices) >= 2
