from __future__ import annotations

from conftest import load_fixture
from stitchplan.baseline import run_baseline
from stitchplan.graph_ir import OpClass, validate_plan, plan_errors
from stitchplan.graph_text import parse_graph


def test_layer_norm_splits_at_reductions():
    g = load_fixture("layer_norm")
    plan = run_baseline(g)
    assert plan.kernel_count(g) == 4
    for p in plan.patterns:
        producers = [v for v in p.vertices if any(c in p.vertices for c in g.consumers[v])]
        assert all(g.op_class(v) in (OpClass.LIGHT, OpClass.SHAPE) for v in producers)


def test_light_chain_is_one_kernel():
    g = parse_graph("x = parameter : f32[64]\na = add(x, x)\nb = mul(a, x)\nc = sub(b, a)\noutput c\n")
    assert run_baseline(g).kernel_count(g) == 1


def test_single_reduction_is_one_kernel():
    g = parse_graph("x = parameter : f32[4,8]\ns = reduce_sum(x) [axes={1}]\noutput s\n")
    assert run_baseline(g).kernel_count(g) == 1


def test_baseline_plans_are_valid():
    from stitchplan import list_fixtures
    for name in list_fixtures():
        g = load_fixture(name)
        plan = run_baseline(g)
        assert not plan_errors(validate_plan(g, plan))
        assert run_baseline(g) == plan
