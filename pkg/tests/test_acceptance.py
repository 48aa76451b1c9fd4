from __future__ import annotations

import json
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import load_fixture
from randgraphs import brute_force_optimum, interference_optimum, random_graph
from stitchplan import list_fixtures
from stitchplan.baseline import run_baseline
from stitchplan.cli import main
from stitchplan.device_model import TRANSITIONS, LaunchDims, mem_transfer_saving, occupancy, wave_count
from stitchplan.explorer import SearchContext, delta_evaluate, explore, explore_candidates, remote_fusion
from stitchplan.graph_ir import OpClass, pattern_outputs
from stitchplan.graph_text import parse_graph
from stitchplan.planner import allocate_shared_memory, live_ranges
from stitchplan.sim import compare, eval_plan, eval_reference, random_inputs
from stitchplan import fixture_path

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(capsys):
    def emit(n: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")
    return emit


def test_criterion_1_layer_norm_structure(dev, models, report):
    t = time.perf_counter()
    g = load_fixture("layer_norm")
    base = run_baseline(g).kernel_count(g)
    res = explore(g, dev, models)
    pats = res.plan.patterns
    full = len(pats) == 1 and pats[0].vertices == frozenset(g.fusable_vertices)
    inter = res.cost.kernel_plans[pats[0].vertices].global_intermediates(g) if full else None
    elapsed = time.perf_counter() - t
    ok = base == 4 and full and inter == [] and elapsed < 1.0
    report(1, ok, f"baseline {base} kernels, explorer {len(pats)} pattern(s) covering all={full}, "
                  f"global intermediates {inter}, {elapsed:.2f}s")
    assert ok


def test_criterion_2_kernel_count_reduction(dev, models, report):
    t = time.perf_counter()
    names = list_fixtures()
    ours = theirs = 0
    for name in names:
        g = load_fixture(name)
        ours += explore(g, dev, models).plan.kernel_count(g)
        theirs += run_baseline(g).kernel_count(g)
    elapsed = time.perf_counter() - t
    ok = len(names) >= 8 and ours <= 0.5 * theirs and elapsed < 10
    report(2, ok, f"{len(names)} fixtures, stitched {ours} vs baseline {theirs} "
                  f"(ratio {ours / theirs:.3f}), {elapsed:.1f}s")
    assert ok


def test_criterion_3_search_quality(dev, models, report):
    t = time.perf_counter()
    near, nonneg = 0, 0
    for seed in range(100):
        g = random_graph(seed)
        opt, _ = brute_force_optimum(g, dev, models)
        got = explore(g, dev, models).plan.total_score
        near += got >= 0.9 * opt - 1e-9
        nonneg += got >= -1e-9
    elapsed = time.perf_counter() - t
    ok = near >= 90 and nonneg == 100 and elapsed < 300
    report(3, ok, f"within 90% of optimum {near}/100, at least empty plan {nonneg}/100, {elapsed:.1f}s")
    assert ok


def test_criterion_4_semantic_equivalence(dev, models, report):
    t = time.perf_counter()
    failures = []
    runs = 0
    for name in list_fixtures():
        g = load_fixture(name)
        res = explore(g, dev, models)
        for seed in range(10):
            inp = random_inputs(g, seed)
            rep = compare(eval_plan(g, res.plan, res.cost.kernel_plans, inp), eval_reference(g, inp))
            runs += 1
            if not rep.passed:
                failures.append((name, seed))
    elapsed = time.perf_counter() - t
    ok = not failures and elapsed < 120
    report(4, ok, f"{runs - len(failures)}/{runs} fixture runs match, {elapsed:.1f}s")
    assert ok, failures


def test_criterion_5_cost_model_properties(dev, models, report):
    t = time.perf_counter()
    counts = dict.fromkeys(["occupancy", "waves", "mem", "delta"], 0)
    blocks = st.sampled_from([32, 64, 128, 256, 512, 1024])
    regs = st.integers(1, 255)
    shmem = st.integers(0, dev.shared_mem_per_block_limit)
    cfg = settings(max_examples=1000, deadline=None, database=None)

    @cfg
    @given(blocks, regs, regs, shmem, shmem)
    def occ(block, r1, r2, s1, s2):
        counts["occupancy"] += 1
        ld = LaunchDims(1, block)
        (rl, rh), (sl, sh) = sorted((r1, r2)), sorted((s1, s2))
        assert occupancy(ld, rh, sl, dev) <= occupancy(ld, rl, sl, dev)
        assert occupancy(ld, rl, sh, dev) <= occupancy(ld, rl, sl, dev)

    @cfg
    @given(st.floats(0, 1e7), st.floats(1 / 64, 1.0))
    def waves(n, o):
        counts["waves"] += 1
        w = wave_count(n, o, dev)
        assert math.isclose(w * o * dev.sm_count * dev.max_warps_per_sm, n, rel_tol=1e-9, abs_tol=1e-9)

    @cfg
    @given(st.sampled_from(TRANSITIONS), st.floats(0, 4e6), st.floats(0, 4e6))
    def mem(tr, a, b):
        counts["mem"] += 1
        lo, hi = sorted((a, b))
        assert mem_transfer_saving(lo, tr, models.mem) <= mem_transfer_saving(hi, tr, models.mem)

    @cfg
    @given(st.integers(0, 10**6), st.data())
    def delta(seed, data):
        counts["delta"] += 1
        g = random_graph(seed)
        verts = frozenset(data.draw(st.sets(st.sampled_from(sorted(g.fusable_vertices)), min_size=1)))
        s = delta_evaluate(verts, g, dev, models)
        assert s.f == s.t_reduced_mem + s.t_reduced_calls - s.t_penalty

    for prop in (occ, waves, mem, delta):
        prop()
    elapsed = time.perf_counter() - t
    ok = min(counts.values()) >= 1000 and elapsed < 60
    report(5, ok, f"cases {counts}, {elapsed:.1f}s")
    assert ok


def test_criterion_6_shared_memory_allocator(report):
    t = time.perf_counter()
    optimal, over = 0, 0
    for seed in range(100):
        g = random_graph(1000 + seed)
        verts = frozenset(g.fusable_vertices)
        rng = np.random.default_rng(seed)
        cands = [v for v in g.topo_order
                 if v in verts and g.op_class(v) in (OpClass.REDUCTION, OpClass.EXPENSIVE)][:7]
        req = {v: int(rng.integers(1, 17)) * 4 for v in cands}
        roots = set(cands) | set(pattern_outputs(g, verts))
        amap = allocate_shared_memory(verts, req, g, roots)
        ranges = live_ranges(g, verts, list(req), roots)
        opt = interference_optimum([req[v] for v in req], [ranges[v] for v in req])
        optimal += amap.total == opt
        over += amap.total > sum(req.values())
    elapsed = time.perf_counter() - t
    ok = optimal >= 90 and over == 0 and elapsed < 60
    report(6, ok, f"matches oracle optimum {optimal}/100, exceeds sum of requests {over}/100, {elapsed:.1f}s")
    assert ok


def _chain(n: int):
    ops = ["add", "exp", "mul", "tanh"]
    lines = ["x = parameter : f32[64,64]", "c = constant [value=0.5] : f32[64,64]", "v0 = mul(x, c)"]
    for i in range(1, n):
        o = ops[i % 4]
        lines.append(f"v{i} = {o}(v{i - 1}, c)" if o in ("add", "mul") else f"v{i} = {o}(v{i - 1})")
    lines.append(f"output v{n - 1}")
    return parse_graph("\n".join(lines) + "\n")


def test_criterion_7_linear_delta_calls(dev, models, report):
    t = time.perf_counter()
    xs, ys = [], []
    for n in (10, 100, 1000, 10000):
        g = _chain(n)
        ctx = SearchContext(g, dev, models, 3)
        cands = explore_candidates(g, 3, dev, models, ctx)
        remote_fusion(g, cands, 3, dev, models, ctx)
        xs.append(n)
        ys.append(ctx.delta_calls)
    x, y = np.array(xs, float), np.array(ys, float)
    a, b = np.polyfit(x, y, 1)
    r2 = 1 - ((y - (a * x + b)) ** 2).sum() / ((y - y.mean()) ** 2).sum()
    elapsed = time.perf_counter() - t
    ok = r2 >= 0.99 and elapsed < 120
    report(7, ok, f"delta calls {dict(zip(xs, ys))}, R^2 {r2:.6f}, {elapsed:.1f}s")
    assert ok


def test_criterion_8_determinism(tmp_path, report, capsys):
    same = []
    for name in list_fixtures():
        dumps = []
        for run in "ab":
            out = tmp_path / name / run
            assert main(["--graph", str(fixture_path(name)), "--out", str(out), "--run-baseline"]) == 0
            dumps.append((out / "plan.json").read_bytes())
        json.loads(dumps[0])
        same.append(dumps[0] == dumps[1])
    capsys.readouterr()
    ok = all(same)
    report(8, ok, f"byte-identical plan dumps {sum(same)}/{len(same)} fixtures")
    assert ok
