"""Command-line driver: graph in, fusion plan, stitched kernels and reports out.

Exit status: 0 on success, 1 when the simulation comparison fails, 2 on any
input, configuration or planning error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

from .baseline import run_baseline
from .device_model import load_config
from .errors import StitchError
from .explorer import ExploreResult, explore
from .graph_ir import CompGraph, FusionPlan, plan_errors, validate_plan
from .graph_text import parse_graph
from .planner import KernelPlan, emit_kernel_text
from .sim import compare, eval_plan, eval_reference, random_inputs, write_tensor

log = logging.getLogger("stitchplan")


@dataclass(frozen=True)
class RunConfig:
    graph_path: Path
    device_config_path: Path | None = None
    k: int = 3
    beam_width: int = 3
    output_dir: Path = Path("stitchplan_out")
    emit_dot: bool = False
    run_sim: bool = False
    run_baseline: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.beam_width < 1:
            raise ValueError("beam width must be at least 1")


def _kernel_json(kp: KernelPlan, g: CompGraph) -> dict:
    return {
        "name": kp.program.name,
        "grid": kp.launch.grid,
        "block": kp.launch.block,
        "sub_roots": g.sort_ids(kp.grouping.sub_roots),
        "schedules": {r: kp.per_op_schedule[r].name for r in kp.grouping.group_roots},
        "shared_memory": {
            v: {"offset": a.offset, "size": a.size, "reused_from": a.reused_from}
            for v, a in sorted(kp.shmem_alloc.entries.items())
        },
        "shared_bytes": kp.shared_bytes,
        "regs_per_thread": kp.regs_per_thread,
        "occupancy": kp.occupancy,
        "estimated_cycles": kp.estimated_cycles,
        "instr_histogram": dict(sorted(kp.instr_histogram.items())),
        "global_intermediates": [list(e) for e in sorted(kp.global_intermediates(g))],
    }


def plan_dump(g: CompGraph, res: ExploreResult, cfg: RunConfig, baseline: FusionPlan | None) -> dict:
    patterns = []
    for p in res.plan.patterns:
        s = res.ctx.score(p.vertices)
        patterns.append({
            "vertices": p.sorted_vertices(g),
            "producer": p.producer,
            "remote": p.remote,
            "delta": {"t_reduced_mem": s.t_reduced_mem, "t_reduced_calls": s.t_reduced_calls,
                      "t_penalty": s.t_penalty, "f": s.f},
            "kernel": _kernel_json(res.cost.kernel_plans[p.vertices], g),
        })
    covered = res.plan.covered
    dump = {
        "graph": cfg.graph_path.name,
        "k": cfg.k,
        "beam_width": cfg.beam_width,
        "patterns": patterns,
        "unfused": [v for v in g.fusable_vertices if v not in covered],
        "total_score": res.plan.total_score,
        "kernel_count": res.plan.kernel_count(g),
        "estimated_total_cycles": res.cost.total_cycles,
        "delta_evaluations": res.ctx.delta_calls,
    }
    if baseline is not None:
        dump["baseline"] = {
            "patterns": [p.sorted_vertices(g) for p in baseline.patterns],
            "kernel_count": baseline.kernel_count(g),
        }
    return dump


def to_dot(g: CompGraph, plan: FusionPlan) -> str:
    lines = ["digraph stitchplan {", "  rankdir=TB;", "  node [shape=box, fontname=monospace];"]
    owner = {}
    for i, p in enumerate(plan.patterns):
        lines.append(f"  subgraph cluster_{i} {{")
        lines.append(f'    label="pattern {i}{" (remote)" if p.remote else ""}";')
        for v in p.sorted_vertices(g):
            owner[v] = i
            lines.append(f'    "{v}" [label="{v}\\n{g[v].kind.value}"];')
        lines.append("  }")
    for v in g.topo_order:
        if v not in owner:
            style = ", style=dashed" if not g.fusable(v) else ""
            lines.append(f'  "{v}" [label="{v}\\n{g[v].kind.value}"{style}];')
    for a, b in sorted(g.edges(), key=lambda e: (g.topo_index[e[1]], g.topo_index[e[0]])):
        lines.append(f'  "{a}" -> "{b}";')
    lines.append("}")
    return "\n".join(lines) + "\n"


def cost_report(g: CompGraph, res: ExploreResult, baseline: FusionPlan | None) -> str:
    out = [f"graph: {len(g)} ops, {len(g.fusable_vertices)} fusable"]
    out.append(f"fused patterns: {len(res.plan.patterns)}, kernels: {res.plan.kernel_count(g)}")
    if baseline is not None:
        out.append(f"baseline kernels: {baseline.kernel_count(g)}")
    out.append(f"estimated total cycles (incl. launch overhead): {res.cost.total_cycles:.1f}")
    for i, p in enumerate(res.plan.patterns):
        s = res.ctx.score(p.vertices)
        kp = res.cost.kernel_plans[p.vertices]
        out.append(f"pattern {i}: {' '.join(p.sorted_vertices(g))}")
        out.append(f"  delta: mem={s.t_reduced_mem:.1f} calls={s.t_reduced_calls:.1f} "
                   f"penalty={s.t_penalty:.1f} f={s.f:.1f}")
        out.append(f"  kernel: grid={kp.launch.grid} block={kp.launch.block} regs={kp.regs_per_thread} "
                   f"shared={kp.shared_bytes}B cycles={kp.estimated_cycles:.2f}")
    return "\n".join(out) + "\n"


def run_pipeline(cfg: RunConfig) -> int:
    try:
        text = cfg.graph_path.read_text()
    except OSError as exc:
        print(f"error: [cli] cannot read graph: {exc}", file=sys.stderr)
        return 2
    try:
        g = parse_graph(text)
        dev, models = load_config(cfg.device_config_path)
        res = explore(g, dev, models, k=cfg.k, width=cfg.beam_width)
        errs = plan_errors(validate_plan(g, res.plan))
        if errs:
            raise StitchError("; ".join(str(d) for d in errs))
        baseline = run_baseline(g) if cfg.run_baseline else None
    except StitchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    out = cfg.output_dir
    (out / "kernels").mkdir(parents=True, exist_ok=True)
    dump = plan_dump(g, res, cfg, baseline)
    (out / "plan.json").write_text(json.dumps(dump, indent=2, sort_keys=True) + "\n")
    for p in res.plan.patterns:
        kp = res.cost.kernel_plans[p.vertices]
        (out / "kernels" / f"{kp.program.name}.kernel").write_text(emit_kernel_text(kp))
    (out / "report.txt").write_text(cost_report(g, res, baseline))
    if cfg.emit_dot:
        (out / "plan.dot").write_text(to_dot(g, res.plan))
    status = 0
    if cfg.run_sim:
        try:
            inputs = random_inputs(g, cfg.seed)
            ref = eval_reference(g, inputs)
            got = eval_plan(g, res.plan, res.cost.kernel_plans, inputs)
            rep = compare(got, ref)
        except StitchError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        (out / "tensors").mkdir(exist_ok=True)
        for name, t in sorted(inputs.items()):
            write_tensor(out / "tensors" / f"{name}.in.tensor", t)
        for name, t in sorted(got.items()):
            write_tensor(out / "tensors" / f"{name}.out.tensor", t)
        (out / "sim_report.txt").write_text(f"seed: {cfg.seed}\n{rep.text()}\n")
        print(f"simulation: {'pass' if rep.passed else 'FAIL'}")
        status = 0 if rep.passed else 1
    print(f"kernels: {res.plan.kernel_count(g)}"
          + (f" (baseline {baseline.kernel_count(g)})" if baseline is not None else "")
          + f"; artifacts in {out}")
    return status


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stitchplan", description=__doc__.splitlines()[0])
    ap.add_argument("--graph", required=True, type=Path, help="graph file")
    ap.add_argument("--device-config", type=Path, default=None,
                    help="device/cost INI file (default: $STITCHPLAN_CONFIG or bundled profile)")
    ap.add_argument("--k", type=int, default=3, help="candidate patterns kept per vertex")
    ap.add_argument("--beam-width", type=int, default=3)
    ap.add_argument("--out", type=Path, default=Path("stitchplan_out"), help="output directory")
    ap.add_argument("--emit-dot", action="store_true", help="write plan.dot clustered by pattern")
    ap.add_argument("--run-sim", action="store_true", help="check the plan against the reference evaluator")
    ap.add_argument("--run-baseline", action="store_true", help="also run the rule-based baseline fuser")
    ap.add_argument("--seed", type=int, default=0, help="seed for simulation inputs")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig(args.graph, args.device_config, args.k, args.beam_width, args.out, args.emit_dot,
                        args.run_sim, args.run_baseline, args.seed)
    except ValueError as exc:
        print(f"error: [cli] {exc}", file=sys.stderr)
        return 2
    return run_pipeline(cfg)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
