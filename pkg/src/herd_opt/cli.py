"""``herd-opt`` command-line entry point."""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import allocator, meanfield, montecarlo
from ._csvio import write_rows
from .config import ExperimentConfig, load_config
from .errors import ConsistencyError, HerdOptError, InvalidArgumentError
from .plot import Series, line_chart

COMMANDS = ("rcurve", "allocate", "sweep", "timing", "simulate")


def _num(x) -> str:
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return ""
    return repr(float(x))


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    path = Path(args.out if args.out is not None else cfg.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_svg(path: Path, svg: str) -> None:
    path.write_text(svg, encoding="utf-8")


def _seed(args, cfg: ExperimentConfig) -> int:
    return int(args.seed) if args.seed is not None else cfg.montecarlo.seed


def cmd_rcurve(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(args, cfg)
    curves = [meanfield.r_curve(p, index_case=cfg.index_case) for p in cfg.regions]
    meanfield.write_rcurve_csv(curves, out / "rcurve.csv")
    for p, c in zip(cfg.regions, curves):
        hit = meanfield.hit_natural(c)
        conv = meanfield.convexity_check(c)
        print(f"{p.region_id}: r0={p.r0:g} N={p.population} HIT={hit.infections_before_hit:.6g} "
              f"convex={'yes' if conv.convex else 'no'}")
    if args.svg:
        series = [Series(p.region_id, np.arange(len(c)), c.values) for p, c in zip(cfg.regions, curves)]
        _write_svg(out / "rcurve.svg", line_chart(series, "Effective reproduction number", "n", "R(n)", hline=1.0))
    return 0


def cmd_allocate(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(args, cfg)
    profiles = list(cfg.regions)
    if cfg.mode == "online":
        if args.oracle:
            raise InvalidArgumentError("--oracle applies to offline allocation only")
        sched = allocator.online_policy(profiles, list(cfg.batches))
        sched.to_csv(out / "schedule.csv")
        report = {"mode": "online", "objective": sched.total_h,
                  "regions": [{"region": r, "H": h} for r, h in zip(sched.regions, sched.predicted_h)],
                  "batches": [{"steps": list(s), "doses": list(d)} for s, d in sched.events]}
        (out / "schedule.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
        for b, (steps, doses) in enumerate(sched.events):
            print(f"batch {b}: steps={list(steps)} doses={list(doses)}")
        print(f"objective={sched.total_h:.6g}")
        return 0
    plan = allocator.greedy_allocate(profiles, cfg.budget)
    plan.to_csv(out / "allocation.csv")
    (out / "allocation.json").write_text(plan.to_json(include_trace=True) + "\n", encoding="utf-8")
    for r, v, h in zip(plan.regions, plan.allocations, plan.predicted_h):
        print(f"{r}: v={v} H={h:.6g}")
    print(f"objective={plan.total_h:.6g} evaluations={plan.evaluations}")
    if args.oracle:
        oracle = allocator.exhaustive_allocate(profiles, cfg.budget)
        if oracle.total_h == plan.total_h:
            print(f"MATCH oracle objective={oracle.total_h:.6g} allocation={list(oracle.allocations)}")
        else:
            print(f"MISMATCH greedy={plan.total_h!r} oracle={oracle.total_h!r} "
                  f"allocation={list(oracle.allocations)}")
            return 1
    return 0


def _simulated_total(cfg, allocation, seed) -> float:
    streams = np.random.SeedSequence(seed).spawn(len(cfg.regions))
    total = 0.0
    for p, v, ss in zip(cfg.regions, allocation, streams):
        rep = montecarlo.simulate(p, cfg.montecarlo.episodes, ss, [(0, int(v))] if v else None,
                                  index_case=cfg.index_case)
        total += rep.mean_final_size
    return total


def cmd_sweep(cfg: ExperimentConfig, args) -> int:
    if len(cfg.regions) != 2:
        raise InvalidArgumentError(f"sweep needs exactly two regions, got {len(cfg.regions)}")
    out = _out_dir(args, cfg)
    a, b = cfg.regions
    budget = cfg.budget
    plan = allocator.greedy_allocate([a, b], budget)
    points = {}
    for f in cfg.sweep:
        v1 = int(round(f * budget))
        v2 = budget - v1
        if v1 <= a.population and v2 <= b.population:
            points[v1] = f
    v_greedy = plan.allocations[0]
    points.setdefault(v_greedy, v_greedy / budget if budget else 0.0)
    order = sorted(points)
    tables = allocator.hit_tables([a, b])
    rows, mc_totals = [], {}
    endpoints = {order[0], order[-1]}
    seed = _seed(args, cfg)
    for v1 in order:
        v2 = budget - v1
        predicted = math.fsum([tables[0](v1), tables[1](v2)])
        sim = None
        if cfg.montecarlo.enabled and (cfg.montecarlo.points == "all" or v1 in endpoints or v1 == v_greedy):
            sim = _simulated_total(cfg, (v1, v2), seed)
            mc_totals[v1] = sim
        rows.append((_num(points[v1]), v1, v2, _num(predicted), _num(sim), int(v1 == v_greedy)))
    write_rows(["fraction", "v1", "v2", "predicted_H", "simulated_total", "greedy"], rows, out / "sweep.csv")
    best = min(rows, key=lambda r: float(r[3]))
    worst = max(rows, key=lambda r: float(r[3]))
    print(f"greedy: v=({v_greedy},{budget - v_greedy}) H={plan.total_h:.6g}")
    print(f"sweep minimum: v1={best[1]} H={float(best[3]):.6g}; worst: v1={worst[1]} H={float(worst[3]):.6g}")
    if args.svg:
        xs = [float(r[0]) for r in rows]
        series = [Series("predicted H", xs, [float(r[3]) for r in rows],
                         markers=[(v_greedy / budget if budget else 0.0, plan.total_h)])]
        if mc_totals:
            series.append(Series("simulated total", [points[v] for v in mc_totals], list(mc_totals.values()),
                                 markers=[(points[v], t) for v, t in mc_totals.items()]))
        _write_svg(out / "sweep.svg", line_chart(series, "Allocation sweep", f"fraction to {a.region_id}",
                                                 "infections"))
    return 0


def _timing_steps(cfg, p, x):
    if cfg.timing_steps is not None:
        return [i for i in cfg.timing_steps if i + x < p.population]
    hit = meanfield.hit_natural(meanfield.r_curve(p, index_case=cfg.index_case)).infections_before_hit
    stride = max(1, p.population // 50)
    last = max(0, int(math.floor(hit - x)))
    return list(range(0, last + 1, stride))


def cmd_timing(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(args, cfg)
    rows, series = [], []
    for p in cfg.regions:
        x = cfg.timing_x if cfg.timing_x is not None else max(1, p.population // 20)
        steps = _timing_steps(cfg, p, x)
        hs = [meanfield.hit_online(p, i, x, index_case=cfg.index_case).infections_before_hit for i in steps]
        rows += [(p.region_id, i, x, _num(h)) for i, h in zip(steps, hs)]
        series.append(Series(p.region_id, steps, hs))
        if hs:
            print(f"{p.region_id}: x={x} H(i=0)={hs[0]:.6g} H(i={steps[-1]})={hs[-1]:.6g} "
                  f"penalty={hs[-1] - hs[0]:.6g}")
    write_rows(["region", "i", "x", "H"], rows, out / "timing.csv")
    if args.svg:
        _write_svg(out / "timing.svg", line_chart(series, "Deployment timing", "arrival step i",
                                                  "infections before HIT"))
    return 0


def cmd_simulate(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(args, cfg)
    seed = _seed(args, cfg)
    streams = np.random.SeedSequence(seed).spawn(len(cfg.regions))
    r_rows, s_rows, series = [], [], []
    for p, doses, ss in zip(cfg.regions, cfg.region_doses, streams):
        rep = montecarlo.simulate(p, cfg.montecarlo.episodes, ss, list(doses) or None,
                                  index_case=cfg.index_case)
        mf = meanfield.hit_with_events(p, doses, index_case=cfg.index_case).infections_before_hit
        n_def = rep.defined_length
        r_rows += [(p.region_id, n, _num(rep.empirical_r[n]), int(rep.survivors[n])) for n in range(n_def)]
        s_rows.append((p.region_id, rep.episodes, _num(rep.mean_final_size), _num(rep.final_size_stderr),
                       _num(rep.empirical_hit), _num(mf)))
        print(f"{p.region_id}: episodes={rep.episodes} major={rep.major_episodes} "
              f"mean_final_size={rep.mean_final_size:.6g} empirical_hit={rep.empirical_hit:.6g} "
              f"meanfield_hit={mf:.6g}")
        if args.svg:
            series.append(Series(f"{p.region_id} simulated", np.arange(n_def), rep.smoothed_r()))
            if not doses:
                c = meanfield.r_curve(p, index_case=cfg.index_case)
                series.append(Series(f"{p.region_id} mean-field", np.arange(min(n_def, len(c))),
                                     c.values[:n_def]))
    write_rows(["region", "n", "empirical_R", "survivors"], r_rows, out / "simulate_r.csv")
    write_rows(["region", "episodes", "mean_final_size", "stderr", "empirical_hit", "meanfield_hit"],
               s_rows, out / "simulate_summary.csv")
    if args.svg:
        _write_svg(out / "simulate.svg", line_chart(series, "Simulated reproduction number", "n", "R(n)",
                                                    hline=1.0))
    return 0


HANDLERS = {"rcurve": cmd_rcurve, "allocate": cmd_allocate, "sweep": cmd_sweep,
            "timing": cmd_timing, "simulate": cmd_simulate}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="herd-opt", description="Anti-virus license allocation via herd immunity")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="experiment config (JSON)")
    parser.add_argument("--out", default=None, help="output directory (default: config output.dir or .)")
    parser.add_argument("--svg", action="store_true", help="also write SVG charts")
    parser.add_argument("--oracle", action="store_true", help="allocate: verify greedy against exhaustive search")
    parser.add_argument("--seed", type=int, default=None, help="Monte Carlo master seed (u64)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is not None and not (0 <= args.seed < 2 ** 64):
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config)
        return HANDLERS[args.command](cfg, args)
    except ConsistencyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (HerdOptError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
