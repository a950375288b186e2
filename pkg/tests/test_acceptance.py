"""End-to-end acceptance checks; each test prints one PASS/FAIL line in the terminal summary."""
import csv
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from herd_opt import allocator as al, meanfield as mf, montecarlo as mc, spreading as sp
from herd_opt.cli import main

N = 10_000
CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _grid_profiles(r0):
    out = [sp.build_gamma(a, N, r0, region_id=f"gamma{a:g}") for a in (0.25, 1.0, 4.0)]
    out += [sp.build_powerlaw(e, 1, 100, N, r0, region_id=f"powerlaw{e:g}") for e in (1.5, 2.5, 3.0, 4.5)]
    return out


GRID = [p for r0 in (1.5, 2.0, 3.0) for p in _grid_profiles(r0)]


def _matched_pair():
    a = sp.normalize_mean(sp.build_powerlaw(1.5, 1, 100, N, 2.0, region_id="pl1.5"), 0.014)
    b = sp.normalize_mean(sp.build_powerlaw(4.5, 1, 100, N, 2.0, region_id="pl4.5"), 0.014)
    return a, b


@pytest.mark.criterion("1 homogeneous closed forms")
def test_homogeneous_closed_forms(acceptance):
    t0 = time.perf_counter()
    n_pop, r0 = 1000, 2.0
    p = sp.build_homogeneous(n_pop, r0)
    curve = mf.r_curve(p)
    n = np.arange(n_pop + 1)
    r_err = float(np.max(np.abs(curve.values - r0 * (n_pop - n) / n_pop)))
    blocking = n_pop - n_pop / r0
    h_err = max(abs(mf.h_offline(p, x).infections_before_hit - ((n_pop - x) - n_pop / r0)) / ((n_pop - x) - n_pop / r0)
                for x in range(0, int(blocking)))
    d_err = max(abs(mf.delta(p, j) - 1.0) for j in range(1, int(blocking)))
    elapsed = time.perf_counter() - t0
    ok = [acceptance.check(r_err <= 1e-9, f"R err {r_err:.1e}"),
          acceptance.check(h_err <= 1e-6, f"H rel err {h_err:.1e}"),
          acceptance.check(d_err <= 1e-6, f"delta err {d_err:.1e}"),
          acceptance.check(elapsed < 1.0, f"{elapsed:.2f}s")]
    assert all(ok)


@pytest.mark.criterion("2 convexity of H in x")
def test_convexity_of_h(acceptance):
    t0 = time.perf_counter()
    worst, where = math.inf, None
    for p in GRID:
        xs = range(0, N // 2 + 1, N // 100)
        h = np.array([mf.h_offline(p, x, check=True).infections_before_hit for x in xs])
        second = float(np.min(np.diff(h, 2)))
        if second < worst:
            worst, where = second, (p.region_id, p.r0)
    elapsed = time.perf_counter() - t0
    ok = [acceptance.check(worst >= -1e-6 * N, f"min second difference {worst:.3g} at {where}"),
          acceptance.check(elapsed < 60, f"{len(GRID)} profiles in {elapsed:.1f}s")]
    assert all(ok)


@pytest.mark.criterion("3 timing monotonicity")
def test_timing_monotonicity(acceptance):
    t0 = time.perf_counter()
    x = N // 20
    worst, steps = math.inf, 0
    for p in GRID:
        hit = mf.hit_natural(p).infections_before_hit
        grid = range(0, int(math.floor(hit - x)) + 1, N // 50)
        hs = [mf.hit_online(p, i, x).infections_before_hit for i in grid]
        steps += len(hs)
        if len(hs) > 1:
            worst = min(worst, float(np.min(np.diff(hs))))
    elapsed = time.perf_counter() - t0
    ok = [acceptance.check(worst >= -1e-6 * N, f"min increment {worst:.3g} over {steps} points"),
          acceptance.check(elapsed < 60, f"{elapsed:.1f}s")]
    assert all(ok)


@pytest.mark.criterion("4 online formula vs event recursion")
def test_online_formula_consistency(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_rel, worst_prod = 0.0, 0.0
    for _ in range(1000):
        p = GRID[int(rng.integers(len(GRID)))]
        i = int(rng.integers(0, N // 2))
        x = int(rng.integers(1, N // 4))
        n = float(rng.uniform(0, N - 1))
        a = mf.r_hat_online(p, i, x, n)
        b = mf.r_hat_recursion(p, i, x, n)
        worst_rel = max(worst_rel, abs(a - b) / max(abs(b), 1e-300) if b else abs(a))
        if n >= i + x:
            m, d = mf.online_coordinates(N, i, x, n)
            worst_prod = max(worst_prod, abs((1 - m / N) * d - (N - n) / N) / ((N - n) / N))
    elapsed = time.perf_counter() - t0
    ok = [acceptance.check(worst_rel <= 1e-4, f"max rel diff {worst_rel:.1e}"),
          acceptance.check(worst_prod <= 1e-12, f"constant product err {worst_prod:.1e}"),
          acceptance.check(elapsed < 60, f"{elapsed:.1f}s")]
    assert all(ok)


def _random_instance(rng):
    k = int(rng.integers(1, 4))
    regions = []
    for j in range(k):
        n = int(rng.integers(5, 41))
        r0 = float(rng.uniform(1.1, 4.0))
        kind = int(rng.integers(3))
        if kind == 0:
            regions.append(sp.build_homogeneous(n, r0, region_id=f"r{j}"))
        elif kind == 1:
            regions.append(sp.build_gamma(float(rng.uniform(0.2, 5.0)), n, r0, 8, region_id=f"r{j}"))
        else:
            regions.append(sp.build_powerlaw(float(rng.uniform(1.3, 4.5)), 1, 100, n, r0, 8, region_id=f"r{j}"))
    budget = int(rng.integers(0, min(15, sum(p.population for p in regions)) + 1))
    return regions, budget


@pytest.mark.criterion("5 greedy equals exhaustive")
def test_greedy_optimality(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(99)
    mismatches = 0
    for _ in range(100):
        regions, budget = _random_instance(rng)
        if al.greedy_allocate(regions, budget).total_h != al.exhaustive_allocate(regions, budget).total_h:
            mismatches += 1
    elapsed = time.perf_counter() - t0
    ok = [acceptance.check(mismatches == 0, f"{mismatches}/100 mismatches"),
          acceptance.check(elapsed < 300, f"{elapsed:.1f}s")]
    assert all(ok)


@pytest.mark.criterion("6 mean-field vs Monte Carlo")
def test_meanfield_vs_monte_carlo(acceptance):
    t0 = time.perf_counter()
    r0 = 2.0
    profiles = [sp.build_homogeneous(N, r0, region_id="homogeneous"),
                sp.build_powerlaw(2.5, 1, 100, N, r0, region_id="powerlaw2.5"),
                sp.build_gamma(0.25, N, r0, region_id="gamma0.25")]
    ok = []
    for p in profiles:
        rep = mc.simulate(p, 500, 7)
        curve = mf.r_curve(p)
        gap = rep.compare(curve)
        hit = mf.hit_natural(curve).infections_before_hit
        rel = (rep.empirical_hit - hit) / hit
        ok.append(acceptance.check(gap <= 0.05 * r0, f"{p.region_id} sup {gap:.3f}"))
        ok.append(acceptance.check(abs(rel) <= 0.05, f"{p.region_id} HIT {rel:+.1%}"))
        if p.kind == "homogeneous":
            z = mc.final_size_fixed_point(r0)
            frac = rep.mean_major_final_size / N
            ok.append(acceptance.check(abs(frac - z) / z <= 0.03, f"final size {frac:.4f} vs {z:.4f}"))
    elapsed = time.perf_counter() - t0
    ok.append(acceptance.check(elapsed < 600, f"{elapsed:.0f}s"))
    assert all(ok)


@pytest.mark.criterion("7 marginal value and timing effect")
def test_marginal_and_timing_effect(acceptance):
    a, b = _matched_pair()
    ok = []
    for p in (a, b, sp.build_gamma(0.25, N, 2.0, region_id="gamma0.25")):
        d = np.array([mf.delta(p, j) for j in range(1, 3001, 10)])
        ok.append(acceptance.check(bool(np.all(np.diff(d) <= 1e-9)),
                                   f"{p.region_id} delta {d[0]:.3f}->{d[-1]:.3f}"))
    x = N // 20
    for i in (N // 100, N // 50):
        pen = [mf.hit_online(p, i, x).infections_before_hit - mf.hit_online(p, 0, x).infections_before_hit
               for p in (a, b)]
        ok.append(acceptance.check(pen[0] > pen[1], f"penalty at i={i}: {pen[0]:.2f} vs {pen[1]:.2f}"))
    assert all(ok)


def _sweep(tmp_path, name, mc_enabled):
    doc = json.loads((CONFIGS / name).read_text())
    doc["montecarlo"]["enabled"] = mc_enabled
    cfg = tmp_path / name
    cfg.write_text(json.dumps(doc))
    out = tmp_path / name.replace(".json", "")
    assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
    with open(out / "sweep.csv", newline="") as fh:
        return list(csv.DictReader(fh)), doc


@pytest.mark.criterion("8 bi-regional sweeps")
def test_bi_regional_sweeps(acceptance, tmp_path):
    ok = []
    rows, _ = _sweep(tmp_path, "sweep_symmetric.json", False)
    best = min(rows, key=lambda r: float(r["predicted_H"]))
    ok.append(acceptance.check(float(best["fraction"]) == 0.5, f"symmetric minimum at {best['fraction']}"))

    rows, doc = _sweep(tmp_path, "sweep_asymmetric.json", True)
    greedy = next(r for r in rows if r["greedy"] == "1")
    best = min(rows, key=lambda r: float(r["predicted_H"]))
    worst = max(rows, key=lambda r: float(r["predicted_H"]))
    g_h = float(greedy["predicted_H"])
    ok.append(acceptance.check(best["v1"] == greedy["v1"], f"minimum at v=({best['v1']},{best['v2']})"))
    # every split of the budget, not only the grid
    a, b = (sp.from_config(r) for r in doc["regions"])
    ta, tb = al.hit_tables([a, b])
    budget = doc["budget"]
    line_min = min(math.fsum([ta(v), tb(budget - v)]) for v in range(budget + 1))
    ok.append(acceptance.check(g_h <= line_min + 1e-9 * N, f"greedy {g_h:.1f} vs full line minimum {line_min:.1f}"))
    ok.append(acceptance.check(int(greedy["v2"]) > int(greedy["v1"]), "larger share to pl4.5"))
    ratio = float(worst["predicted_H"]) / g_h
    ok.append(acceptance.check(ratio >= 1.10, f"worst/greedy {ratio:.2f}"))
    sim = {int(r["v1"]): float(r["simulated_total"]) for r in rows if r["simulated_total"]}
    ends = [sim[min(sim)], sim[max(sim)]]
    g_sim = sim[int(greedy["v1"])]
    ok.append(acceptance.check(g_sim <= min(ends), f"simulated greedy {g_sim:.0f} vs endpoints "
                                                   f"{ends[0]:.0f}, {ends[1]:.0f}"))
    assert all(ok)
