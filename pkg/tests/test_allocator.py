import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from herd_opt import allocator as al, meanfield as mf, spreading as sp
from herd_opt.errors import InfeasibleError, InstanceTooLargeError, InvalidArgumentError


def _random_region(rng, k):
    n = int(rng.integers(20, 61))
    r0 = float(rng.uniform(1.2, 4.0))
    kind = rng.integers(3)
    if kind == 0:
        return sp.build_homogeneous(n, r0, region_id=f"r{k}")
    if kind == 1:
        return sp.build_gamma(float(rng.uniform(0.2, 5.0)), n, r0, 8, region_id=f"r{k}")
    return sp.build_powerlaw(float(rng.uniform(1.3, 4.5)), 1, 100, n, r0, 8, region_id=f"r{k}")


def _brute_force(profiles, budget):
    # independent of the package's enumeration and quantization
    best = math.inf
    for alloc in itertools.product(*(range(min(budget, p.population) + 1) for p in profiles)):
        if sum(alloc) != budget:
            continue
        best = min(best, sum(mf.h_offline(p, v, check=False).infections_before_hit if v < p.population else 0.0
                             for p, v in zip(profiles, alloc)))
    return best


class TestExamples:
    def test_symmetric_gamma_splits_evenly(self):
        regions = [sp.build_gamma(0.5, 200, 2.0, 16, region_id=k) for k in "ab"]
        plan = al.greedy_allocate(regions, 10)
        assert plan.allocations == (5, 5)
        assert plan.regions == ("a", "b")

    def test_homogeneous_exact_blocking(self):
        regions = [sp.build_homogeneous(8, 2.0, region_id=f"h{k}") for k in range(3)]
        plan = al.greedy_allocate(regions, 12)
        assert plan.allocations == (4, 4, 4)
        assert plan.total_h == 0.0
        assert al.exhaustive_allocate(regions, 12).allocations == (4, 4, 4)

    def test_single_region(self):
        p = sp.build_gamma(1.0, 500, 2.0)
        plan = al.greedy_allocate([p], 37)
        assert plan.allocations == (37,)
        assert plan.total_h == pytest.approx(mf.h_offline(p, 37).infections_before_hit, abs=1e-9)

    def test_majority_to_less_heterogeneous_region(self):
        a = sp.normalize_mean(sp.build_powerlaw(1.5, 1, 100, 10000, 2.0), 0.014)
        b = sp.normalize_mean(sp.build_powerlaw(4.5, 1, 100, 10000, 2.0), 0.014)
        plan = al.greedy_allocate([a, b], 6000)
        assert plan.allocations[1] > plan.allocations[0]
        assert plan.evaluations <= 2 + 6000

    def test_zero_budget(self):
        p = sp.build_gamma(1.0, 100, 2.0)
        plan = al.greedy_allocate([p, p], 0)
        assert plan.allocations == (0, 0) and plan.trace == ()

    def test_full_budget_blocks_everything(self):
        regions = [sp.build_gamma(1.0, 50, 2.0, 8), sp.build_homogeneous(30, 3.0)]
        plan = al.greedy_allocate(regions, 80)
        assert plan.allocations == (50, 30) and plan.total_h == 0.0


class TestOptimality:
    def test_random_instances_match_exhaustive(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            k = int(rng.integers(1, 4))
            regions = [_random_region(rng, j) for j in range(k)]
            budget = int(rng.integers(0, min(sum(p.population for p in regions), 50) + 1))
            g = al.greedy_allocate(regions, budget)
            e = al.exhaustive_allocate(regions, budget)
            assert g.total_h == e.total_h

    def test_small_instances_match_brute_force(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            regions = [_random_region(rng, j) for j in range(2)]
            budget = int(rng.integers(0, 30))
            g = al.greedy_allocate(regions, budget)
            assert g.total_h == pytest.approx(_brute_force(regions, budget), rel=1e-9, abs=1e-9)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=20)
    def test_no_single_move_improves(self, seed):
        rng = np.random.default_rng(seed)
        regions = [_random_region(rng, j) for j in range(3)]
        budget = int(rng.integers(0, 60))
        plan = al.greedy_allocate(regions, budget)
        assert al.single_move_improvement(regions, plan) <= 1e-9

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=15)
    def test_objective_non_increasing_in_budget(self, seed):
        rng = np.random.default_rng(seed)
        regions = [_random_region(rng, j) for j in range(2)]
        totals = [al.greedy_allocate(regions, b).total_h for b in range(0, 40, 3)]
        assert all(b <= a for a, b in zip(totals, totals[1:]))

    def test_marginals_non_increasing_per_region(self):
        regions = [sp.build_gamma(0.25, 300, 2.0), sp.build_powerlaw(2.5, 1, 100, 300, 3.0)]
        plan = al.greedy_allocate(regions, 200)
        for r in range(2):
            ds = [d for _, i, d in plan.trace if i == r]
            assert all(b <= a + 1e-9 for a, b in zip(ds, ds[1:]))

    def test_exact_ties_resolved_by_index(self):
        regions = [sp.build_homogeneous(10, 2.0, region_id=k) for k in "abc"]
        plan = al.greedy_allocate(regions, 4)
        assert plan.allocations == (4, 0, 0)
        assert al.exhaustive_allocate(regions, 4).allocations == (0, 0, 4)
        assert al.exhaustive_allocate(regions, 4).total_h == plan.total_h


class TestErrors:
    def test_budget_over_capacity(self):
        with pytest.raises(InfeasibleError):
            al.greedy_allocate([sp.build_homogeneous(10, 2.0)], 11)

    def test_bad_budget(self):
        with pytest.raises(InvalidArgumentError):
            al.greedy_allocate([sp.build_homogeneous(10, 2.0)], -1)
        with pytest.raises(InvalidArgumentError):
            al.greedy_allocate([], 0)

    def test_exhaustive_too_large(self):
        regions = [sp.build_homogeneous(1000, 2.0) for _ in range(3)]
        with pytest.raises(InstanceTooLargeError):
            al.exhaustive_allocate(regions, 1000)


class TestExport:
    def test_csv_and_json(self):
        regions = [sp.build_homogeneous(8, 2.0, region_id=f"h{k}") for k in range(2)]
        plan = al.greedy_allocate(regions, 3)
        assert plan.to_csv().splitlines() == ["region,v,H", "h0,3,1.0", "h1,0,4.0"]
        doc = json.loads(plan.to_json(include_trace=True))
        assert doc["objective"] == 5.0 and len(doc["trace"]) == 3
        assert [r["v"] for r in doc["regions"]] == [3, 0]


class TestOnline:
    a = sp.normalize_mean(sp.build_powerlaw(1.5, 1, 100, 10000, 2.0, region_id="a"), 0.014)
    b = sp.normalize_mean(sp.build_powerlaw(4.5, 1, 100, 10000, 2.0, region_id="b"), 0.014)

    def test_single_batch_at_zero_is_offline(self):
        sched = al.online_policy([self.a, self.b], [(0, 3000)])
        offline = al.greedy_allocate([self.a, self.b], 3000)
        assert sched.events[0][1] == offline.allocations
        assert sched.total_h == pytest.approx(offline.total_h, rel=1e-9)

    def test_schedule_bookkeeping(self):
        sched = al.online_policy([self.a, self.b], [(0, 500), ([200, 300], 800)])
        assert [sum(d) for _, d in sched.events] == [500, 800]
        assert sched.events[1][0] == (200, 300)
        hs, total = al.predicted_total([self.a, self.b], [sched.region_events(r) for r in range(2)])
        assert total == pytest.approx(sched.total_h) and hs == sched.predicted_h
        lines = sched.to_csv().splitlines()
        assert lines[0] == "batch,region,step,doses" and len(lines) == 5

    def test_delay_never_helps(self):
        early = al.online_policy([self.a, self.b], [(0, 1000)]).total_h
        for step in (100, 300, 600):
            assert al.online_policy([self.a, self.b], [(step, 1000)]).total_h >= early - 1e-9

    def test_split_batches_no_better_than_merged(self):
        merged = al.online_policy([self.a, self.b], [(0, 1000)]).total_h
        split = al.online_policy([self.a, self.b], [(0, 400), (0, 600)]).total_h
        assert split >= merged - 1e-6

    def test_batch_beyond_remaining(self):
        small = [sp.build_homogeneous(10, 2.0), sp.build_homogeneous(10, 2.0)]
        with pytest.raises(InfeasibleError):
            al.online_policy(small, [(3, 15)])
        with pytest.raises(InvalidArgumentError):
            al.online_policy(small, [(3, 2), (1, 2)])
        with pytest.raises(InvalidArgumentError):
            al.online_policy(small, [([1, 2, 3], 2)])
