"""Multi-region license allocation.

Regions are disconnected, so the objective is separable:
``sum_i H_i(v_i)`` with each ``H_i`` convex and non-increasing. Granting
licenses one at a time to the region with the largest marginal reduction is
therefore optimal; :func:`exhaustive_allocate` enumerates every composition
and serves as the oracle.
"""
from __future__ import annotations

import heapq
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

from ._csvio import write_rows as _write_rows
from .errors import InfeasibleError, InstanceTooLargeError, InvalidArgumentError
from .meanfield import h_offline, hit_with_events
from .spreading import SpreadingProfile

TIE_TOL = 1e-12
EXHAUSTIVE_LIMIT = 10 ** 8


def _quantum(profiles: Sequence[SpreadingProfile]) -> float:
    """Grid step for H values: as fine as possible while any sum over regions stays exact.

    Every H_i is at most N_i, so multiples of 2**-e below sum(N_i) add without
    rounding. Comparisons between allocations then never depend on summation
    order, and equal-valued allocations tie exactly.
    """
    total = max(2, sum(int(p.population) for p in profiles))
    return 2.0 ** max(-30, math.ceil(math.log2(total)) - 52)


class _HitTable:
    """Memoized H(v) for one region; H(N) = 0 since a fully vaccinated region has no spread."""

    def __init__(self, profile: SpreadingProfile, quantum: float):
        self.profile = profile
        self.N = int(profile.population)
        self.quantum = quantum
        self._cache: dict[int, float] = {}

    def __call__(self, v: int) -> float:
        h = self._cache.get(v)
        if h is None:
            h = 0.0 if v >= self.N else h_offline(self.profile, v, check=False).infections_before_hit
            h = round(h / self.quantum) * self.quantum
            self._cache[v] = h
        return h


def hit_tables(profiles: Sequence[SpreadingProfile]) -> list[_HitTable]:
    """Memoized per-region H tables sharing one exact-summation grid."""
    q = _quantum(profiles)
    return [_HitTable(p, q) for p in profiles]


@dataclass(frozen=True)
class AllocationPlan:
    allocations: tuple[int, ...]
    predicted_h: tuple[float, ...]
    total_h: float
    budget: int
    regions: tuple[str, ...] = ()
    evaluations: int = 0
    trace: tuple[tuple[int, int, float], ...] = field(default=(), repr=False)

    def to_csv(self, path_or_buf=None):
        rows = [(r, v, repr(h)) for r, v, h in zip(self.regions, self.allocations, self.predicted_h)]
        return _write_rows(["region", "v", "H"], rows, path_or_buf)

    def report(self, include_trace: bool = False) -> dict:
        out = {
            "budget": self.budget,
            "objective": self.total_h,
            "regions": [{"region": r, "v": v, "H": h}
                        for r, v, h in zip(self.regions, self.allocations, self.predicted_h)],
            "delta_evaluations": self.evaluations,
        }
        if include_trace:
            out["trace"] = [{"step": s, "region": self.regions[i], "delta": d} for s, i, d in self.trace]
        return out

    def to_json(self, include_trace: bool = False) -> str:
        return json.dumps(self.report(include_trace), indent=2)


def _check_instance(profiles: Sequence[SpreadingProfile], budget: int) -> None:
    if len(profiles) < 1:
        raise InvalidArgumentError("need at least one region")
    if isinstance(budget, bool) or int(budget) != budget or budget < 0:
        raise InvalidArgumentError(f"budget must be a nonnegative integer, got {budget!r}")
    capacity = sum(int(p.population) for p in profiles)
    if budget > capacity:
        raise InfeasibleError(f"budget {budget} exceeds total population {capacity}")


def _plan(profiles, tables, alloc, budget, evaluations=0, trace=()):
    hs = tuple(t(v) for t, v in zip(tables, alloc))
    return AllocationPlan(tuple(int(v) for v in alloc), hs, math.fsum(hs), int(budget),
                          tuple(p.region_id for p in profiles), evaluations, tuple(trace))


def greedy_allocate(profiles: Sequence[SpreadingProfile], budget: int) -> AllocationPlan:
    """Grant licenses one at a time to the region with the largest marginal reduction.

    Marginals within 1e-12 of the best go to the lowest region index. Uses at
    most ``k + budget`` marginal evaluations.
    """
    _check_instance(profiles, budget)
    tables = hit_tables(profiles)
    alloc = [0] * len(profiles)
    evaluations = 0
    heap: list[tuple[float, int]] = []

    def push(i):
        nonlocal evaluations
        if alloc[i] >= tables[i].N:
            return
        evaluations += 1
        d = tables[i](alloc[i]) - tables[i](alloc[i] + 1)
        heapq.heappush(heap, (-d, i))

    for i in range(len(profiles)):
        push(i)
    trace = []
    for step in range(budget):
        best = heapq.heappop(heap)
        tied = [best]
        while heap and -heap[0][0] >= -best[0] - TIE_TOL:
            tied.append(heapq.heappop(heap))
        chosen = min(tied, key=lambda e: e[1])
        for e in tied:
            if e is not chosen:
                heapq.heappush(heap, e)
        i = chosen[1]
        alloc[i] += 1
        trace.append((step, i, -chosen[0]))
        push(i)
    return _plan(profiles, tables, alloc, budget, evaluations, trace)


def _compositions(budget: int, caps: Sequence[int]):
    """All (v_1..v_k) with sum = budget and v_i <= caps[i], in lexicographic order."""
    k = len(caps)
    suffix = [0] * (k + 1)
    for i in range(k - 1, -1, -1):
        suffix[i] = suffix[i + 1] + caps[i]
    prefix = [0] * k

    def rec(i, left):
        if i == k - 1:
            if left <= caps[i]:
                prefix[i] = left
                yield tuple(prefix)
            return
        lo = max(0, left - suffix[i + 1])
        for v in range(lo, min(caps[i], left) + 1):
            prefix[i] = v
            yield from rec(i + 1, left - v)

    yield from rec(0, budget)


def exhaustive_allocate(profiles: Sequence[SpreadingProfile], budget: int) -> AllocationPlan:
    """Minimize the total over every composition of ``budget``; ties go to the lexicographically smallest."""
    _check_instance(profiles, budget)
    k = len(profiles)
    if k * budget ** k > EXHAUSTIVE_LIMIT:
        raise InstanceTooLargeError(f"k * budget^k = {k * budget ** k} exceeds {EXHAUSTIVE_LIMIT}")
    tables = hit_tables(profiles)
    caps = [min(budget, t.N) for t in tables]
    values = [[t(v) for v in range(c + 1)] for t, c in zip(tables, caps)]
    best, best_total = None, math.inf
    for alloc in _compositions(budget, caps):
        total = math.fsum(values[i][v] for i, v in enumerate(alloc))
        if total < best_total:
            best, best_total = alloc, total
    return _plan(profiles, tables, best, budget)


def single_move_improvement(profiles: Sequence[SpreadingProfile], plan: AllocationPlan) -> float:
    """Largest reduction of the objective achievable by moving one license between regions.

    Nonpositive for a locally optimal plan.
    """
    tables = hit_tables(profiles)
    best = -math.inf
    for a, b in itertools.permutations(range(len(profiles)), 2):
        va, vb = plan.allocations[a], plan.allocations[b]
        if va == 0 or vb >= tables[b].N:
            continue
        before = tables[a](va) + tables[b](vb)
        after = tables[a](va - 1) + tables[b](vb + 1)
        best = max(best, before - after)
    return best


@dataclass(frozen=True)
class DeploymentSchedule:
    """Per-batch deployments: ``events[b] = (steps, doses)`` with one entry per region.

    ``steps[r]`` is the infection count in region r at which batch b arrived
    and was deployed; ``doses[r]`` is the number deployed there.
    """

    events: tuple[tuple[tuple[int, ...], tuple[int, ...]], ...]
    predicted_h: tuple[float, ...]
    total_h: float
    regions: tuple[str, ...] = ()

    def region_events(self, r: int) -> list[tuple[int, int]]:
        return [(steps[r], doses[r]) for steps, doses in self.events if doses[r] > 0]

    def to_csv(self, path_or_buf=None):
        rows = [(b, self.regions[r], steps[r], doses[r])
                for b, (steps, doses) in enumerate(self.events) for r in range(len(steps))]
        return _write_rows(["batch", "region", "step", "doses"], rows, path_or_buf)


def predicted_total(profiles: Sequence[SpreadingProfile], region_events: Sequence[Sequence[tuple[int, int]]]):
    """Per-region and total mean-field infections before herd immunity for the given deployments."""
    hs = tuple(hit_with_events(p, ev).infections_before_hit for p, ev in zip(profiles, region_events))
    return hs, math.fsum(hs)


def _batch_steps(step, k):
    if isinstance(step, (int, float)) and not isinstance(step, bool):
        return [int(step)] * k
    steps = [int(s) for s in step]
    if len(steps) != k:
        raise InvalidArgumentError(f"batch arrival needs {k} per-region steps, got {len(steps)}")
    return steps


def online_policy(profiles: Sequence[SpreadingProfile], batches: Sequence[tuple], ) -> DeploymentSchedule:
    """Deploy each batch at its arrival step, split greedily on current marginals.

    A batch is ``(arrival, doses)`` where ``arrival`` is an infection count
    shared by all regions or a per-region list of counts. Each region's
    marginal value of one more dose is evaluated from its own state: the
    infections it has seen and the doses it already received.
    """
    k = len(profiles)
    if k < 1:
        raise InvalidArgumentError("need at least one region")
    prepared = []
    for arrival, doses in batches:
        if int(doses) != doses or doses < 0:
            raise InvalidArgumentError(f"batch doses must be a nonnegative integer, got {doses!r}")
        prepared.append((_batch_steps(arrival, k), int(doses)))
    for (a, _), (b, _) in zip(prepared, prepared[1:]):
        if any(y < x for x, y in zip(a, b)):
            raise InvalidArgumentError("batch arrival steps must be nondecreasing")

    history: list[list[tuple[int, int]]] = [[] for _ in range(k)]
    given = [0] * k
    events = []
    for steps, doses in prepared:
        remaining = [int(p.population) - s - g for p, s, g in zip(profiles, steps, given)]
        if any(r < 0 for r in remaining):
            raise InfeasibleError("arrival step plus earlier doses exceed a region's population")
        if doses > sum(remaining):
            raise InfeasibleError(f"batch of {doses} doses exceeds {sum(remaining)} remaining susceptibles")
        split = [0] * k

        def value(r, y):
            return hit_with_events(profiles[r], history[r] + [(steps[r], y)]).infections_before_hit

        current = [value(r, 0) for r in range(k)]
        heap = []
        for r in range(k):
            if remaining[r] > 0:
                nxt = value(r, 1)
                heapq.heappush(heap, (-(current[r] - nxt), r, nxt))
        for _ in range(doses):
            best = heapq.heappop(heap)
            tied = [best]
            while heap and -heap[0][0] >= -best[0] - TIE_TOL:
                tied.append(heapq.heappop(heap))
            chosen = min(tied, key=lambda e: e[1])
            for e in tied:
                if e is not chosen:
                    heapq.heappush(heap, e)
            r = chosen[1]
            split[r] += 1
            current[r] = chosen[2]
            if split[r] < remaining[r]:
                nxt = value(r, split[r] + 1)
                heapq.heappush(heap, (-(current[r] - nxt), r, nxt))
        for r in range(k):
            if split[r]:
                history[r].append((steps[r], split[r]))
            given[r] += split[r]
        events.append((tuple(steps), tuple(split)))
    hs, total = predicted_total(profiles, history)
    return DeploymentSchedule(tuple(events), hs, total, tuple(p.region_id for p in profiles))
