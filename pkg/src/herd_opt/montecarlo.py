"""Stochastic agent-based SVIR simulation over a sampled binned population.

Each infective, in FIFO order of infection, tries every current susceptible
once with probability ``beta * i_u * s_w`` and then recovers. Vaccination
events move uniformly chosen susceptibles to V when cumulative infections
first reach their trigger.

Offspring counts are realized when an infective is processed, which in FIFO
order happens after later-indexed nodes have already depleted the pool. The
reported ``empirical_r`` therefore rescales each node's offspring by
``W_inf / W_proc``, the susceptibility mass at its infection over the mass at
its processing; this is an unbiased estimate of the expected offspring the node
would have had at its infection step. ``empirical_r_raw`` keeps the realized
counts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from . import _kernels
from ._csvio import write_rows as _write_rows
from ._parallel import ordered_map
from .errors import CalibrationOverflowError, InvalidArgumentError
from .meanfield import RCurve
from .spreading import SpreadingProfile, require_valid

EXTINCTION_FRACTION = 0.01
SURVIVAL_SHARE = 0.9
PROB_SLACK = 1e-12

SUSCEPTIBLE, INFECTIVE, RECOVERED, VACCINATED = "S", "I", "R", "V"


def _generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True, eq=False)
class Population:
    """A sampled population. Nodes are numbered bin by bin, so bin b holds ``offsets[b]:offsets[b+1]``."""

    bin_s: np.ndarray
    bin_phi: np.ndarray
    bin_counts: np.ndarray
    pair_scale: float
    index_case: str = "biased"
    profile: SpreadingProfile | None = None

    @property
    def size(self) -> int:
        return int(self.bin_counts.sum())

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.bin_counts)]).astype(np.int64)

    @property
    def node_bin(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.bin_counts)), self.bin_counts)

    @property
    def s_u(self) -> np.ndarray:
        return self.bin_s[self.node_bin]

    @property
    def i_u(self) -> np.ndarray:
        return self.bin_phi[self.node_bin]

    @property
    def pair_prob(self) -> np.ndarray:
        """Infection probability from a bin-a infective to a bin-b susceptible."""
        return self.pair_scale * np.outer(self.bin_phi, self.bin_s)

    @property
    def index_weight(self) -> np.ndarray:
        return self.bin_s.copy() if self.index_case == "biased" else np.ones_like(self.bin_s)


def _systematic_round(counts: np.ndarray, total: int, rng: np.random.Generator) -> np.ndarray:
    """Integer counts with exact sum ``total`` and expectation ``counts`` (rescaled to that sum)."""
    cum = np.cumsum(counts, dtype=float)
    cum *= total / cum[-1]
    u = rng.random()
    edges = np.floor(np.concatenate([[0.0], cum]) + u).astype(np.int64)
    edges[-1] = int(math.floor(total + u))
    return np.diff(edges)


def sample_population(profile: SpreadingProfile, seed=None, *, index_case: str = "biased") -> Population:
    """Draw N nodes from the binned profile and calibrate the pair scale to r0.

    Bin counts are rounded stochastically with the total preserved. The scale
    makes the index case's expected offspring equal r0: ``r0 / sum_u s_u i_u``
    for a susceptibility-biased index case, ``r0 / (mean(i) * sum_u s_u)``
    for a uniform one.
    """
    require_valid(profile)
    if index_case not in ("biased", "uniform"):
        raise InvalidArgumentError(f"index_case must be 'biased' or 'uniform', got {index_case!r}")
    rng = _generator(seed)
    counts = _systematic_round(profile.counts, int(profile.population), rng)
    s, phi = np.asarray(profile.s), np.asarray(profile.phi)
    if index_case == "biased":
        denom = float(np.dot(s * phi, counts))
    else:
        denom = float(np.dot(phi, counts)) / counts.sum() * float(np.dot(s, counts))
    if not denom > 0:
        raise InvalidArgumentError("sampled population has no infectiousness or susceptibility mass")
    beta = profile.r0 / denom
    present = counts > 0
    peak = beta * phi[present].max() * s[present].max()
    if peak > 1.0 + PROB_SLACK:
        raise CalibrationOverflowError(
            f"calibrated pair probability reaches {peak:.4g} > 1; lower r0 or raise the population")
    return Population(bin_s=s.copy(), bin_phi=phi.copy(), bin_counts=counts, pair_scale=beta,
                      index_case=index_case, profile=profile)


@dataclass(frozen=True, eq=False)
class EpisodeTrace:
    infection_order: np.ndarray
    secondary_counts: np.ndarray
    vaccination_events: tuple[tuple[int, int, int], ...]
    final_size: int
    w_infected: np.ndarray = field(repr=False, default=None)
    w_processed: np.ndarray = field(repr=False, default=None)
    vaccinated: np.ndarray = field(repr=False, default=None)
    compartments: np.ndarray | None = field(repr=False, default=None)

    @property
    def corrected_counts(self) -> np.ndarray:
        """Offspring rescaled to the susceptibility mass present at each node's infection."""
        with np.errstate(invalid="ignore", divide="ignore"):
            factor = np.where(self.w_processed > 0, self.w_infected / self.w_processed, 0.0)
        return self.secondary_counts * factor


def _interventions(interventions, region: int = 0) -> list[tuple[int, int]]:
    if interventions is None:
        return []
    if hasattr(interventions, "region_events"):
        return [(int(t), int(d)) for t, d in interventions.region_events(region)]
    return [(int(t), int(d)) for t, d in interventions]


def run_episode(population: Population, interventions=None, seed=None, *, region: int = 0,
                record_compartments: bool = False) -> EpisodeTrace:
    """One episode. ``interventions`` is a list of ``(trigger, doses)`` or a DeploymentSchedule."""
    events = sorted(_interventions(interventions, region), key=lambda e: e[0])
    triggers = np.array([t for t, _ in events], dtype=np.int64)
    doses = np.array([d for _, d in events], dtype=np.int64)
    if np.any(doses < 0):
        raise InvalidArgumentError("doses must be nonnegative")
    rng = _generator(seed)
    members = np.arange(population.size, dtype=np.int64)
    out = _kernels.run_episode(rng, population.bin_s, population.pair_prob, population.index_weight,
                               members, population.offsets, triggers, doses, record_compartments)
    applied = tuple((int(t), int(d), int(a)) for (t, d), a in zip(events, out["applied"]))
    return EpisodeTrace(infection_order=out["order"], secondary_counts=out["secondary"],
                        vaccination_events=applied, final_size=int(out["order"].size),
                        w_infected=out["w_inf"], w_processed=out["w_proc"],
                        vaccinated=out["vaccinated"], compartments=out["compartments"])


def run_episodes(population: Population, n_episodes: int, seed=0, interventions=None, *,
                 region: int = 0, threads: int | None = None) -> list[EpisodeTrace]:
    """Independent episodes on per-episode streams spawned from ``seed``; output order is episode order."""
    if n_episodes < 1:
        raise InvalidArgumentError(f"need at least one episode, got {n_episodes}")
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    streams = root.spawn(n_episodes)
    events = _interventions(interventions, region)
    return ordered_map(lambda ss: run_episode(population, events, np.random.default_rng(ss)), streams, threads)


def smoothing_window(population: int) -> int:
    """Centered moving-average width: max(25, N/200), made odd so it centers exactly."""
    w = max(25, int(population) // 200)
    return w if w % 2 else w + 1


def moving_average(values, window: int) -> np.ndarray:
    """Centered moving average; near the edges it averages whatever part of the window exists."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return v
    half = window // 2
    padded = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(v.size)
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half + 1, v.size)
    return (padded[hi] - padded[lo]) / (hi - lo)


def _first_crossing(values, level=1.0) -> float:
    if values.size == 0 or values[0] <= level:
        return 0.0
    below = np.flatnonzero(values <= level)
    if below.size == 0:
        return math.nan
    k = int(below[0])
    a, b = values[k - 1], values[k]
    return float(k - 1 + (a - level) / (a - b)) if a != b else float(k)


def _mean_by_index(rows: Sequence[np.ndarray], length: int):
    total = np.zeros(length)
    count = np.zeros(length, dtype=np.int64)
    for r in rows:
        total[:r.size] += r
        count[:r.size] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(count > 0, total / np.maximum(count, 1), np.nan)
    return mean, count


def _mean_stderr(x: np.ndarray) -> tuple[float, float]:
    if x.size == 0:
        return math.nan, math.nan
    m = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size >= 2 else math.nan
    return m, se


@dataclass(frozen=True, eq=False)
class SimReport:
    """Aggregate of a batch of episodes.

    ``empirical_r[n]`` averages the lag-corrected offspring of the n-th
    infected node (0 = index case) over all episodes that reached n;
    ``survivors[n]`` counts those episodes. Entries with fewer than
    ``survival_floor`` survivors are NaN. Major outbreaks are episodes whose
    final size is at least 1% of N; ``empirical_hit`` uses only those.
    """

    empirical_r: np.ndarray
    empirical_r_raw: np.ndarray
    survivors: np.ndarray
    major_r: np.ndarray
    major_survivors: np.ndarray
    episodes: int
    major_episodes: int
    mean_final_size: float
    final_size_stderr: float
    mean_major_final_size: float
    major_final_size_stderr: float
    empirical_hit: float
    window: int
    population: int
    master_seed: object = None
    survival_floor: int = 1

    @property
    def comparison_range(self) -> int:
        """Number of leading indices reached by at least 90% of major outbreaks."""
        if self.major_episodes == 0:
            return 0
        ok = self.major_survivors >= SURVIVAL_SHARE * self.major_episodes
        return int(np.argmin(ok)) if not ok.all() else int(ok.size)

    def smoothed_r(self) -> np.ndarray:
        return moving_average(np.nan_to_num(self.empirical_r[: max(self.defined_length, 0)]), self.window)

    @property
    def defined_length(self) -> int:
        ok = self.survivors >= self.survival_floor
        return int(np.argmin(ok)) if not ok.all() else int(ok.size)

    def compare(self, curve: RCurve | Sequence[float]) -> float:
        """Sup-norm gap between the smoothed empirical and smoothed mean-field R over the comparison range."""
        ref = curve.values if isinstance(curve, RCurve) else np.asarray(curve, dtype=float)
        n = min(self.comparison_range, self.defined_length, len(ref))
        if n == 0:
            return math.nan
        emp = moving_average(self.empirical_r[:n], self.window)
        mf = moving_average(ref[:n], self.window)
        return float(np.max(np.abs(emp - mf)))

    def to_csv(self, path_or_buf=None):
        """Per-index table ``n,empirical_R,survivors``."""
        rows = [(n, "" if math.isnan(v) else repr(float(v)), int(c))
                for n, (v, c) in enumerate(zip(self.empirical_r, self.survivors))]
        return _write_rows(["n", "empirical_R", "survivors"], rows, path_or_buf)

    def summary_csv(self, path_or_buf=None):
        """One row: ``episodes,mean_final_size,stderr,empirical_hit``."""
        rows = [(self.episodes, repr(self.mean_final_size), _fmt(self.final_size_stderr),
                 _fmt(self.empirical_hit))]
        return _write_rows(["episodes", "mean_final_size", "stderr", "empirical_hit"], rows, path_or_buf)


def aggregate(traces: Sequence[EpisodeTrace], population: int | None = None, *, window: int | None = None,
              survival_floor: int = 1, master_seed=None) -> SimReport:
    if len(traces) < 1:
        raise InvalidArgumentError("aggregate needs at least one trace")
    if population is None:
        population = max(t.final_size + t.vaccinated.size for t in traces)
    if window is None:
        window = smoothing_window(population)
    length = max(t.final_size for t in traces)
    corrected = [t.corrected_counts for t in traces]
    r, survivors = _mean_by_index(corrected, length)
    raw, _ = _mean_by_index([t.secondary_counts.astype(float) for t in traces], length)
    major = [t.final_size >= EXTINCTION_FRACTION * population for t in traces]
    major_rows = [c for c, m in zip(corrected, major) if m]
    major_r, major_survivors = _mean_by_index(major_rows, length)
    floor_mask = survivors < survival_floor
    r[floor_mask] = np.nan
    raw[floor_mask] = np.nan
    major_r[major_survivors < survival_floor] = np.nan

    sizes = np.array([t.final_size for t in traces], dtype=float)
    major_sizes = sizes[np.array(major, dtype=bool)]
    m_all, se_all = _mean_stderr(sizes)
    m_major, se_major = _mean_stderr(major_sizes)
    hit = math.nan
    if major_rows:
        ok = major_survivors >= max(survival_floor, 1)
        n_ok = int(np.argmin(ok)) if not ok.all() else int(ok.size)
        hit = _first_crossing(moving_average(major_r[:n_ok], window))
    return SimReport(empirical_r=r, empirical_r_raw=raw, survivors=survivors, major_r=major_r,
                     major_survivors=major_survivors, episodes=len(traces), major_episodes=len(major_rows),
                     mean_final_size=m_all, final_size_stderr=se_all, mean_major_final_size=m_major,
                     major_final_size_stderr=se_major, empirical_hit=hit, window=int(window),
                     population=int(population), master_seed=master_seed, survival_floor=survival_floor)


def simulate(profile: SpreadingProfile, episodes: int, seed=0, interventions=None, *,
             index_case: str = "biased", threads: int | None = None, window: int | None = None) -> SimReport:
    """Sample a population and run and aggregate ``episodes`` episodes, all derived from ``seed``."""
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    pop_stream, episode_stream = root.spawn(2)
    population = sample_population(profile, np.random.default_rng(pop_stream), index_case=index_case)
    traces = run_episodes(population, episodes, episode_stream, interventions, threads=threads)
    return aggregate(traces, population.size, window=window, master_seed=seed)


def final_size_fixed_point(r0: float) -> float:
    """Root z in (0, 1) of z = 1 - exp(-r0 z); 0 when r0 <= 1."""
    if r0 <= 1:
        return 0.0
    return brentq(lambda z: z - (1.0 - math.exp(-r0 * z)), 1e-12, 1.0)


def _fmt(x) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))
