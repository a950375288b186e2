"""Deterministic expected-value engine for the effective reproduction number.

The susceptible pool is tracked per bin as an expected count. Infection
removes susceptibles in proportion to their susceptibility, so after a
cumulative exposure ``t`` the pool is ``c_j(t) = c_j(0) * exp(-s_j t)`` and
the expected number removed is ``n(t) = sum_j c_j(0) (1 - exp(-s_j t))``. The
node infected at step ``n`` has expected infectiousness
``sum_j phi_j s_j c_j / W`` and faces susceptibility mass ``W = sum_j s_j c_j``,
so

    R(n) = beta * sum_j phi_j s_j c_j(t_n),

with ``beta`` calibrated so that ``R(0) = r0``. Integer steps are sampled from
this flow; continuous evaluation and threshold crossings are solved on the
flow itself, so mapping identities between vaccinated and natural evolutions
hold to rounding rather than to interpolation error.

``scheme="euler"`` runs the plain one-step recursion
``c_{n+1} = c_n - s c_n / W_n`` instead, for comparison.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import brentq

from . import _kernels
from ._csvio import write_rows as _write_rows
from .errors import ConsistencyError, InvalidArgumentError
from .spreading import SpreadingProfile, require_valid

CROSS_METHOD_RTOL = 1e-6
INDEX_CASES = ("biased", "uniform")


class _Flow:
    """Closed-form pool evolution from an initial per-bin count vector."""

    __slots__ = ("s", "c", "wc", "beta", "reach")

    def __init__(self, s, w, c, beta):
        self.s = np.asarray(s, dtype=float)
        self.c = np.asarray(c, dtype=float)
        self.wc = np.asarray(w, dtype=float) * self.c
        self.beta = float(beta)
        self.reach = float(self.c[self.s > 0].sum())

    def removed(self, t: float) -> float:
        if math.isinf(t):
            return self.reach
        return float(np.dot(self.c, -np.expm1(-self.s * t)))

    def value(self, t: float) -> float:
        if math.isinf(t):
            return 0.0
        return self.beta * float(np.dot(self.wc, np.exp(-self.s * t)))

    def pool(self, t: float) -> np.ndarray:
        if math.isinf(t):
            return np.where(self.s > 0, 0.0, self.c)
        return self.c * np.exp(-self.s * t)

    def _upper(self, fn, lo: float) -> float:
        hi = max(2.0 * lo, 1.0)
        while fn(hi) > 0:
            hi *= 2.0
            if hi > 1e300:
                raise ConsistencyError("flow bracket search diverged")
        return hi

    def exposure_at(self, n: float, lo: float = 0.0, hi: float = math.inf) -> float:
        """Exposure at which exactly ``n`` units have been removed."""
        if n <= 0:
            return 0.0
        if n >= self.reach * (1.0 - 1e-14):
            return math.inf
        fn = lambda t: n - self.removed(t)  # noqa: E731
        if math.isinf(hi):
            hi = self._upper(fn, lo)
        if fn(hi) >= 0:
            return hi
        return brentq(fn, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)

    def exposure_at_level(self, level: float, lo: float = 0.0, hi: float = math.inf) -> float:
        """First exposure at which the scaled value drops to ``level``."""
        fn = lambda t: self.value(t) - level  # noqa: E731
        if fn(lo) <= 0:
            return lo
        if math.isinf(hi):
            hi = self._upper(fn, lo)
        if fn(hi) >= 0:
            return hi
        return brentq(fn, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


@dataclass(frozen=True, eq=False)
class RCurve:
    """Effective reproduction number sampled at integer steps ``n = 0..len-1``.

    Curves built from a profile carry the underlying flow and evaluate real
    ``n`` exactly; bare curves (e.g. empirical ones) interpolate linearly.
    """

    values: np.ndarray
    beta: float = float("nan")
    origin: SpreadingProfile | None = None
    vaccination_markers: tuple = ()
    exposure: np.ndarray | None = None
    _flow: _Flow | None = field(default=None, repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def r_start(self) -> float:
        return float(self.values[0])

    def __call__(self, n: float) -> float:
        n = float(n)
        if n < 0:
            raise InvalidArgumentError(f"step must be nonnegative, got {n}")
        k = int(math.floor(n))
        if k == n and k < len(self.values):
            return float(self.values[k])
        if self._flow is None:
            if k + 1 >= len(self.values):
                return float(self.values[-1]) if n <= len(self.values) - 1 else 0.0
            a, b = self.values[k], self.values[k + 1]
            return float(a + (b - a) * (n - k))
        lo, hi = 0.0, math.inf
        if self.exposure is not None and k < len(self.exposure):
            lo = float(self.exposure[k])
            if k + 1 < len(self.exposure):
                hi = float(self.exposure[k + 1])
        if math.isinf(lo):
            return 0.0
        return self._flow.value(self._flow.exposure_at(n, lo, hi))

    def crossing(self, level: float = 1.0) -> float | None:
        """Smallest real ``n`` with R(n) <= level, or None if R(0) <= level.

        Returns ``inf`` if the sampled range never reaches the level.
        """
        v = self.values
        if v[0] <= level:
            return None
        below = np.flatnonzero(v <= level)
        if self._flow is None:
            if below.size == 0:
                return math.inf
            k = int(below[0])
            if v[k] == level:
                return float(k)
            a, b = v[k - 1], v[k]
            return float(k - 1 + (a - level) / (a - b))
        flow = self._flow
        if below.size == 0:
            lo = float(self.exposure[-1])
            if math.isinf(lo):
                return math.inf
            hi = math.inf
        else:
            k = int(below[0])
            if v[k] == level and math.isfinite(self.exposure[k]):
                return float(k)
            lo = float(self.exposure[k - 1])
            hi = float(self.exposure[k])
        t = flow.exposure_at_level(level, lo, hi)
        if self.exposure is not None and t <= self.exposure[0] and v[0] > level:
            # uniform index case: the value at n = 0 is set apart from the flow
            return 0.0
        return flow.removed(t)

    def to_csv(self, path_or_buf=None, region: str | None = None) -> str | None:
        return write_rcurve_csv([self], path_or_buf, regions=[region] if region is not None else None)


@dataclass(frozen=True)
class HitResult:
    """Expected infections before the reproduction number first drops to 1."""

    infections_before_hit: float
    crossed: bool
    r_start: float = float("nan")
    population: int | None = None
    x: int = 0
    i: int = 0
    region_id: str = "region"

    @property
    def relative_drop(self) -> float:
        """Fraction by which R must fall from its starting value to reach 1."""
        if not self.crossed:
            return 0.0
        return (self.r_start - 1.0) / self.r_start

    @property
    def fraction(self) -> float:
        """Infections before the threshold as a fraction of the initially susceptible, N - x."""
        if self.population is None:
            raise InvalidArgumentError("fraction needs the population size")
        return self.infections_before_hit / (self.population - self.x)


@dataclass(frozen=True)
class ConvexityReport:
    min_second_difference: float
    tolerance: float
    convex: bool
    argmin: int | None = None


def _check_index_case(index_case: str) -> str:
    if index_case not in INDEX_CASES:
        raise InvalidArgumentError(f"index_case must be one of {INDEX_CASES}, got {index_case!r}")
    return index_case


def calibrate_beta(profile: SpreadingProfile, index_case: str = "biased") -> float:
    """Pair-probability scale making the index case's expected offspring equal r0."""
    _check_index_case(index_case)
    c, s, phi = profile.counts, profile.s, profile.phi
    mass = float(np.dot(s, c))
    if not mass > 0:
        raise InvalidArgumentError("profile has no susceptibility mass")
    if index_case == "biased":
        denom = float(np.dot(phi * s, c))
    else:
        denom = float(np.dot(phi, c) / c.sum()) * mass
    if not denom > 0:
        raise InvalidArgumentError("profile has no infectiousness mass")
    return profile.r0 / denom


def _euler_values(s, w, c, beta, n_steps):
    c = c.astype(float).copy()
    out = [beta * float(np.dot(w, c))]
    for _ in range(n_steps):
        mass = float(np.dot(s, c))
        if mass <= 0:
            break
        c = np.maximum(c - s * c / mass, 0.0)
        out.append(beta * float(np.dot(w, c)))
    return np.array(out)


@functools.lru_cache(maxsize=512)
def _natural_curve(profile: SpreadingProfile, index_case: str, scheme: str) -> RCurve:
    require_valid(profile)
    beta = calibrate_beta(profile, index_case)
    w = profile.phi * profile.s
    n_steps = int(profile.population)
    if scheme == "euler":
        values = _euler_values(profile.s, w, profile.counts, beta, n_steps)
        values[0] = profile.r0
        return RCurve(values=values, beta=beta, origin=profile)
    exposure, value = _kernels.flow_curve(profile.s, w, profile.counts, n_steps)
    values = beta * value
    values[0] = profile.r0
    exposure.setflags(write=False)
    return RCurve(values=values, beta=beta, origin=profile, exposure=exposure,
                  _flow=_Flow(profile.s, w, profile.counts, beta))


def r_curve(profile: SpreadingProfile, *, index_case: str = "biased", scheme: str = "flow") -> RCurve:
    """R(n) for n = 0..N of the natural (unvaccinated) evolution."""
    _check_index_case(index_case)
    if scheme not in ("flow", "euler"):
        raise InvalidArgumentError(f"scheme must be 'flow' or 'euler', got {scheme!r}")
    return _natural_curve(profile, index_case, scheme)


def _as_curve(obj, index_case="biased") -> RCurve:
    return obj if isinstance(obj, RCurve) else r_curve(obj, index_case=index_case)


def hit_natural(curve: RCurve | SpreadingProfile) -> HitResult:
    """Infections before R first drops to 1 in the natural evolution."""
    curve = _as_curve(curve)
    origin = curve.origin
    meta = dict(population=origin.population if origin else None,
                region_id=origin.region_id if origin else "region")
    n_star = curve.crossing(1.0)
    if n_star is None:
        return HitResult(0.0, False, r_start=curve.r_start, **meta)
    return HitResult(float(n_star), True, r_start=curve.r_start, **meta)


def _population(profile: SpreadingProfile) -> int:
    return int(profile.population)


def _check_offline_x(profile, x):
    N = _population(profile)
    if not (0 <= x < N):
        raise InvalidArgumentError(f"need 0 <= x < N={N}, got x={x}")


def r_hat_offline(profile: SpreadingProfile, x: float, n: float, *, index_case: str = "biased") -> float:
    """R at step n when x vaccines are deployed uniformly before the first infection.

    Steps 1..x are the vaccinations, so R falls linearly on that prefix.
    """
    _check_offline_x(profile, x)
    N = _population(profile)
    if not (0 <= n <= N):
        raise InvalidArgumentError(f"need 0 <= n <= N={N}, got n={n}")
    if n <= x:
        return profile.r0 * (N - n) / N
    curve = r_curve(profile, index_case=index_case)
    p = (n - x) / (N - x)
    return (N - x) / N * curve(N * p)


def relative_drop_offline(profile: SpreadingProfile, x: float) -> float:
    """r(x) = (R0_x - 1) / R0_x with R0_x = r0 (N - x) / N, the post-deployment start value."""
    _check_offline_x(profile, x)
    N = _population(profile)
    start = profile.r0 * (N - x) / N
    return (start - 1.0) / start


def _h_offline_mapping(profile, x, curve) -> float:
    N = _population(profile)
    if profile.r0 * (N - x) / N <= 1.0:
        return 0.0
    m = curve.crossing(N / (N - x))
    if m is None:
        return 0.0
    return (N - x) * (m / N)


def _h_offline_recursion(profile, x, index_case) -> float:
    """Rerun the pool recursion from counts scaled by (N - x) / N."""
    N = _population(profile)
    beta = calibrate_beta(profile, index_case)
    factor = (N - x) / N
    w = profile.phi * profile.s
    c = profile.counts * factor
    start = profile.r0 * factor
    if start <= 1.0:
        return 0.0
    n_steps = int(math.ceil(c.sum()))
    exposure, value = _kernels.flow_curve(profile.s, w, c, n_steps, stop_below=1.0, scale=beta)
    values = beta * value
    values[0] = start
    sub = RCurve(values=values, beta=beta, exposure=exposure, _flow=_Flow(profile.s, w, c, beta))
    m = sub.crossing(1.0)
    return 0.0 if m is None else float(m)


def h_offline(profile: SpreadingProfile, x: float, *, check: bool = True,
              index_case: str = "biased") -> HitResult:
    """Expected infections before herd immunity with x vaccines pre-deployed uniformly.

    The value comes from mapping onto the natural curve. With ``check`` it is
    recomputed by rerunning the pool recursion from the vaccinated start, and a
    disagreement beyond 1e-6 relative raises :class:`ConsistencyError`.
    """
    _check_offline_x(profile, x)
    N = _population(profile)
    curve = r_curve(profile, index_case=index_case)
    h = _h_offline_mapping(profile, x, curve)
    if check:
        h_b = _h_offline_recursion(profile, x, index_case)
        if abs(h - h_b) > CROSS_METHOD_RTOL * max(abs(h), abs(h_b), 1.0):
            raise ConsistencyError(f"offline HIT methods disagree at x={x}: mapping {h!r}, recursion {h_b!r}")
    start = profile.r0 * (N - x) / N
    return HitResult(h, h > 0, r_start=start, population=N, x=int(x), region_id=profile.region_id)


def delta(profile: SpreadingProfile, j: int, *, check: bool = False, index_case: str = "biased") -> float:
    """Marginal reduction H(j - 1) - H(j) from the j-th vaccine."""
    N = _population(profile)
    if not (1 <= j < N):
        raise InvalidArgumentError(f"need 1 <= j < N={N}, got j={j}")
    a = h_offline(profile, j - 1, check=check, index_case=index_case).infections_before_hit
    b = h_offline(profile, j, check=check, index_case=index_case).infections_before_hit
    return a - b


def online_coordinates(N: float, i: float, x: float, n: float) -> tuple[float, float]:
    """Map combined step n (i infections, x vaccinations, then infections) to the natural curve.

    Returns ``(m, d)`` with R_hat(i, x; n) = d * R(m).
    """
    d = 1.0 - x / (N - i)
    m = n - x * (N - n) / (N - i - x)
    return m, d


def _check_online(profile, i, x, allow_zero_x=True):
    N = _population(profile)
    if i < 0 or x < (0 if allow_zero_x else 1):
        raise InvalidArgumentError(f"need i >= 0 and x >= 1, got i={i}, x={x}")
    if i + x >= N:
        raise InvalidArgumentError(f"need i + x < N={N}, got i={i}, x={x}")


def r_hat_online(profile: SpreadingProfile, i: float, x: float, n: float, *,
                 index_case: str = "biased") -> float:
    """R at combined step n when x vaccines arrive right after the i-th infection."""
    _check_online(profile, i, x)
    N = _population(profile)
    if not (0 <= n <= N):
        raise InvalidArgumentError(f"need 0 <= n <= N={N}, got n={n}")
    curve = r_curve(profile, index_case=index_case)
    if n <= i or x == 0:
        return curve(n)
    if n <= i + x:
        return curve(i) * (1.0 - (n - i) / (N - i))
    m, d = online_coordinates(N, i, x, n)
    return d * curve(max(m, 0.0))


def r_hat_recursion(profile: SpreadingProfile, i: int, x: int, n: float, *,
                    index_case: str = "biased") -> float:
    """Reference for :func:`r_hat_online`: evolve the pool, thin it at step i, evolve again.

    Uses only the pool state, not the step-coordinate mapping.
    """
    _check_online(profile, i, x)
    N = _population(profile)
    beta = calibrate_beta(profile, index_case)
    w = profile.phi * profile.s
    natural = _Flow(profile.s, w, profile.counts, beta)
    if n <= i:
        return profile.r0 if n == 0 else natural.value(natural.exposure_at(n))
    pool_i = natural.pool(natural.exposure_at(i)) if i > 0 else profile.counts.astype(float)
    r_i = profile.r0 if i == 0 else beta * float(np.dot(w, pool_i))
    remaining = float(pool_i.sum())
    if n <= i + x:
        return r_i * (1.0 - (n - i) / remaining)
    after = _Flow(profile.s, w, pool_i * (1.0 - x / remaining), beta)
    return after.value(after.exposure_at(n - i - x))


def hit_with_events(profile: SpreadingProfile, events: Iterable[tuple[float, float]], *,
                    index_case: str = "biased") -> HitResult:
    """Infections before R drops to 1 when doses are deployed at given infection counts.

    ``events`` are ``(cumulative infections, doses)`` pairs; doses are drawn
    uniformly from the susceptibles left at that point and capped at that
    number. The state is a natural-curve coordinate ``m`` plus a scale ``a``
    (the surviving pool is ``a`` times the natural pool at ``m``), so any
    schedule is resolved on the single natural curve.
    """
    curve = r_curve(profile, index_case=index_case)
    N = _population(profile)
    events = sorted((float(t), float(y)) for t, y in events)
    a, m, infected, total_doses = 1.0, 0.0, 0.0, 0.0

    def result(h, crossed=True):
        return HitResult(float(h), crossed, r_start=curve.r_start, population=N,
                         x=int(round(total_doses)), i=int(events[0][0]) if events else 0,
                         region_id=profile.region_id)

    if curve.r_start <= 1.0:
        return result(0.0, False)
    for trigger, doses in events:
        if trigger < infected:
            trigger = infected
        target = m + (trigger - infected) / a
        m_cross = curve.crossing(1.0 / a) if a > 0 else 0.0
        if m_cross is None:
            m_cross = 0.0
        if m_cross <= target:
            return result(infected + a * max(m_cross - m, 0.0))
        m, infected = target, trigger
        remaining = a * (N - m)
        y = min(max(doses, 0.0), remaining)
        total_doses += y
        if remaining <= 0 or y >= remaining:
            return result(infected)
        a = a - y / (N - m)
    m_cross = curve.crossing(1.0 / a)
    if m_cross is None or m_cross <= m:
        return result(infected)
    if math.isinf(m_cross):
        m_cross = float(N)
    return result(infected + a * (m_cross - m))


def hit_online(profile: SpreadingProfile, i: int, x: int, *, index_case: str = "biased") -> HitResult:
    """Infections (vaccination steps excluded) before R drops to 1 when x doses follow infection i."""
    _check_online(profile, i, x)
    N = _population(profile)
    curve = r_curve(profile, index_case=index_case)
    natural = hit_natural(curve)
    if not natural.crossed or natural.infections_before_hit <= i:
        return HitResult(natural.infections_before_hit, natural.crossed, r_start=curve.r_start,
                         population=N, x=int(x), i=int(i), region_id=profile.region_id)
    if x == 0:
        return HitResult(natural.infections_before_hit, True, r_start=curve.r_start, population=N,
                         i=int(i), region_id=profile.region_id)
    d = 1.0 - x / (N - i)
    r_i = curve(i)
    if r_i * d <= 1.0:
        h = float(i)
    else:
        m_star = curve.crossing(1.0 / d)
        if m_star is None:
            m_star = float(i)
        n_star = (m_star * (N - i - x) + x * N) / (N - i)
        h = n_star - x
    return HitResult(h, True, r_start=curve.r_start, population=N, x=int(x), i=int(i),
                     region_id=profile.region_id)


def convexity_check(curve: RCurve | Sequence[float], tolerance: float | None = None) -> ConvexityReport:
    """Minimum second difference of a sampled curve and whether it clears ``-tolerance``.

    The default tolerance is 1e-9 times the curve's starting value.
    """
    values = curve.values if isinstance(curve, RCurve) else np.asarray(curve, dtype=float)
    if tolerance is None:
        tolerance = 1e-9 * abs(float(values[0])) if len(values) else 0.0
    if len(values) < 3:
        return ConvexityReport(0.0, tolerance, True, None)
    second = np.diff(values, 2)
    k = int(np.argmin(second))
    lowest = float(second[k])
    return ConvexityReport(lowest, tolerance, lowest >= -tolerance, k + 1)


def write_rcurve_csv(curves: Sequence[RCurve], path_or_buf=None, regions: Sequence[str] | None = None):
    """Write curves as ``region,n,R`` rows. Returns the text when no destination is given."""
    if regions is None:
        regions = [c.origin.region_id if c.origin is not None else f"region{k}" for k, c in enumerate(curves)]
    rows = [(reg, n, repr(float(v))) for reg, c in zip(regions, curves) for n, v in enumerate(c.values)]
    return _write_rows(["region", "n", "R"], rows, path_or_buf)


def write_hit_csv(results: Sequence[HitResult], path_or_buf=None):
    """Write results as ``region,x,i,H`` rows."""
    rows = [(r.region_id, r.x, r.i, repr(float(r.infections_before_hit))) for r in results]
    return _write_rows(["region", "x", "i", "H"], rows, path_or_buf)
