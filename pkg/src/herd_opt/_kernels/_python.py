"""Pure-Python/numpy kernels. Reference semantics for the compiled ``_core``.

Both backends consume a ``numpy.random.Generator`` identically (same
primitive draws in the same order), so a Monte Carlo episode is bit-identical
whichever backend runs it. The flow kernel solves the same equations by a
different schedule (vectorized chunks instead of a sequential sweep) and agrees
to rounding.
"""
from __future__ import annotations

import numpy as np

NEWTON_MAX_ITER = 200
CHUNK = 256


def _solve_exposure(s, c, targets, t0):
    """Solve sum_j c_j (1 - exp(-s_j t)) = target for each target, from below."""
    t = np.full(targets.shape, t0, dtype=float)
    tol = 1e-12 * np.maximum(1.0, targets)
    active = np.ones(targets.shape, dtype=bool)
    for _ in range(NEWTON_MAX_ITER):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        ta = t[idx]
        e = np.exp(-np.outer(ta, s))
        f = (-np.expm1(-np.outer(ta, s)) * c).sum(axis=1) - targets[idx]
        fp = (e * (s * c)).sum(axis=1)
        step = np.where(fp > 0, -f / np.where(fp > 0, fp, 1.0), 0.0)
        step = np.maximum(step, 0.0)
        t[idx] = ta + step
        done = (np.abs(f) <= tol[idx]) | (step <= 1e-16 * np.maximum(ta, 1e-300))
        active[idx[done]] = False
    return t


def flow_curve(s, w, c_init, n_steps, stop_below=-1.0, scale=1.0):
    """Pool exposure and weighted pool value after each unit of removed mass.

    Returns ``(exposure, value)`` with ``value[k] = sum_j w_j c_j exp(-s_j t_k)``
    where ``t_k`` removes exactly ``k`` units. Computation stops at ``n_steps``
    or just after ``scale * value`` first drops below ``stop_below``.
    """
    s = np.ascontiguousarray(s, dtype=float)
    w = np.ascontiguousarray(w, dtype=float)
    c = np.ascontiguousarray(c_init, dtype=float)
    reach = float(c[s > 0].sum())
    exposure = [np.zeros(1)]
    value = [np.array([float(np.dot(w, c))])]
    t_last = 0.0
    k = 1
    while k <= n_steps:
        hi = min(n_steps, k + CHUNK - 1)
        targets = np.arange(k, hi + 1, dtype=float)
        reachable = targets < reach * (1.0 - 1e-14)
        t = np.full(targets.shape, np.inf)
        if reachable.any():
            t[reachable] = _solve_exposure(s, c, targets[reachable], t_last)
            t_last = float(t[reachable][-1])
        v = np.zeros(targets.shape)
        fin = np.isfinite(t)
        if fin.any():
            v[fin] = (np.exp(-np.outer(t[fin], s)) * (w * c)).sum(axis=1)
        exposure.append(t)
        value.append(v)
        if stop_below >= 0 and np.any(scale * v < stop_below):
            cut = int(np.argmax(scale * v < stop_below))
            exposure[-1] = t[:cut + 1]
            value[-1] = v[:cut + 1]
            break
        k = hi + 1
    return np.concatenate(exposure), np.concatenate(value)


def _vaccinate(rng, doses, S, offsets, pool, out):
    """Move ``doses`` uniformly chosen susceptibles to V. Returns the count applied."""
    total = int(S.sum())
    if doses <= 0 or total == 0:
        return 0
    segs = [pool[offsets[j]:offsets[j] + S[j]] for j in range(len(S))]
    cand = np.concatenate(segs)
    owner = np.repeat(np.arange(len(S)), S)
    if doses >= total:
        chosen = np.arange(total)
    else:
        keys = rng.random(total)
        chosen = np.argsort(keys, kind="stable")[:doses]
    out.extend(cand[chosen].tolist())
    keep = np.ones(total, dtype=bool)
    keep[chosen] = False
    for j in range(len(S)):
        seg = cand[owner == j]
        kept = seg[keep[owner == j]]
        pool[offsets[j]:offsets[j] + kept.size] = kept
        S[j] = kept.size
    return int(chosen.size)


def run_episode(rng, bin_s, pair_prob, index_weight, members, offsets, triggers, doses,
                record_compartments=False):
    """One stochastic SVIR episode over a binned population.

    Infectives are processed in FIFO order; each tries every susceptible once
    (binomial per bin), then recovers. Vaccination events fire when the
    cumulative infection count first reaches their trigger.
    """
    bin_s = np.asarray(bin_s, dtype=float)
    n_bins = bin_s.size
    offsets = np.asarray(offsets, dtype=np.int64)
    pool = np.array(members, dtype=np.int64)
    S = np.diff(offsets).astype(np.int64)
    node_bin = np.repeat(np.arange(n_bins), S)
    node_bin_of = np.empty(pool.size, dtype=np.int64)
    node_bin_of[pool] = node_bin

    order, secondary, w_inf, w_proc = [], [], [], []
    vaccinated, applied = [], np.zeros(len(triggers), dtype=np.int64)
    comp = []
    next_trigger = 0

    def fire(count):
        nonlocal next_trigger
        while next_trigger < len(triggers) and triggers[next_trigger] <= count:
            applied[next_trigger] = _vaccinate(rng, int(doses[next_trigger]), S, offsets, pool, vaccinated)
            next_trigger += 1

    fire(0)
    weights = np.cumsum(index_weight * S)
    total_w = weights[-1]
    if S.sum() > 0 and total_w > 0:
        x = rng.random() * total_w
        j = int(np.searchsorted(weights, x, side="right"))
        if j >= n_bins:
            j = int(np.flatnonzero(index_weight * S > 0)[-1])
        pos = min(int(rng.random() * S[j]), S[j] - 1)
        base = offsets[j]
        node = int(pool[base + pos])
        pool[base + pos] = pool[base + S[j] - 1]
        S[j] -= 1
        order.append(node)
        w_inf.append(float(np.cumsum(bin_s * S)[-1]))
        fire(1)

    head = 0
    while head < len(order):
        b = node_bin_of[order[head]]
        wp = float(np.cumsum(bin_s * S)[-1])
        k = rng.binomial(S, pair_prob[b])
        n_new = int(k.sum())
        batch = []
        if n_new:
            u = rng.random(n_new + n_new - 1)
            q = 0
            for j in np.flatnonzero(k):
                base = offsets[j]
                for _ in range(int(k[j])):
                    pos = min(int(u[q] * S[j]), S[j] - 1)
                    q += 1
                    batch.append(int(pool[base + pos]))
                    pool[base + pos] = pool[base + S[j] - 1]
                    S[j] -= 1
            for i in range(n_new - 1, 0, -1):
                r = min(int(u[q] * (i + 1)), i)
                q += 1
                batch[i], batch[r] = batch[r], batch[i]
            running = wp
            for node in batch:
                running -= bin_s[node_bin_of[node]]
                w_inf.append(running)
            order.extend(batch)
        secondary.append(n_new)
        w_proc.append(wp)
        head += 1
        if n_new:
            fire(len(order))
        if record_compartments:
            comp.append((int(S.sum()), len(order) - head, head, len(vaccinated)))

    return {
        "order": np.array(order, dtype=np.int64),
        "secondary": np.array(secondary, dtype=np.int64),
        "w_inf": np.array(w_inf, dtype=float),
        "w_proc": np.array(w_proc, dtype=float),
        "vaccinated": np.array(vaccinated, dtype=np.int64),
        "applied": applied,
        "compartments": np.array(comp, dtype=np.int64).reshape(-1, 4) if record_compartments else None,
    }
