"""Compare the compiled and pure-Python kernels on identical inputs.

    python3 benchmarks/bench_kernels.py [--population 10000] [--episodes 20]

Reports wall time per call for each backend (mean over episode seeds, so
early die-outs and major outbreaks are both represented; median for the flow) and the speedup, and
checks that both produce identical episodes.
"""
import argparse
import statistics
import time

import numpy as np

from herd_opt import spreading
from herd_opt._kernels import _python
from herd_opt.montecarlo import sample_population

try:
    from herd_opt._kernels import _core
except ImportError:
    _core = None


def _time(fn, repeats, summary=statistics.median):
    samples = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t)
    return summary(samples)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--population", type=int, default=10_000)
    ap.add_argument("--episodes", type=int, default=20)
    ap.add_argument("--bins", type=int, default=64)
    args = ap.parse_args(argv)

    profile = spreading.build_gamma(1.0, args.population, 3.0, bins=args.bins)
    pop = sample_population(profile, 0)
    members = np.arange(pop.size, dtype=np.int64)
    inputs = (pop.bin_s, pop.pair_prob, pop.index_weight, members, pop.offsets,
              np.array([50], dtype=np.int64), np.array([args.population // 10], dtype=np.int64))
    w = profile.phi * profile.s

    backends = {"python": _python}
    if _core is not None:
        backends["compiled"] = _core
    results = {}
    for name, mod in backends.items():
        seeds = iter(range(10 ** 6))
        ep = _time(lambda: mod.run_episode(np.random.default_rng(next(seeds)), *inputs), args.episodes,
                   statistics.fmean)
        fl = _time(lambda: mod.flow_curve(profile.s, w, profile.counts, args.population), 5)
        results[name] = (ep, fl)
        print(f"{name:>9}: episode {ep * 1e3:9.2f} ms   flow curve {fl * 1e3:9.2f} ms")
    if "compiled" in results:
        (pe, pf), (ce, cf) = results["python"], results["compiled"]
        print(f"  speedup: episode {pe / ce:7.1f}x   flow curve {pf / cf:7.1f}x")
        same = all(
            all(np.array_equal(a[k], b[k]) for k in ("order", "secondary", "w_inf", "w_proc", "vaccinated"))
            for a, b in ((_python.run_episode(np.random.default_rng(s), *inputs),
                          _core.run_episode(np.random.default_rng(s), *inputs)) for s in range(5)))
        print(f"  identical episodes across backends: {same}")
    else:
        print("compiled kernels unavailable; only the fallback was timed")


if __name__ == "__main__":
    main()
