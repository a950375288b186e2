"""Experiment configuration: one JSON document per experiment.

See the README for the full schema. Validation failures raise
:class:`InvalidArgumentError` naming the offending field.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InfeasibleError, InvalidArgumentError
from .spreading import SpreadingProfile, from_config

MODES = ("offline", "online")
DEFAULT_SWEEP = tuple(k / 20 for k in range(21))


@dataclass(frozen=True)
class MonteCarloConfig:
    enabled: bool = False
    episodes: int = 200
    seed: int = 0
    points: str = "all"


@dataclass(frozen=True)
class ExperimentConfig:
    regions: tuple[SpreadingProfile, ...]
    region_doses: tuple[tuple[tuple[int, int], ...], ...]
    budget: int = 0
    mode: str = "offline"
    batches: tuple[tuple[object, int], ...] = ()
    sweep: tuple[float, ...] = DEFAULT_SWEEP
    timing_x: int | None = None
    timing_steps: tuple[int, ...] | None = None
    montecarlo: MonteCarloConfig = field(default_factory=MonteCarloConfig)
    index_case: str = "biased"
    output_dir: str = "."
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def capacity(self) -> int:
        return sum(int(p.population) for p in self.regions)


def _int(value, name, minimum=0):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise InvalidArgumentError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise InvalidArgumentError(f"{name} must be >= {minimum}, got {value!r}")
    return int(value)


def _doses(entries, name):
    out = []
    for e in entries or ():
        if isinstance(e, dict):
            trig, d = e.get("trigger", 0), e.get("doses")
        else:
            trig, d = e
        out.append((_int(trig, f"{name}.trigger"), _int(d, f"{name}.doses")))
    return tuple(sorted(out))


def parse_config(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise InvalidArgumentError("config must be a JSON object")
    regions_doc = doc.get("regions")
    if not regions_doc:
        raise InvalidArgumentError("config needs a non-empty 'regions' list")
    regions, doses = [], []
    for k, r in enumerate(regions_doc):
        if not isinstance(r, dict):
            raise InvalidArgumentError(f"regions[{k}] must be an object")
        regions.append(from_config(r, region_id=f"region{k}"))
        doses.append(_doses(r.get("doses"), f"regions[{k}].doses"))
    ids = [p.region_id for p in regions]
    if len(set(ids)) != len(ids):
        raise InvalidArgumentError(f"region ids must be unique, got {ids}")

    mode = doc.get("mode", "offline")
    if mode not in MODES:
        raise InvalidArgumentError(f"mode must be one of {MODES}, got {mode!r}")
    budget = _int(doc.get("budget", 0), "budget")
    capacity = sum(int(p.population) for p in regions)
    if budget > capacity:
        raise InfeasibleError(f"budget {budget} exceeds total population {capacity}")

    batches = []
    for k, b in enumerate(doc.get("batches") or ()):
        step = b.get("step", 0) if isinstance(b, dict) else b[0]
        n = b.get("doses") if isinstance(b, dict) else b[1]
        if isinstance(step, list):
            step = [_int(s, f"batches[{k}].step") for s in step]
        else:
            step = _int(step, f"batches[{k}].step")
        batches.append((step, _int(n, f"batches[{k}].doses")))
    if mode == "online" and not batches:
        raise InvalidArgumentError("online mode needs a 'batches' list")

    sweep_doc = doc.get("sweep") or {}
    fractions = sweep_doc.get("fractions")
    if fractions is None:
        points = _int(sweep_doc.get("points", 21), "sweep.points", 2)
        fractions = [k / (points - 1) for k in range(points)]
    fractions = tuple(float(f) for f in fractions)
    if any(not (0.0 <= f <= 1.0) for f in fractions):
        raise InvalidArgumentError("sweep fractions must lie in [0, 1]")

    timing = doc.get("timing") or {}
    timing_x = _int(timing["x"], "timing.x", 1) if "x" in timing else None
    timing_steps = tuple(_int(s, "timing.steps") for s in timing["steps"]) if "steps" in timing else None

    mc = doc.get("montecarlo") or {}
    points = mc.get("points", "all")
    if points not in ("all", "key"):
        raise InvalidArgumentError(f"montecarlo.points must be 'all' or 'key', got {points!r}")
    mc_cfg = MonteCarloConfig(enabled=bool(mc.get("enabled", False)),
                              episodes=_int(mc.get("episodes", 200), "montecarlo.episodes", 1),
                              seed=_int(mc.get("seed", 0), "montecarlo.seed"), points=points)
    index_case = doc.get("index_case", "biased")
    if index_case not in ("biased", "uniform"):
        raise InvalidArgumentError(f"index_case must be 'biased' or 'uniform', got {index_case!r}")
    out = doc.get("output") or {}
    output_dir = out.get("dir", ".") if isinstance(out, dict) else str(out)
    return ExperimentConfig(regions=tuple(regions), region_doses=tuple(doses), budget=budget, mode=mode,
                            batches=tuple(batches), sweep=fractions, timing_x=timing_x,
                            timing_steps=timing_steps, montecarlo=mc_cfg, index_case=index_case,
                            output_dir=output_dir, raw=doc)


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(doc)
