"""Synthetic traces whose power is a known linear function of the PMC rates.

Noise is added to power only; counts are digital and exact.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import PmcPowerError
from .model import ModelEntry
from .trace import NS_PER_S, ActivityTrace, EventId, TraceRow

INT64_MAX = (1 << 63) - 1


@dataclass(frozen=True)
class Phase:
    """A constant-rate regime; `rates[event][unit]` in events/s."""

    duration: int
    rates: Mapping[str, Sequence[float]]


@dataclass(frozen=True)
class SynthSpec:
    subsystem: str
    frequency: int
    intercept: float
    weights: Mapping[str, float]
    phases: Sequence[Phase]
    sigma: float = 0.0
    seed: int = 0
    n_units: int = 1
    period: int = 100_000_000

    def __post_init__(self):
        object.__setattr__(self, "phases", tuple(self.phases))
        if self.intercept < 0 or any(w < 0 for w in self.weights.values()):
            raise PmcPowerError("ground-truth intercept and weights must be >= 0")
        if self.sigma < 0:
            raise PmcPowerError("sigma must be >= 0")
        if self.period <= 0 or self.n_units < 1:
            raise PmcPowerError("period and n_units must be positive")
        if not self.phases:
            raise PmcPowerError("at least one phase is required")
        for ph in self.phases:
            if ph.duration < self.period:
                raise PmcPowerError("phase durations must cover at least one period")
            if set(ph.rates) != set(self.weights):
                raise PmcPowerError("every phase must give rates for exactly the weighted events")
            for name, r in ph.rates.items():
                if len(r) != self.n_units or any(x < 0 for x in r):
                    raise PmcPowerError(f"phase rates for {name!r} need {self.n_units} non-negative values")

    @property
    def events(self) -> tuple[str, ...]:
        return tuple(self.weights)

    def truth(self) -> ModelEntry:
        return ModelEntry(self.subsystem, self.frequency, self.period, self.intercept,
                          dict(self.weights), self.events, {"source": "synth ground truth"})


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5)


def _counts_and_truth(spec: SynthSpec):
    """Per-row integer counts (rows x units x events) and noise-free power."""
    events = spec.events
    per_row = []
    for ph in spec.phases:
        r = np.array([[ph.rates[e][u] for e in events] for u in range(spec.n_units)], dtype=np.float64)
        per_row.extend([r] * (ph.duration // spec.period))
    rates = np.stack(per_row)
    counts = _round_half_up(rates * spec.period / NS_PER_S)
    if counts.max(initial=0) > INT64_MAX / 2:
        raise PmcPowerError("synthetic counts overflow 64 bits")
    w = np.array([spec.weights[e] for e in events])
    realized = counts * NS_PER_S / spec.period
    truth = spec.intercept + (realized.sum(axis=1) @ w)
    return counts.astype(np.int64), truth


def _noisy_power(spec: SynthSpec, truth: np.ndarray, pass_id: int) -> np.ndarray:
    p = truth
    if spec.sigma > 0:
        rng = np.random.default_rng([spec.seed, pass_id])
        p = truth + rng.normal(0.0, spec.sigma * truth.mean(), size=len(truth))
    return np.maximum(_round_half_up(p), 0).astype(np.int64)


def _build(spec: SynthSpec, counts, power, events: Sequence[str], pass_id: int) -> ActivityTrace:
    idx = [spec.events.index(e) for e in events]
    ids = [EventId(spec.subsystem, e) for e in events]
    rows = []
    for k in range(len(power)):
        t = k * spec.period
        for u in range(spec.n_units):
            c = {ev: int(counts[k, u, j]) for ev, j in zip(ids, idx)}
            rows.append(TraceRow(t, spec.period, u, c, int(power[k])))
    return ActivityTrace(spec.subsystem, spec.frequency, pass_id, tuple(rows), spec.n_units)


def generate(spec: SynthSpec) -> tuple[ActivityTrace, ModelEntry]:
    """One trace carrying every event, plus the ground-truth model."""
    counts, truth = _counts_and_truth(spec)
    return _build(spec, counts, _noisy_power(spec, truth, 0), spec.events, 0), spec.truth()


def generate_multipass(spec: SynthSpec, event_partition: Sequence[Sequence[str]]) -> list[ActivityTrace]:
    """Replay the same workload once per event subset, with fresh noise per pass."""
    seen: set[str] = set()
    for part in event_partition:
        if seen & set(part):
            raise PmcPowerError(f"overlapping event subsets: {sorted(seen & set(part))}")
        seen |= set(part)
    if seen != set(spec.events):
        raise PmcPowerError("event partition must cover exactly the spec events")
    counts, truth = _counts_and_truth(spec)
    return [_build(spec, counts, _noisy_power(spec, truth, k), list(part), k)
            for k, part in enumerate(event_partition)]


def random_phases(events: Sequence[str], n_units: int, n_phases: int, seed: int = 0,
                  rows_per_phase: int = 5, period: int = 100_000_000,
                  rate_quantum: float = 1e7, max_multiple: int = 100,
                  min_multiple: int = 0) -> tuple[Phase, ...]:
    """Independent random rates drawn as integer multiples of `rate_quantum`.

    Choosing the quantum so that quantum * weight is a whole number of mW keeps
    noise-free power exactly representable in integer milliwatts.
    """
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_phases):
        m = rng.integers(min_multiple, max_multiple + 1, size=(len(events), n_units))
        out.append(Phase(rows_per_phase * period,
                         {e: tuple(float(rate_quantum * v) for v in m[j]) for j, e in enumerate(events)}))
    return tuple(out)


def spec_from_json(raw: Mapping) -> SynthSpec:
    try:
        weights = {k: float(v) for k, v in raw["weights"].items()}
        n_units = int(raw.get("n_units", 1))
        period = int(raw.get("period_ns", 100_000_000))
        if "phases" in raw:
            phases = tuple(Phase(int(p["duration_ns"]), {k: tuple(map(float, v)) for k, v in p["rates"].items()})
                           for p in raw["phases"])
        else:
            rp = raw["random_phases"]
            phases = random_phases(list(weights), n_units, int(rp["n_phases"]), int(rp.get("seed", 0)),
                                   int(rp.get("rows_per_phase", 5)), period,
                                   float(rp.get("rate_quantum", 1e7)), int(rp.get("max_multiple", 100)),
                                   int(rp.get("min_multiple", 0)))
        return SynthSpec(raw["subsystem"], int(raw["frequency_hz"]), float(raw["intercept_mw"]), weights,
                         phases, float(raw.get("sigma", 0.0)), int(raw.get("seed", 0)), n_units, period)
    except (KeyError, TypeError) as e:
        raise PmcPowerError(f"malformed synth config: missing or bad field {e}") from None
