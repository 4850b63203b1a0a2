"""Synthetic scenarios shared by several test modules."""
from dataclasses import replace

import numpy as np

from pmcpower.characterize import RankedEvent
from pmcpower.regress import SimpleFit
from pmcpower.synth import SynthSpec, generate, generate_multipass, random_phases
from pmcpower.trace import EventId, normalize

EVENTS = ("e0", "e1", "e2", "e3", "e4", "e5")
# per frequency: (intercept mW, weights mW per event/s); e1 and e3 drive power
TRUTH = {
    730_000_000: (350.0, {"e1": 2e-6, "e3": 3e-6}),
    1_200_000_000: (500.0, {"e1": 3e-6, "e3": 2e-6}),
    2_300_000_000: (900.0, {"e1": 5e-6, "e3": 4e-6}),
}
PARTITION = (("e0", "e1", "e2"), ("e3", "e4", "e5"))


def scenario(freq, sigma=0.0, seed=1, n_phases=100, n_units=4):
    intercept, drivers = TRUTH[freq]
    weights = {e: drivers.get(e, 0.0) for e in EVENTS}
    phases = random_phases(EVENTS, n_units, n_phases, seed=seed)
    return SynthSpec("cpu", freq, intercept, weights, phases, sigma=sigma, seed=seed, n_units=n_units)


def characterization_passes(spec):
    return [normalize(tr) for tr in generate_multipass(spec, PARTITION)]


def training_matrix(spec):
    # a separate replay with every event tracked together, fresh noise
    trace, _ = generate(replace(spec, seed=spec.seed + 1000))
    return normalize(trace)


def ranked(pccs, subsystem="cpu"):
    """RankedEvent list from {name: pcc}, in the given order."""
    return [RankedEvent(EventId(subsystem, n), SimpleFit(1.0, 0.0, p, 0.0, 10)) for n, p in pccs.items()]


def rel_err(a, b):
    return abs(a - b) / abs(b) if b else abs(a)


def max_abs(a):
    return float(np.max(np.abs(a)))


def synth_config(freq, sigma=0.0, seed=1, partition=PARTITION, n_phases=100):
    intercept, drivers = TRUTH[freq]
    cfg = {"subsystem": "cpu", "frequency_hz": freq, "intercept_mw": intercept, "n_units": 4,
           "period_ns": 100_000_000, "sigma": sigma, "seed": seed,
           "weights": {e: drivers.get(e, 0.0) for e in EVENTS},
           "random_phases": {"n_phases": n_phases, "seed": seed}}
    if partition:
        cfg["partition"] = [list(p) for p in partition]
    return cfg


def catalog_json(pmu_limit=4):
    # e0 and e1 share a counter group; the others are free
    groups = {"e0": ["g01"], "e1": ["g01"]}
    return {"subsystem": "cpu", "pmu_limit": pmu_limit,
            "events": [{"name": e, "conflict_groups": groups.get(e, [])} for e in EVENTS]}


def sched_tape(events, n_cores=4, n=400, seed=0, tick_ns=4_000_000):
    """Scheduler events whose counters advance at piecewise-constant random rates."""
    from pmcpower.monitor import SchedEvent
    rng = np.random.default_rng(seed)
    tape = []
    t = np.zeros(n_cores, dtype=np.int64)
    rates = rng.uniform(1e8, 2e9, (n_cores, len(events)))
    for k in range(n):
        c = int(rng.integers(n_cores))
        if rng.random() < 0.05:
            rates[c] = rng.uniform(1e8, 2e9, len(events))
        cs = rng.random() < 0.3
        dt = int(rng.integers(100_000, tick_ns)) if cs else tick_ns
        t[c] += dt
        counts = {e: int(rates[c, j] * dt / 1e9) for j, e in enumerate(events)}
        tape.append(SchedEvent(int(t[c]), c, "context_switch" if cs else "tick", counts))
    tape.sort(key=lambda e: (e.t, e.core))
    return tape


def realistic_case(rng):
    """A model and one window of counts with <= 20 W dynamic power over <= 200 ms."""
    from pmcpower.model import ModelEntry
    n_ev, n_units = int(rng.integers(1, 9)), int(rng.integers(1, 5))
    names = [f"e{k}" for k in range(n_ev)]
    rates = rng.uniform(0, 3e9, (n_units, n_ev))
    share = rng.uniform(0, 1, n_ev)
    dyn = rng.uniform(100, 20_000)
    w = share / (share @ rates.sum(axis=0)) * dyn
    entry = ModelEntry("cpu", 1, 100_000_000, float(rng.uniform(50, 2000)),
                       {n: float(v) for n, v in zip(names, w)}, tuple(names))
    window = int(rng.integers(1_000_000, 200_000_000))
    counts = {(u, n): int(round(rates[u, j] * window / 1e9)) for u in range(n_units) for j, n in enumerate(names)}
    return entry, counts, window
