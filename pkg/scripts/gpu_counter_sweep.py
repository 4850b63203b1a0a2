#!/usr/bin/env python3
"""Counter-count sweep on a synthetic GPU with more drivers than PMU slots.

Eight of twelve events drive power with geometrically decreasing weights.
The PMU has eight programmable slots and two conflict groups. For each
k in 1..8 the script trains a model on the top-k compatible events and
reports validation MAPE, then the count the sweep would pick.

    python3 scripts/gpu_counter_sweep.py [--sigma 0.02] [--seeds 5]
"""
import argparse
from dataclasses import replace

import numpy as np

from pmcpower.characterize import EventCatalog, sweep_counter_count
from pmcpower.model import split_dataset, train_entry, validate_entry
from pmcpower.synth import SynthSpec, generate, generate_multipass, random_phases
from pmcpower.trace import EventId, normalize

EVENTS = [f"g{k:02d}" for k in range(12)]
FREQ = 905_250_000


def build(seed, sigma, decay):
    weights = {e: (4e-7 * decay ** k if k < 8 else 0.0) for k, e in enumerate(EVENTS)}
    phases = random_phases(EVENTS, 2, 150, seed=seed)
    return SynthSpec("gpu", FREQ, 300.0, weights, phases, sigma=sigma, seed=seed, n_units=2)


def catalog():
    ids = [EventId("gpu", e) for e in EVENTS]
    # g01/g09 and g05/g10 cannot be counted together
    groups = {ids[1]: frozenset({"a"}), ids[9]: frozenset({"a"}),
              ids[5]: frozenset({"b"}), ids[10]: frozenset({"b"})}
    return EventCatalog("gpu", tuple(ids), 8, groups)


def run_seed(seed, sigma, decay):
    spec = build(seed, sigma, decay)
    passes = [normalize(t) for t in generate_multipass(spec, [EVENTS[k:k + 4] for k in range(0, 12, 4)])]
    train, val = split_dataset(normalize(generate(replace(spec, seed=seed + 1000))[0]), 0.7, seed)

    def trainer(sel):
        return validate_entry(train_entry(train, sel, "gpu", FREQ), val).mape

    return sweep_counter_count(passes, catalog(), range(1, 9), trainer)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sigma", type=float, default=0.02)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--decay", type=float, default=0.6, help="weight ratio between consecutive drivers")
    args = ap.parse_args()
    table, picks = [], []
    for seed in range(args.seeds):
        res = run_seed(seed, args.sigma, args.decay)
        table.append([res.mape[k] for k in range(1, 9)])
        picks.append(res.best_k)
        print(f"seed {seed}: best k={res.best_k}  selection={','.join(e.name for e in res.selections[res.best_k])}")
    table = np.array(table)
    print(f"\n{'k':>2} {'mean MAPE %':>12} {'min':>7} {'max':>7}")
    for k in range(8):
        print(f"{k + 1:2d} {table[:, k].mean():12.3f} {table[:, k].min():7.3f} {table[:, k].max():7.3f}")
    print(f"\nchosen k per seed: {picks}")


if __name__ == "__main__":
    main()
