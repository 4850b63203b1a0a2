#!/usr/bin/env python3
"""Fixed-point vs float error for a range of weight shifts.

Larger shifts keep more bits of small weights but shrink accumulator
headroom: dynamic power times window length must stay below 2**(34-shift)
mW*s. For each shift the script evaluates random realistic windows and
reports relative error and how many windows saturated.

    python3 scripts/fx_error_profile.py [--windows 5000]
"""
import argparse

import numpy as np

from pmcpower.fixedpoint import fx_predict, to_fx_entry
from pmcpower.model import ModelEntry, predict


def random_window(rng, power_w, window_ms):
    names = [f"e{k}" for k in range(4)]
    w = rng.uniform(5e-8, 5e-6, 4)
    units = int(rng.integers(1, 5))
    rates = rng.uniform(0, 1, (units, 4))
    rates *= power_w * 1e3 * rng.uniform(0.05, 1) / (rates @ w).sum()
    window = int(window_ms * 1e6)
    counts = {(u, n): int(rates[u, j] * window / 1e9) for u in range(units) for j, n in enumerate(names)}
    entry = ModelEntry("cpu", 1_000_000_000, 100_000_000, float(rng.uniform(100, 1000)),
                       dict(zip(names, map(float, w))), tuple(names))
    return entry, counts, window


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--windows", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    print(f"{'shift':>5} {'max W':>6} {'window ms':>9} {'max rel':>9} {'mean rel':>9} {'saturated':>9}")
    for shift in (8, 12, 16, 20, 24):
        for power_w, window_ms in ((5, 10), (20, 200), (40, 1000)):
            rng = np.random.default_rng(args.seed)
            rels, sat = [], 0
            for _ in range(args.windows):
                entry, counts, window = random_window(rng, power_w, window_ms)
                fx = fx_predict(to_fx_entry(entry, shift), counts, window)
                if fx.overflow:
                    sat += 1
                    continue
                flt = predict(entry, {k: c * 1e9 / window for k, c in counts.items()})
                rels.append(abs(fx.to_float() - flt) / flt)
            mx = f"{max(rels):9.1e}" if rels else f"{'-':>9}"
            mean = f"{np.mean(rels):9.1e}" if rels else f"{'-':>9}"
            print(f"{shift:5d} {power_w:6d} {window_ms:9d} {mx} {mean} {sat:9d}")


if __name__ == "__main__":
    main()
