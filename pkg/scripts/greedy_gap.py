#!/usr/bin/env python3
"""How far greedy PMU-aware selection falls from the best feasible set.

Random catalogs with pairwise conflicts and random correlations. The score
of a set is its summed |pcc|; the exhaustive optimum is found by enumerating
every feasible subset of at most `limit` events.

    python3 scripts/greedy_gap.py [--trials 2000] [--max-events 12]
"""
import argparse
import itertools
import random

import numpy as np

from pmcpower.characterize import EventCatalog, RankedEvent, rank_key, select_pmu_aware
from pmcpower.regress import SimpleFit
from pmcpower.trace import EventId


def random_case(rnd, n, density):
    evs = [EventId("cpu", f"x{k}") for k in range(n)]
    pairs = [(a, b) for a, b in itertools.combinations(evs, 2) if rnd.random() < density]
    groups = {e: frozenset() for e in evs}
    for k, (a, b) in enumerate(pairs):
        groups[a] |= {f"c{k}"}
        groups[b] |= {f"c{k}"}
    cat = EventCatalog("cpu", tuple(evs), rnd.randint(2, 6), groups)
    pcc = {e: rnd.uniform(-1, 1) for e in evs}
    return cat, pcc


def exhaustive(cat, pcc, limit):
    best = 0.0
    for k in range(1, limit + 1):
        for combo in itertools.combinations(cat.events, k):
            if cat.compat(combo):
                best = max(best, sum(abs(pcc[e]) for e in combo))
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=2000)
    ap.add_argument("--max-events", type=int, default=12)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rnd = random.Random(args.seed)
    rows = []
    for _ in range(args.trials):
        n = rnd.randint(2, args.max_events)
        density = rnd.choice([0.1, 0.3, 0.5, 0.7])
        cat, pcc = random_case(rnd, n, density)
        ranking = sorted((RankedEvent(e, SimpleFit(1.0, 0.0, p, 0.0, 10)) for e, p in pcc.items()), key=rank_key)
        limit = cat.pmu_limit
        greedy = sum(abs(pcc[e]) for e in select_pmu_aware(ranking, cat, limit))
        best = exhaustive(cat, pcc, limit)
        rows.append((density, best - greedy, (best - greedy) / best))
    rows = np.array(rows)
    print(f"{'density':>7} {'trials':>6} {'optimal':>8} {'mean gap':>9} {'p95 gap':>8} {'max rel':>8}")
    for d in sorted(set(rows[:, 0])):
        r = rows[rows[:, 0] == d]
        print(f"{d:7.1f} {len(r):6d} {np.mean(r[:, 1] < 1e-12):8.1%} {r[:, 1].mean():9.4f} "
              f"{np.quantile(r[:, 1], 0.95):8.4f} {r[:, 2].max():8.1%}")
    print(f"\noverall: greedy optimal in {np.mean(rows[:, 1] < 1e-12):.1%} of {len(rows)} cases, "
          f"worst relative shortfall {rows[:, 2].max():.1%}")


if __name__ == "__main__":
    main()
