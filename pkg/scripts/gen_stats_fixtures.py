#!/usr/bin/env python3
"""Regenerate tests/data/stats_fixtures.json with 50-digit references.

Each fixture stores (x, y) as exact float reprs plus the Pearson coefficient,
OLS slope and two-sided slope p-value computed in mpmath. The p-value comes
from numerically integrating the Student-t density, and is cross-checked
against mpmath's regularized incomplete beta before being written.

    python scripts/gen_stats_fixtures.py
"""
import json
from pathlib import Path

import mpmath as mp
import numpy as np

mp.mp.dps = 50
OUT = Path(__file__).resolve().parents[1] / "tests" / "data" / "stats_fixtures.json"


def reference(x, y):
    xs = [mp.mpf(v) for v in x]
    ys = [mp.mpf(v) for v in y]
    n = len(xs)
    mx, my = mp.fsum(xs) / n, mp.fsum(ys) / n
    sxx = mp.fsum((a - mx) ** 2 for a in xs)
    syy = mp.fsum((b - my) ** 2 for b in ys)
    sxy = mp.fsum((a - mx) * (b - my) for a, b in zip(xs, ys))
    r = sxy / mp.sqrt(sxx * syy)
    slope = sxy / sxx
    df = n - 2
    t = abs(r) * mp.sqrt(df / (1 - r * r))
    dens = lambda s: mp.gamma((df + 1) / mp.mpf(2)) / (mp.sqrt(df * mp.pi) * mp.gamma(df / mp.mpf(2))) \
        * (1 + s * s / df) ** (-(df + 1) / mp.mpf(2))
    p_quad = 2 * mp.quad(dens, [t, t + 1, t + 10, mp.inf])
    p_beta = mp.betainc(df / mp.mpf(2), mp.mpf(1) / 2, 0, df / (df + t * t), regularized=True)
    assert abs(p_quad - p_beta) < mp.mpf(10) ** -30, (p_quad, p_beta)
    return r, slope, p_quad


def main():
    rng = np.random.default_rng(20240611)
    cases = [([1.0, 2.0, 3.0, 4.0, 5.0], [2.1, 3.9, 6.2, 7.8, 10.1])]
    while len(cases) < 50:
        n = int(rng.choice([3, 4, 5, 8, 12, 20, 40, 100, 250]))
        x = rng.uniform(0, 1e3, n) * 10.0 ** rng.integers(-3, 7)
        noise = 10 ** rng.uniform(-2, 1.5)
        y = 500 + 2.0 * x / x.std() * rng.choice([-1, 1]) + rng.normal(0, noise, n)
        if rng.random() < 0.2:
            y = rng.normal(1000, 50, n)  # unrelated response, p-value near uniform
        cases.append(([float(v) for v in x], [float(v) for v in y]))
    fixtures = []
    for x, y in cases:
        r, slope, p = reference(x, y)
        fixtures.append({"x": [repr(v) for v in x], "y": [repr(v) for v in y],
                         "pcc": mp.nstr(r, 30), "slope": mp.nstr(slope, 30), "p_value": mp.nstr(p, 30)})
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(fixtures, indent=1) + "\n")
    print(f"wrote {len(fixtures)} fixtures to {OUT}")


if __name__ == "__main__":
    main()
