#!/usr/bin/env python3
"""End-to-end run of the command-line pipeline on synthetic data.

Builds three CPU models and fourteen GPU models, composes the 17-entry LUT,
exports it to fixed point and replays a scheduler tape through the online
monitor with one mid-run frequency change.

    python3 scripts/pipeline_demo.py --out /tmp/pmc_demo [--sigma 0.01]
"""
import argparse
import json
from pathlib import Path

import numpy as np

from pmcpower.cli import main as cli
from pmcpower.monitor import SchedEvent, write_sched_events

CPU_FREQS = [730_000_000, 1_200_000_000, 2_300_000_000]
GPU_FREQS = [114_750_000, 216_750_000, 318_750_000, 420_750_000, 522_750_000, 624_750_000,
             675_750_000, 828_750_000, 905_250_000, 1_032_750_000, 1_198_500_000,
             1_236_750_000, 1_338_750_000, 1_377_000_000]
CPU_EVENTS = ["cycles", "inst_retired", "l1d_refill", "l2_refill", "br_mis", "mem_access"]
GPU_EVENTS = ["sm_active", "warps_launched", "l2_hit", "l2_miss", "dram_read", "tex_req"]


def run(*argv):
    code = cli([str(a) for a in argv])
    if code != 0:
        raise SystemExit(f"command failed ({code}): {' '.join(map(str, argv))}")


def truth(sub, freq):
    # power grows with frequency; two events drive each sub-system
    g = freq / 1e9
    if sub == "cpu":
        return 150 + 200 * g, {"cycles": 1.5e-7 * g * g, "l2_refill": 4e-7 * g}
    return 80 + 120 * g, {"sm_active": 2.5e-7 * g * g, "dram_read": 6e-7 * g}


def config(sub, freq, events, sigma, seed, partition):
    L, drivers = truth(sub, freq)
    cfg = {"subsystem": sub, "frequency_hz": freq, "intercept_mw": L, "n_units": 4 if sub == "cpu" else 2,
           "period_ns": 100_000_000, "sigma": sigma, "seed": seed,
           "weights": {e: drivers.get(e, 0.0) for e in events},
           "random_phases": {"n_phases": 200, "seed": seed}}
    if partition:
        cfg["partition"] = [events[:3], events[3:]]
    return cfg


def catalog(sub, events):
    return {"subsystem": sub, "pmu_limit": 4,
            "events": [{"name": e, "conflict_groups": ["g0"] if k in (0, 1) else []}
                       for k, e in enumerate(events)]}


def build_model(out, sub, freq, events, sigma, seed):
    d = out / f"{sub}_{freq}"
    d.mkdir(parents=True, exist_ok=True)
    (d / "char.json").write_text(json.dumps(config(sub, freq, events, sigma, seed, True)))
    (d / "train.json").write_text(json.dumps(config(sub, freq, events, sigma, seed + 1, False)))
    (d / "catalog.json").write_text(json.dumps(catalog(sub, events)))
    run("synth", d / "char.json", "--out", d / "char")
    run("synth", d / "train.json", "--out", d / "train")
    run("characterize", d / "char", "--catalog", d / "catalog.json", "--pmu-aware",
        "--sweep", "1:4", "--train-dir", d / "train", "--out", d / "report.json")
    run("train", d / "train", "--report", d / "report.json", "--out", d / "model.json")
    return d


def tape(events, n_cores, seed, n=600, tick_ns=4_000_000):
    rng = np.random.default_rng(seed)
    t = np.zeros(n_cores, dtype=np.int64)
    rates = rng.uniform(2e8, 1.5e9, (n_cores, len(events)))
    out = []
    for _ in range(n):
        c = int(rng.integers(n_cores))
        if rng.random() < 0.03:
            rates[c] = rng.uniform(2e8, 1.5e9, len(events))
        cs = rng.random() < 0.25
        dt = int(rng.integers(200_000, tick_ns)) if cs else tick_ns
        t[c] += dt
        out.append(SchedEvent(int(t[c]), c, "context_switch" if cs else "tick",
                              {e: int(rates[c, j] * dt / 1e9) for j, e in enumerate(events)}))
    return sorted(out, key=lambda e: (e.t, e.core))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--sigma", type=float, default=0.01)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = args.out
    dirs = [build_model(out, "cpu", f, CPU_EVENTS, args.sigma, args.seed + 10 * k) for k, f in enumerate(CPU_FREQS)]
    dirs += [build_model(out, "gpu", f, GPU_EVENTS, args.sigma, args.seed + 100 + 10 * k)
             for k, f in enumerate(GPU_FREQS)]
    run("compose", *[d / "model.json" for d in dirs], "--out", out / "lut.json")
    run("validate", out / "lut.json", *[d / "train" for d in dirs], "--out", out / "validation.json")
    run("export-fx", out / "lut.json", "--out", out / "lut_fx.json")

    print(f"{'sub':4} {'freq MHz':>9} {'selected':28} {'MAPE %':>7} {'energy %':>8}")
    for r in json.loads((out / "validation.json").read_text())["results"]:
        sel = json.loads((Path(r["trace_dir"]).parent / "model.json").read_text())["selected"]
        print(f"{r['subsystem']:4} {r['frequency_hz'] / 1e6:9.2f} {','.join(sel):28} "
              f"{r['mape']:7.3f} {r['energy_error']:8.3f}")

    # replay a CPU tape with a switch from the lowest to the highest frequency halfway through
    lut = json.loads((out / "lut.json").read_text())
    sel = next(e["selected"] for e in lut["entries"] if e["subsystem"] == "cpu")
    ev = tape(sel, 4, args.seed)
    write_sched_events(ev, out / "tape.csv")
    mid = ev[len(ev) // 2].t
    (out / "timeline.csv").write_text(
        f"t_ns,subsystem,frequency_hz\n0,cpu,{CPU_FREQS[0]}\n{mid},cpu,{CPU_FREQS[-1]}\n")
    if all(e["selected"] == sel for e in lut["entries"] if e["subsystem"] == "cpu"):
        run("simulate", out / "lut.json", out / "tape.csv", "--subsystem", "cpu",
            "--freq-timeline", out / "timeline.csv", "--mode", "both", "--out", out / "estimates.csv")
        rows = [line.split(",") for line in (out / "estimates.csv").read_text().splitlines()[1:]]
        rel = [abs(float(r[2]) - float(r[3])) / float(r[3]) for r in rows]
        print(f"\nonline estimates: {len(rows)}, fixed vs float max rel diff {max(rel):.2e}, "
              f"mean {np.mean(rel):.2e}")
    else:
        print("\nCPU models track different counter sets per frequency; simulate each frequency separately")
    print(f"\nLUT with {len(lut['entries'])} entries written to {out / 'lut.json'}")


if __name__ == "__main__":
    main()
