"""Command-line entry point: ``pmcpower <command> ...``.

Exit codes: 0 success, 1 internal error, 2 input/data error. Every command
writes its output atomically and records a ``<output>.run_manifest.json``
with the content hashes of inputs and outputs, the effective configuration,
and the tool version.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .characterize import (DEFAULT_ALPHA, characterize, load_catalog, report_from_json,
                           report_to_json, sweep_counter_count)
from .errors import PmcPowerError
from .fixedpoint import export_fx_lut, fx_lut, fx_lut_from_json
from .model import (compose_lut, dumps, entry_from_json, entry_to_json, lut_from_json,
                    lut_to_json, split_dataset, train_entry, validate_entry)
from .monitor import (DEFAULT_TICK_THRESHOLD, DEFAULT_WINDOW, online_estimate, read_freq_timeline,
                      read_sched_events, trigger_stream, write_estimates)
from .synth import generate, generate_multipass, spec_from_json
from .trace import RateMatrix, ingest_pass_dir, normalize, read_meta, write_trace

DEFAULT_TRAIN_FRACTION = 0.7


class InputError(PmcPowerError):
    pass


@dataclass
class RunConfig:
    command: str
    inputs: list[str] = field(default_factory=list)
    out: str = ""
    alpha: float = DEFAULT_ALPHA
    pmu_limit: int | None = None
    pmu_aware: bool = False
    train_fraction: float = DEFAULT_TRAIN_FRACTION
    seed: int | None = 0
    window: int = DEFAULT_WINDOW
    tick_threshold: int = DEFAULT_TICK_THRESHOLD
    mode: str = "fixed"
    extra: dict = field(default_factory=dict)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_tree(path: Path) -> dict[str, str]:
    path = Path(path)
    if path.is_dir():
        return {str(p): _sha256(p) for p in sorted(path.iterdir())
                if p.is_file() and not p.name.endswith("run_manifest.json")}
    return {str(path): _sha256(path)}


def _atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _atomic_via(path: Path, writer) -> None:
    """Run writer(tmp_path) then move the result into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def manifest_path(out: Path) -> Path:
    out = Path(out)
    return out / "run_manifest.json" if out.is_dir() else out.with_name(out.name + ".run_manifest.json")


def write_manifest(cfg: RunConfig, outputs: list[Path]) -> Path:
    inputs = {}
    for p in cfg.inputs:
        inputs.update(_hash_tree(Path(p)))
    outs = {}
    for p in outputs:
        outs.update(_hash_tree(Path(p)))
    manifest = {"tool": "pmcpower", "version": __version__, "command": cfg.command,
                "config": asdict(cfg), "inputs": inputs, "outputs": outs}
    mp = manifest_path(Path(cfg.out))
    _atomic_write(mp, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return mp


def _require(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).exists():
            raise InputError(f"input not found: {p}")


def _matrix_with(passes, selected_names) -> RateMatrix:
    mats = [normalize(p) for p in passes
            if set(selected_names) <= {e.name for e in p.events}]
    if not mats:
        raise InputError(f"no pass tracks all selected events {list(selected_names)}")
    return RateMatrix.concat(mats) if len(mats) > 1 else mats[0]


def _parse_range(text: str) -> range:
    try:
        if ":" in text:
            lo, hi = text.split(":")
            return range(int(lo), int(hi) + 1)
        return range(int(text), int(text) + 1)
    except ValueError:
        raise InputError(f"bad range {text!r}; use LO:HI") from None


def cmd_synth(args) -> list[Path]:
    _require(args.config)
    raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    if args.seed is not None:
        raw["seed"] = args.seed
    spec = spec_from_json(raw)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    partition = raw.get("partition") or [list(spec.events)]
    traces = generate_multipass(spec, partition)
    _, truth = generate(spec)
    written = []
    for tr in traces:
        p = out / f"pass_{tr.pass_id}.csv"
        _atomic_via(p, lambda tmp, tr=tr: write_trace(tr, tmp))
        written.append(p)
    meta = {"subsystem": spec.subsystem, "frequency_hz": spec.frequency, "n_units": spec.n_units}
    _atomic_write(out / "meta.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    _atomic_write(out / "truth.json", dumps(entry_to_json(truth)))
    return [out]


def cmd_characterize(args) -> list[Path]:
    _require(args.trace_dir, args.catalog, args.train_dir)
    catalog = load_catalog(args.catalog)
    passes = ingest_pass_dir(args.trace_dir)
    sub, freq = passes[0].subsystem, passes[0].frequency
    if catalog.subsystem != sub:
        raise InputError(f"catalog is for {catalog.subsystem!r}, traces for {sub!r}")
    limit = args.pmu_limit or catalog.pmu_limit
    if limit > catalog.pmu_limit:
        raise InputError(f"--pmu-limit {limit} exceeds the catalog's {catalog.pmu_limit}")
    mats = [normalize(p) for p in passes]
    extra = {}
    if args.sweep:
        if not args.train_dir:
            raise InputError("--sweep needs --train-dir")
        train_passes = ingest_pass_dir(args.train_dir)

        def trainer(sel):
            m = _matrix_with(train_passes, [e.name for e in sel])
            tr, va = split_dataset(m, args.train_fraction, args.seed or 0)
            return validate_entry(train_entry(tr, sel, sub, freq), va).mape

        res = sweep_counter_count(mats, catalog, _parse_range(args.sweep), trainer,
                                  args.alpha, args.pmu_aware)
        limit = res.best_k
        extra["sweep"] = {"best_k": res.best_k,
                          "mape": {str(k): v for k, v in res.mape.items()}}
    rep = characterize(mats, sub, freq, limit, catalog, args.pmu_aware, args.alpha)
    body = report_to_json(rep)
    body["pmu_aware"] = bool(args.pmu_aware)
    body.update(extra)
    _atomic_write(Path(args.out), dumps(body))
    return [Path(args.out)]


def cmd_train(args) -> list[Path]:
    _require(args.trace_dir, args.report)
    rep = report_from_json(json.loads(Path(args.report).read_text(encoding="utf-8")))
    passes = ingest_pass_dir(args.trace_dir)
    sub, freq = passes[0].subsystem, passes[0].frequency
    if (rep.subsystem, rep.frequency) != (sub, freq):
        raise InputError(f"report is for ({rep.subsystem}, {rep.frequency}), traces for ({sub}, {freq})")
    names = [e.name for e in rep.selected]
    m = _matrix_with(passes, names)
    tr, va = split_dataset(m, args.train_fraction, args.seed)
    entry = train_entry(tr, names, sub, freq)
    v = validate_entry(entry, va)
    meta = dict(entry.metadata)
    meta.update({"n_validation": len(va), "train_fraction": args.train_fraction, "seed": args.seed,
                 "validation_mape": _finite(v.mape), "validation_mape_std": _finite(v.mape_std),
                 "validation_energy_error": _finite(v.energy_error), "source": str(args.out)})
    entry = type(entry)(entry.subsystem, entry.frequency, entry.train_period, entry.intercept,
                        entry.weights, entry.selected, meta)
    _atomic_write(Path(args.out), dumps(entry_to_json(entry)))
    return [Path(args.out)]


def _finite(x):
    return x if x == x and x not in (float("inf"), float("-inf")) else None


def _load_models(path):
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if "entries" in raw:
        return lut_from_json(raw)
    return compose_lut([entry_from_json(raw)])


def cmd_validate(args) -> list[Path]:
    _require(args.model, *args.trace_dirs)
    lut = _load_models(args.model)
    results = []
    for d in args.trace_dirs:
        meta = read_meta(d)
        entry = lut[(meta["subsystem"], int(meta["frequency_hz"]))]
        m = _matrix_with(ingest_pass_dir(d), entry.selected)
        if args.split == "heldout":
            m = split_dataset(m, args.train_fraction, args.seed)[1]
        v = validate_entry(entry, m)
        results.append({"subsystem": entry.subsystem, "frequency_hz": entry.frequency,
                        "trace_dir": str(d), "split": args.split,
                        "mape": _finite(v.mape), "mape_std": _finite(v.mape_std),
                        "energy_error": _finite(v.energy_error),
                        "n_samples": v.n_samples, "n_excluded": v.n_excluded})
    _atomic_write(Path(args.out), dumps({"format_version": 1, "results": results}))
    return [Path(args.out)]


def cmd_compose(args) -> list[Path]:
    _require(*args.models)
    entries = []
    for p in args.models:
        e = entry_from_json(json.loads(Path(p).read_text(encoding="utf-8")))
        meta = dict(e.metadata)
        meta["source"] = str(p)
        entries.append(type(e)(e.subsystem, e.frequency, e.train_period, e.intercept,
                               e.weights, e.selected, meta))
    lut = compose_lut(entries)
    _atomic_write(Path(args.out), dumps(lut_to_json(lut)))
    return [Path(args.out)]


def cmd_export_fx(args) -> list[Path]:
    _require(args.lut)
    lut = _load_models(args.lut)
    _atomic_write(Path(args.out), dumps(export_fx_lut(lut, args.weight_shift)))
    return [Path(args.out)]


def cmd_simulate(args) -> list[Path]:
    _require(args.lut, args.events, args.freq_timeline)
    raw = json.loads(Path(args.lut).read_text(encoding="utf-8"))
    if "frac_bits" in raw:
        if args.mode != "fixed":
            raise InputError("a fixed-point LUT only supports --mode fixed")
        lut_fx, float_lut = fx_lut_from_json(raw), None
    else:
        float_lut = lut_from_json(raw)
        lut_fx = fx_lut(float_lut)
    subs = sorted({s for s, _ in lut_fx})
    sub = args.subsystem or (subs[0] if len(subs) == 1 else None)
    if sub is None:
        raise InputError("LUT holds several sub-systems; pass --subsystem")
    if args.freq_timeline:
        timeline = read_freq_timeline(args.freq_timeline)
    elif args.frequency is not None:
        timeline = [(0, sub, args.frequency)]
    else:
        freqs = sorted(f for s, f in lut_fx if s == sub)
        if len(freqs) != 1:
            raise InputError("pass --frequency or --freq-timeline")
        timeline = [(0, sub, freqs[0])]
    samples = trigger_stream(read_sched_events(args.events), args.tick_threshold)
    est = online_estimate(lut_fx, timeline, samples, sub, args.window, float_lut, args.mode)
    _atomic_via(Path(args.out), lambda tmp: write_estimates(est, tmp))
    return [Path(args.out)]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pmcpower", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"pmcpower {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_default=0):
        sp.add_argument("--seed", type=int, default=seed_default)
        sp.add_argument("--out", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic multi-pass trace directory")
    sp.add_argument("config")
    common(sp, seed_default=None)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("characterize", help="rank events and select a counter set")
    sp.add_argument("trace_dir")
    sp.add_argument("--catalog", required=True)
    sp.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    sp.add_argument("--pmu-limit", type=int, default=None)
    sp.add_argument("--pmu-aware", action="store_true")
    sp.add_argument("--sweep", default=None, help="counter-count range LO:HI to optimize")
    sp.add_argument("--train-dir", default=None)
    sp.add_argument("--train-fraction", type=float, default=DEFAULT_TRAIN_FRACTION)
    common(sp)
    sp.set_defaults(func=cmd_characterize)

    sp = sub.add_parser("train", help="train one (sub-system, frequency) model")
    sp.add_argument("trace_dir")
    sp.add_argument("--report", required=True)
    sp.add_argument("--train-fraction", type=float, default=DEFAULT_TRAIN_FRACTION)
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("validate", help="validate a model or LUT against trace directories")
    sp.add_argument("model")
    sp.add_argument("trace_dirs", nargs="+")
    sp.add_argument("--split", choices=("heldout", "all"), default="heldout")
    sp.add_argument("--train-fraction", type=float, default=DEFAULT_TRAIN_FRACTION)
    common(sp)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("compose", help="combine model files into a LUT")
    sp.add_argument("models", nargs="+")
    common(sp)
    sp.set_defaults(func=cmd_compose)

    sp = sub.add_parser("export-fx", help="export a LUT in fixed-point form")
    sp.add_argument("lut")
    sp.add_argument("--weight-shift", type=int, default=20)
    common(sp)
    sp.set_defaults(func=cmd_export_fx)

    sp = sub.add_parser("simulate", help="replay a scheduler-event tape through the online monitor")
    sp.add_argument("lut")
    sp.add_argument("events")
    sp.add_argument("--subsystem", default=None)
    sp.add_argument("--frequency", type=int, default=None)
    sp.add_argument("--freq-timeline", default=None)
    sp.add_argument("--window", type=int, default=DEFAULT_WINDOW)
    sp.add_argument("--tick-threshold", type=int, default=DEFAULT_TICK_THRESHOLD)
    sp.add_argument("--mode", choices=("float", "fixed", "both"), default="fixed")
    common(sp)
    sp.set_defaults(func=cmd_simulate)
    return p


_INPUT_ARGS = ("config", "trace_dir", "catalog", "train_dir", "report", "model", "lut", "events",
               "freq_timeline")


def _config(args) -> RunConfig:
    inputs = [getattr(args, a) for a in _INPUT_ARGS if getattr(args, a, None)]
    inputs += list(getattr(args, "trace_dirs", []) or []) + list(getattr(args, "models", []) or [])
    known = {f for f in RunConfig.__dataclass_fields__} | {"func", "command"} | set(_INPUT_ARGS) \
        | {"trace_dirs", "models"}
    cfg = RunConfig(command=args.command, inputs=inputs, out=args.out)
    for name in ("alpha", "pmu_limit", "pmu_aware", "train_fraction", "seed", "window",
                 "tick_threshold", "mode"):
        if hasattr(args, name):
            setattr(cfg, name, getattr(args, name))
    cfg.extra = {k: v for k, v in sorted(vars(args).items()) if k not in known}
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config(args)
        outputs = args.func(args)
        write_manifest(cfg, outputs)
    # ValueError covers out-of-range parameters such as --train-fraction 1.5
    except (PmcPowerError, ValueError, FileNotFoundError, KeyError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"pmcpower {args.command}: error: {msg}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001
        print(f"pmcpower {args.command}: internal error: {e!r}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
