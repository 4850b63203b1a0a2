"""Activity traces: data model, CSV ingestion, rate normalization.

A trace pairs raw per-unit PMC counts with the sub-system power measured over
the same sampling period. On disk a trace is a wide CSV, one row per
``(t, unit)``::

    t_ns,period_ns,unit,power_mw,ev:cycles,ev:inst_retired
    0,100000000,0,2000,100000000,55000000

A multi-pass directory holds ``pass_<k>.csv`` files plus ``meta.json`` with
``{subsystem, frequency_hz, n_units}``; every pass replays the same workload
while tracking a different event subset.
"""
from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import TraceFormatError

NS_PER_S = 1_000_000_000
BASE_COLUMNS = ("t_ns", "period_ns", "unit", "power_mw")
EVENT_PREFIX = "ev:"
_NAME_RE = re.compile(r"^[A-Za-z0-9_.\-]+$")
_PASS_RE = re.compile(r"^pass_(\d+)\.csv$")


@dataclass(frozen=True, order=True)
class EventId:
    subsystem: str
    name: str

    def __post_init__(self):
        if not self.name or not _NAME_RE.match(self.name):
            raise TraceFormatError(f"invalid event name {self.name!r}")

    def __str__(self):
        return f"{self.subsystem}:{self.name}" if self.subsystem else self.name


@dataclass(frozen=True)
class TraceRow:
    t: int
    period: int
    unit: int
    counts: Mapping[EventId, int]
    power: int

    def __post_init__(self):
        if self.period <= 0:
            raise TraceFormatError(f"non-positive period at t={self.t}")
        if self.power < 0:
            raise TraceFormatError(f"negative power at t={self.t}")
        if any(c < 0 for c in self.counts.values()):
            raise TraceFormatError(f"negative count at t={self.t}")


@dataclass(frozen=True)
class ActivityTrace:
    subsystem: str
    frequency: int
    pass_id: int
    rows: tuple[TraceRow, ...]
    n_units: int
    # None until stability_filter has looked at the trace
    stable: bool | None = None

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        if self.n_units < 1:
            raise TraceFormatError("n_units must be >= 1")
        if self.pass_id < 0:
            raise TraceFormatError("pass_id must be >= 0")
        if not self.rows:
            return
        events = set(self.rows[0].counts)
        prev = None
        for r in self.rows:
            if r.unit < 0 or r.unit >= self.n_units:
                raise TraceFormatError(f"unit {r.unit} out of range at t={r.t}")
            if set(r.counts) != events:
                raise TraceFormatError(f"inconsistent event set at t={r.t}")
            key = (r.t, r.unit)
            if prev is not None and key <= prev:
                raise TraceFormatError(f"rows not sorted by (t, unit) at t={r.t}")
            prev = key
        for ev in events:
            if ev.subsystem != self.subsystem:
                raise TraceFormatError(f"event {ev} outside subsystem {self.subsystem!r}")

    @property
    def events(self) -> tuple[EventId, ...]:
        return tuple(self.rows[0].counts) if self.rows else ()


@dataclass(frozen=True, eq=False)
class RateMatrix:
    """Normalized rates, one row per timestamp, columns expanded over (unit, event)."""

    columns: tuple[tuple[int, EventId], ...]
    samples: np.ndarray
    power: np.ndarray
    t: np.ndarray = field(default=None)
    period: np.ndarray = field(default=None)

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64, ndmin=2)
        if samples.size == 0:
            samples = samples.reshape(len(self.power), len(self.columns))
        power = np.asarray(self.power, dtype=np.float64)
        n = len(power)
        if samples.shape != (n, len(self.columns)):
            raise TraceFormatError(
                f"sample matrix shape {samples.shape} does not match "
                f"{n} rows x {len(self.columns)} columns")
        if not np.all(np.isfinite(samples)) or np.any(samples < 0):
            raise TraceFormatError("rates must be finite and non-negative")
        t = np.arange(n, dtype=np.int64) if self.t is None else np.asarray(self.t, dtype=np.int64)
        period = (np.full(n, NS_PER_S, dtype=np.int64) if self.period is None
                  else np.asarray(self.period, dtype=np.int64))
        for name, arr in (("samples", samples), ("power", power), ("t", t), ("period", period)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "columns", tuple(self.columns))

    def __len__(self):
        return len(self.power)

    @property
    def events(self) -> tuple[EventId, ...]:
        return tuple(dict.fromkeys(ev for _, ev in self.columns))

    @property
    def units(self) -> tuple[int, ...]:
        return tuple(sorted({u for u, _ in self.columns}))

    def column(self, unit: int, event: EventId) -> np.ndarray:
        return self.samples[:, self.columns.index((unit, event))]

    def event_rates(self, event: EventId) -> np.ndarray:
        """Rates of `event` summed across units."""
        idx = [k for k, (_, ev) in enumerate(self.columns) if ev == event]
        if not idx:
            raise KeyError(event)
        return self.samples[:, idx].sum(axis=1)

    def take(self, rows: Sequence[int]) -> "RateMatrix":
        rows = np.asarray(rows, dtype=np.intp)
        return RateMatrix(self.columns, self.samples[rows], self.power[rows],
                          self.t[rows], self.period[rows])

    def row_rates(self, k: int) -> dict[tuple[int, str], float]:
        return {(u, ev.name): float(v) for (u, ev), v in zip(self.columns, self.samples[k])}

    @classmethod
    def concat(cls, mats: Sequence["RateMatrix"]) -> "RateMatrix":
        cols = mats[0].columns
        for m in mats[1:]:
            if m.columns != cols:
                raise TraceFormatError("cannot concatenate rate matrices with different columns")
        return cls(cols, np.vstack([m.samples for m in mats]),
                   np.concatenate([m.power for m in mats]),
                   np.concatenate([m.t for m in mats]),
                   np.concatenate([m.period for m in mats]))


def _parse_int(text: str, what: str, lineno: int) -> int:
    text = text.strip()
    if not text:
        raise TraceFormatError(f"missing {what} at row {lineno}")
    try:
        return int(text)
    except ValueError:
        pass
    try:
        v = float(text)
    except ValueError:
        raise TraceFormatError(f"malformed {what} {text!r} at row {lineno}") from None
    if not math.isfinite(v) or not v.is_integer():
        raise TraceFormatError(f"non-integer {what} {text!r} at row {lineno}")
    return int(v)


def _parse_header(header: list[str], path) -> list[str]:
    if tuple(header[:4]) != BASE_COLUMNS:
        raise TraceFormatError(
            f"malformed header in {path}: expected {','.join(BASE_COLUMNS)},ev:<name>...")
    names = []
    for col in header[4:]:
        if not col.startswith(EVENT_PREFIX):
            raise TraceFormatError(f"malformed header in {path}: column {col!r} lacks 'ev:' prefix")
        name = col[len(EVENT_PREFIX):]
        if not _NAME_RE.match(name):
            raise TraceFormatError(f"malformed header in {path}: bad event name {name!r}")
        if name in names:
            raise TraceFormatError(f"malformed header in {path}: duplicate event {name!r}")
        names.append(name)
    if not names:
        raise TraceFormatError(f"malformed header in {path}: no event columns")
    return names


def ingest_trace(path, subsystem: str = "", frequency: int = 0, pass_id: int | None = None,
                 n_units: int | None = None) -> ActivityTrace:
    """Read one trace CSV. Errors name the offending file line as ``row k``."""
    path = Path(path)
    if pass_id is None:
        m = _PASS_RE.match(path.name)
        pass_id = int(m.group(1)) if m else 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TraceFormatError(f"malformed header in {path}: empty file") from None
        names = _parse_header(header, path)
        events = [EventId(subsystem, n) for n in names]
        rows = []
        seen = set()
        last_t = None
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise TraceFormatError(
                    f"expected {len(header)} fields, got {len(rec)} at row {lineno}")
            t = _parse_int(rec[0], "timestamp", lineno)
            period = _parse_int(rec[1], "period", lineno)
            unit = _parse_int(rec[2], "unit", lineno)
            power = _parse_int(rec[3], "power", lineno)
            if last_t is not None and t < last_t:
                raise TraceFormatError(f"non-monotone timestamp at row {lineno}")
            last_t = t
            if period <= 0:
                raise TraceFormatError(f"non-positive period at row {lineno}")
            if unit < 0:
                raise TraceFormatError(f"negative unit at row {lineno}")
            if power < 0:
                raise TraceFormatError(f"negative power at row {lineno}")
            if (t, unit) in seen:
                raise TraceFormatError(f"duplicate (t, unit) at row {lineno}")
            seen.add((t, unit))
            counts = {}
            for ev, cell in zip(events, rec[4:]):
                if not cell.strip():
                    raise TraceFormatError(f"inconsistent event set at row {lineno}: {ev.name} missing")
                c = _parse_int(cell, f"count for {ev.name}", lineno)
                if c < 0:
                    raise TraceFormatError(f"negative count for {ev.name} at row {lineno}")
                counts[ev] = c
            rows.append(TraceRow(t, period, unit, counts, power))
    rows.sort(key=lambda r: (r.t, r.unit))
    max_unit = max((r.unit for r in rows), default=0)
    if n_units is None:
        n_units = max_unit + 1
    elif max_unit >= n_units:
        raise TraceFormatError(f"unit {max_unit} out of range for n_units={n_units} in {path}")
    return ActivityTrace(subsystem, int(frequency), pass_id, tuple(rows), n_units)


def write_trace(trace: ActivityTrace, path) -> None:
    events = trace.events
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(BASE_COLUMNS) + [EVENT_PREFIX + ev.name for ev in events])
        for r in trace.rows:
            w.writerow([r.t, r.period, r.unit, r.power] + [r.counts[ev] for ev in events])


def read_meta(directory) -> dict:
    path = Path(directory) / "meta.json"
    try:
        meta = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise TraceFormatError(f"missing meta.json in {directory}") from None
    except json.JSONDecodeError as e:
        raise TraceFormatError(f"malformed meta.json in {directory}: {e}") from None
    for key in ("subsystem", "frequency_hz", "n_units"):
        if key not in meta:
            raise TraceFormatError(f"meta.json in {directory} lacks {key!r}")
    return meta


def ingest_pass_dir(directory) -> list[ActivityTrace]:
    """Read every ``pass_<k>.csv`` of a multi-pass directory, ordered by k."""
    directory = Path(directory)
    if not directory.is_dir():
        raise TraceFormatError(f"not a trace directory: {directory}")
    meta = read_meta(directory)
    passes = sorted(
        (int(m.group(1)), p) for p in directory.iterdir() if (m := _PASS_RE.match(p.name)))
    if not passes:
        raise TraceFormatError(f"no pass_<k>.csv files in {directory}")
    return [ingest_trace(p, meta["subsystem"], int(meta["frequency_hz"]), k, int(meta["n_units"]))
            for k, p in passes]


def write_pass_dir(traces: Sequence[ActivityTrace], directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    first = traces[0]
    meta = {"subsystem": first.subsystem, "frequency_hz": first.frequency,
            "n_units": first.n_units}
    for tr in traces:
        if (tr.subsystem, tr.frequency, tr.n_units) != tuple(meta.values()):
            raise TraceFormatError("passes of one directory must share subsystem, frequency and n_units")
    written = []
    for tr in traces:
        p = directory / f"pass_{tr.pass_id}.csv"
        write_trace(tr, p)
        written.append(p)
    meta_path = directory / "meta.json"
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(meta_path)
    return written


def normalize(trace: ActivityTrace) -> RateMatrix:
    """Convert raw counts into events/s, one matrix row per timestamp.

    Each unit's counts are divided by that unit's own period. The row's power
    and period are the mean over the unit rows sharing the timestamp (they are
    identical in well-formed traces).
    """
    events = trace.events
    columns = tuple((u, ev) for u in range(trace.n_units) for ev in events)
    by_t: dict[int, list[TraceRow]] = {}
    for r in trace.rows:
        assert r.period > 0
        by_t.setdefault(r.t, []).append(r)
    samples = np.empty((len(by_t), len(columns)))
    power = np.empty(len(by_t))
    ts = np.empty(len(by_t), dtype=np.int64)
    periods = np.empty(len(by_t), dtype=np.int64)
    n_ev = len(events)
    for k, (t, rows) in enumerate(by_t.items()):
        if len(rows) != trace.n_units:
            raise TraceFormatError(
                f"timestamp {t} has {len(rows)} unit rows, expected {trace.n_units}")
        for r in rows:
            counts = np.array([r.counts[ev] for ev in events], dtype=np.float64)
            samples[k, r.unit * n_ev:(r.unit + 1) * n_ev] = counts * NS_PER_S / r.period
        power[k] = sum(r.power for r in rows) / len(rows)
        ts[k] = t
        periods[k] = round(sum(r.period for r in rows) / len(rows))
    return RateMatrix(columns, samples, power, ts, periods)


def stability_filter(trace: ActivityTrace, max_cv: float) -> ActivityTrace:
    """Mark the trace stable iff the coefficient of variation of its power is <= max_cv."""
    if max_cv <= 0:
        raise ValueError("max_cv must be positive")
    if len(trace.rows) < 2:
        raise TraceFormatError("insufficient samples for CV")
    p = np.array([r.power for r in trace.rows], dtype=np.float64)
    mean = p.mean()
    cv = 0.0 if mean == 0 else float(p.std() / mean)
    return replace(trace, stable=cv <= max_cv)


def power_cv(trace: ActivityTrace) -> float:
    p = np.array([r.power for r in trace.rows], dtype=np.float64)
    return 0.0 if p.mean() == 0 else float(p.std() / p.mean())


def make_rows(t: Iterable[int], period: Iterable[int], unit: Iterable[int],
              counts: Iterable[Mapping[EventId, int]], power: Iterable[int]) -> tuple[TraceRow, ...]:
    return tuple(TraceRow(int(a), int(b), int(c), dict(d), int(e))
                 for a, b, c, d, e in zip(t, period, unit, counts, power))
