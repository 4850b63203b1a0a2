"""Offline replay of in-kernel PMC sampling and online power estimation.

Raw samples are cut from a tape of scheduler events: every context switch
produces one, and a scheduler tick produces one once `k` ticks have passed on
that core since its last sample. Each core feeds a moving window whose running
sum (the synthetic sample) is re-evaluated through the fixed-point model on
every push.
"""
from __future__ import annotations

import csv
import threading
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import MonitorError, TraceFormatError
from .fixedpoint import Fx, FxModelEntry, fx_add, fx_dynamic_sum, fx_rescale
from .model import ModelEntry, PowerLut, predict

CONTEXT_SWITCH = "context_switch"
TICK = "tick"
KINDS = (CONTEXT_SWITCH, TICK)
DEFAULT_WINDOW = 10
DEFAULT_TICK_THRESHOLD = 1
NS_PER_S = 1_000_000_000


@dataclass(frozen=True)
class SchedEvent:
    t: int
    core: int
    kind: str
    counts: Mapping[str, int]

    def __post_init__(self):
        if self.kind not in KINDS:
            raise MonitorError(f"unknown event kind {self.kind!r}")
        if any(c < 0 for c in self.counts.values()):
            raise MonitorError(f"negative counter delta at t={self.t}")


@dataclass(frozen=True)
class RawSample:
    t: int
    core: int
    counts: Mapping[str, int]
    duration: int


@dataclass(frozen=True)
class SyntheticSample:
    t: int
    core: int
    counts: Mapping[str, int]
    window_duration: int
    n_samples: int


def trigger_stream(events: Iterable[SchedEvent], tick_threshold: int = DEFAULT_TICK_THRESHOLD,
                   t0: int = 0) -> list[RawSample]:
    """Cut raw samples out of a scheduler-event tape.

    Deltas of events that do not trigger a sample are carried into the next
    sample of the same core. A sample's duration runs from the previous
    sample on its core (or `t0`) to its own timestamp.
    """
    if tick_threshold < 1:
        raise ValueError("tick threshold must be >= 1")
    last_t: dict[int, int] = {}
    last_emit: dict[int, int] = {}
    pending: dict[int, dict[str, int]] = {}
    ticks: dict[int, int] = {}
    out = []
    for i, ev in enumerate(events):
        if ev.core in last_t and ev.t <= last_t[ev.core]:
            raise MonitorError(f"out-of-order event at index {i} (core {ev.core}, t={ev.t})")
        if ev.t < t0:
            raise MonitorError(f"event at index {i} precedes trace start")
        last_t[ev.core] = ev.t
        acc = pending.setdefault(ev.core, {})
        for name, c in ev.counts.items():
            acc[name] = acc.get(name, 0) + c
        if ev.kind == TICK:
            ticks[ev.core] = ticks.get(ev.core, 0) + 1
            if ticks[ev.core] < tick_threshold:
                continue
        start = last_emit.get(ev.core, t0)
        out.append(RawSample(ev.t, ev.core, dict(acc), ev.t - start))
        last_emit[ev.core] = ev.t
        pending[ev.core] = {}
        ticks[ev.core] = 0
    return out


class MovingWindow:
    """Fixed-capacity ring of (duration, counts) entries with running sums.

    One writer per window; `snapshot` may be called from other threads and
    always sees a fully applied push.
    """

    def __init__(self, capacity: int = DEFAULT_WINDOW, events: Sequence[str] | None = None):
        if capacity < 1:
            raise ValueError("window capacity must be >= 1")
        self.capacity = capacity
        self.events = tuple(events) if events is not None else None
        self._durations = [0] * capacity
        self._counts: list[tuple[int, ...] | None] = [None] * capacity
        self._head = 0
        self._size = 0
        self._sums = [0] * len(self.events) if self.events is not None else None
        self._duration = 0
        self._lock = threading.Lock()

    def __len__(self):
        return self._size

    @property
    def full(self) -> bool:
        return self._size == self.capacity

    def push(self, sample: RawSample) -> SyntheticSample:
        if self.events is None:
            self.events = tuple(sample.counts)
            self._sums = [0] * len(self.events)
        if set(sample.counts) != set(self.events):
            raise MonitorError(f"tracked set mismatch at t={sample.t}")
        if sample.duration < 0:
            raise MonitorError(f"negative sample duration at t={sample.t}")
        new = tuple(int(sample.counts[e]) for e in self.events)
        if any(c < 0 for c in new):
            raise MonitorError(f"negative counter delta at t={sample.t}")
        with self._lock:
            if self._size == self.capacity:
                old = self._counts[self._head]
                for k, c in enumerate(old):
                    self._sums[k] -= c
                self._duration -= self._durations[self._head]
            else:
                self._size += 1
            self._counts[self._head] = new
            self._durations[self._head] = sample.duration
            for k, c in enumerate(new):
                self._sums[k] += c
            self._duration += sample.duration
            self._head = (self._head + 1) % self.capacity
            sums, duration, size = tuple(self._sums), self._duration, self._size
        return SyntheticSample(sample.t, sample.core, dict(zip(self.events, sums)), duration, size)

    def snapshot(self) -> tuple[dict[str, int], int]:
        with self._lock:
            return dict(zip(self.events or (), self._sums or ())), self._duration

    def contents(self) -> list[tuple[int, dict[str, int]]]:
        """Buffered (duration, counts) entries, oldest first."""
        with self._lock:
            start = (self._head - self._size) % self.capacity
            idx = [(start + i) % self.capacity for i in range(self._size)]
            return [(self._durations[i], dict(zip(self.events, self._counts[i]))) for i in idx]

    def clear(self) -> None:
        with self._lock:
            self._head = self._size = self._duration = 0
            self._counts = [None] * self.capacity
            self._durations = [0] * self.capacity
            if self._sums is not None:
                self._sums = [0] * len(self._sums)


def window_push(w: MovingWindow, sample: RawSample) -> SyntheticSample:
    return w.push(sample)


@dataclass(frozen=True)
class Estimate:
    t: int
    subsystem: str
    frequency: int
    core: int
    power_fx: Fx | None
    power_float: float | None
    warming: bool

    @property
    def overflow(self) -> bool:
        return bool(self.power_fx is not None and self.power_fx.overflow)


@dataclass
class OnlineMonitor:
    """Per-core windows feeding the active model of one sub-system."""

    lut_fx: Mapping[tuple[str, int], FxModelEntry]
    subsystem: str
    freq_timeline: Sequence[tuple[int, str, int]]
    capacity: int = DEFAULT_WINDOW
    float_lut: PowerLut | None = None
    mode: str = "fixed"
    _changes: list = field(init=False, default_factory=list)
    _windows: dict = field(init=False, default_factory=dict)
    _latest: dict = field(init=False, default_factory=dict)
    _freq: int | None = field(init=False, default=None)

    def __post_init__(self):
        if self.mode not in ("fixed", "float", "both"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode != "fixed" and self.float_lut is None:
            raise ValueError("float evaluation needs the floating-point LUT")
        self._changes = sorted((t, f) for t, s, f in self.freq_timeline if s == self.subsystem)
        if not self._changes:
            raise MonitorError(f"no frequency defined for sub-system {self.subsystem!r}")

    def frequency_at(self, t: int) -> int:
        freq = None
        for ct, f in self._changes:
            if ct > t:
                break
            freq = f
        if freq is None:
            raise MonitorError(f"no frequency defined for {self.subsystem!r} at t={t}")
        return freq

    def _entries(self, freq: int) -> tuple[FxModelEntry, ModelEntry | None]:
        key = (self.subsystem, freq)
        if key not in self.lut_fx:
            raise MonitorError(f"no model for ({self.subsystem}, {freq})")
        flt = self.float_lut[key] if self.float_lut is not None else None
        return self.lut_fx[key], flt

    def push(self, sample: RawSample) -> Estimate | None:
        freq = self.frequency_at(sample.t)
        if freq != self._freq:
            # counts gathered under another counter configuration are meaningless now
            self._freq = freq
            self._windows.clear()
            self._latest.clear()
        fx_entry, flt_entry = self._entries(freq)
        if set(sample.counts) != set(fx_entry.selected):
            raise MonitorError(f"tracked set mismatch at t={sample.t}")
        win = self._windows.get(sample.core)
        if win is None:
            win = self._windows[sample.core] = MovingWindow(self.capacity, fx_entry.selected)
        syn = win.push(sample)
        if syn.window_duration <= 0:
            return None
        self._latest[sample.core] = syn
        p_fx = p_flt = None
        if self.mode in ("fixed", "both"):
            p_fx = fx_entry.intercept
            for s in self._latest.values():
                p_fx = fx_add(p_fx, fx_rescale(fx_entry, fx_dynamic_sum(fx_entry, s.counts), s.window_duration))
        if self.mode in ("float", "both"):
            rates = {}
            for s in self._latest.values():
                for name, c in s.counts.items():
                    rates[(s.core, name)] = c * NS_PER_S / s.window_duration
            p_flt = predict(flt_entry, rates)
        warming = not all(w.full for w in self._windows.values())
        return Estimate(sample.t, self.subsystem, freq, sample.core, p_fx, p_flt, warming)


def online_estimate(lut_fx: Mapping[tuple[str, int], FxModelEntry],
                    freq_timeline: Sequence[tuple[int, str, int]],
                    samples: Iterable[RawSample], subsystem: str | None = None,
                    capacity: int = DEFAULT_WINDOW, float_lut: PowerLut | None = None,
                    mode: str = "fixed") -> list[Estimate]:
    """One estimate per synthetic sample; silent until a window holds time."""
    if subsystem is None:
        subs = {s for s, _ in lut_fx}
        if len(subs) != 1:
            raise MonitorError("LUT holds several sub-systems; name the one to monitor")
        subsystem = subs.pop()
    mon = OnlineMonitor(lut_fx, subsystem, freq_timeline, capacity, float_lut, mode)
    out = []
    for s in samples:
        est = mon.push(s)
        if est is not None:
            out.append(est)
    return out


def read_sched_events(path) -> list[SchedEvent]:
    """Parse ``t_ns,core,kind,ev:<name>...``; an empty cell means the event is not tracked."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TraceFormatError(f"malformed header in {path}: empty file") from None
        if header[:3] != ["t_ns", "core", "kind"] or not all(h.startswith("ev:") for h in header[3:]):
            raise TraceFormatError(f"malformed header in {path}: expected t_ns,core,kind,ev:<name>...")
        names = [h[3:] for h in header[3:]]
        out = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise TraceFormatError(f"expected {len(header)} fields, got {len(rec)} at row {lineno}")
            try:
                counts = {n: int(c) for n, c in zip(names, rec[3:]) if c.strip()}
                ev = SchedEvent(int(rec[0]), int(rec[1]), rec[2].strip(), counts)
            except ValueError as e:
                raise TraceFormatError(f"{e} at row {lineno}") from None
            out.append(ev)
    return out


def write_sched_events(events: Sequence[SchedEvent], path, names: Sequence[str] | None = None) -> None:
    if names is None:
        names = list(dict.fromkeys(n for ev in events for n in ev.counts))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_ns", "core", "kind"] + [f"ev:{n}" for n in names])
        for ev in events:
            w.writerow([ev.t, ev.core, ev.kind] + [ev.counts.get(n, "") for n in names])


def read_freq_timeline(path) -> list[tuple[int, str, int]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["t_ns", "subsystem", "frequency_hz"]:
            raise TraceFormatError(f"malformed header in {path}: expected t_ns,subsystem,frequency_hz")
        out = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                out.append((int(rec[0]), rec[1], int(rec[2])))
            except (ValueError, IndexError):
                raise TraceFormatError(f"malformed timeline entry at row {lineno}") from None
    return out


def write_estimates(estimates: Sequence[Estimate], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_ns", "subsystem", "power_mw_fx", "power_mw_float", "overflow_flag"])
        for e in estimates:
            w.writerow([e.t, e.subsystem,
                        "" if e.power_fx is None else repr(e.power_fx.to_float()),
                        "" if e.power_float is None else repr(e.power_float),
                        int(e.overflow)])
