"""Platform characterization: rank events by correlation with power and pick
a counter set the PMU can track simultaneously."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .errors import DegenerateError, PmcPowerError, SelectionError
from .regress import SimpleFit, simple_lls
from .trace import EventId, RateMatrix

DEFAULT_ALPHA = 0.05


@dataclass(frozen=True)
class EventCatalog:
    """Countable events of one sub-system plus PMU constraints.

    Compatibility is a conflict-group table: two events sharing a group cannot
    be counted together. Pairwise exclusion makes feasibility downward-closed
    by construction. Fixed events sit on dedicated counters; they are exempt
    from conflicts and do not consume programmable slots.
    """

    subsystem: str
    events: tuple[EventId, ...]
    pmu_limit: int
    conflict_groups: dict[EventId, frozenset[str]] = field(default_factory=dict)
    fixed: frozenset[EventId] = frozenset()

    def __post_init__(self):
        if self.pmu_limit < 1:
            raise PmcPowerError("pmu_limit must be >= 1")
        if len(set(self.events)) != len(self.events):
            raise PmcPowerError(f"duplicate event in catalog for {self.subsystem!r}")
        known = set(self.events)
        for ev in list(self.conflict_groups) + list(self.fixed):
            if ev not in known:
                raise PmcPowerError(f"{ev} is not in the catalog")

    def compat(self, events: Iterable[EventId]) -> bool:
        seen: set[str] = set()
        for ev in events:
            if ev not in self.events and ev not in self.conflict_groups:
                raise KeyError(ev)
            if ev in self.fixed:
                continue
            groups = self.conflict_groups.get(ev, frozenset())
            if seen & groups:
                return False
            seen |= groups
        return True

    def without(self, event: EventId) -> "EventCatalog":
        return EventCatalog(
            self.subsystem, tuple(e for e in self.events if e != event), self.pmu_limit,
            {e: g for e, g in self.conflict_groups.items() if e != event},
            self.fixed - {event})

    @classmethod
    def all_compatible(cls, subsystem: str, events: Iterable[EventId], pmu_limit: int) -> "EventCatalog":
        return cls(subsystem, tuple(events), pmu_limit)


@dataclass(frozen=True)
class RankedEvent:
    event: EventId
    fit: SimpleFit


@dataclass(frozen=True)
class CharacterizationReport:
    subsystem: str
    frequency: int
    ranking: tuple[RankedEvent, ...]
    selected: tuple[EventId, ...]
    pmu_limit: int | None = None
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        ranked = {r.event for r in self.ranking}
        if not set(self.selected) <= ranked:
            raise SelectionError("selected events must come from the ranking")


def rank_key(r: RankedEvent):
    return (-abs(r.fit.pcc), r.event.name, r.event.subsystem)


def correlate_events(passes: Sequence[RateMatrix], alpha: float = DEFAULT_ALPHA) -> list[RankedEvent]:
    """Regress every event's rate (summed over units) on its own pass's power.

    Events with a p-value above `alpha` or a constant rate are dropped; the
    rest are sorted by |pcc| descending, ties by event name.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    owner: dict[EventId, int] = {}
    ranking = []
    for k, m in enumerate(passes):
        for ev in m.events:
            if ev in owner:
                raise SelectionError(
                    f"duplicate event across passes: {ev} in passes {owner[ev]} and {k}")
            owner[ev] = k
            try:
                fit = simple_lls(m.event_rates(ev), m.power)
            except DegenerateError:
                continue
            if fit.p_value <= alpha:
                ranking.append(RankedEvent(ev, fit))
    ranking.sort(key=rank_key)
    return ranking


def _split_fixed(ranking: Sequence[RankedEvent], fixed) -> tuple[list[EventId], list[EventId]]:
    ordered = [r.event for r in sorted(ranking, key=rank_key)]
    return [e for e in ordered if e in fixed], [e for e in ordered if e not in fixed]


def select_top(ranking: Sequence[RankedEvent], limit: int, fixed: Iterable[EventId] = ()) -> tuple[EventId, ...]:
    """First `limit` programmable events of the ranking; fixed events ride along for free."""
    if limit < 1:
        raise ValueError("limit must be >= 1")
    if not ranking:
        raise SelectionError("no significant events")
    fixed_sel, rest = _split_fixed(ranking, frozenset(fixed))
    return tuple(fixed_sel + rest[:limit])


def select_pmu_aware(ranking: Sequence[RankedEvent], catalog: EventCatalog,
                     limit: int | None = None) -> tuple[EventId, ...]:
    """Greedy scan down the ranking, keeping an event iff the grown set stays compatible."""
    limit = catalog.pmu_limit if limit is None else limit
    if limit < 1:
        raise ValueError("limit must be >= 1")
    if limit > catalog.pmu_limit:
        raise ValueError(f"limit {limit} exceeds pmu_limit {catalog.pmu_limit}")
    if not ranking:
        raise SelectionError("no significant events")
    fixed_sel, rest = _split_fixed(ranking, catalog.fixed)
    chosen: list[EventId] = []
    for ev in rest:
        if len(chosen) == limit:
            break
        if catalog.compat(chosen + [ev]):
            chosen.append(ev)
    if not chosen and not fixed_sel:
        raise SelectionError("no feasible counter set")
    selected = tuple(fixed_sel + chosen)
    assert catalog.compat(selected) and len(chosen) <= catalog.pmu_limit
    return selected


def characterize(passes: Sequence[RateMatrix], subsystem: str, frequency: int,
                 limit: int, catalog: EventCatalog | None = None, pmu_aware: bool = False,
                 alpha: float = DEFAULT_ALPHA) -> CharacterizationReport:
    ranking = correlate_events(passes, alpha)
    if pmu_aware:
        if catalog is None:
            raise ValueError("PMU-aware selection needs a catalog")
        selected = select_pmu_aware(ranking, catalog, limit)
    else:
        selected = select_top(ranking, limit, catalog.fixed if catalog else ())
    return CharacterizationReport(subsystem, frequency, tuple(ranking), selected,
                                  catalog.pmu_limit if catalog else limit, alpha)


@dataclass(frozen=True)
class SweepResult:
    best_k: int
    mape: dict[int, float]
    selections: dict[int, tuple[EventId, ...]]


def sweep_counter_count(passes: Sequence[RateMatrix], catalog: EventCatalog, k_range: Iterable[int],
                        trainer: Callable[[tuple[EventId, ...]], float],
                        alpha: float = DEFAULT_ALPHA, pmu_aware: bool = True,
                        tie_tol: float = 0.01) -> SweepResult:
    """Pick the counter count with the lowest validation MAPE.

    `trainer` receives a selection and returns its validation MAPE in percent.
    Counts whose MAPE is within `tie_tol` percentage points of the best one are
    treated as ties, and the smallest such count wins.
    """
    ks = sorted(set(k_range))
    if not ks:
        raise ValueError("k_range is empty")
    if ks[0] < 1 or ks[-1] > catalog.pmu_limit:
        raise ValueError(f"k_range must lie within 1..{catalog.pmu_limit}")
    ranking = correlate_events(passes, alpha)
    mapes, sels = {}, {}
    for k in ks:
        sel = select_pmu_aware(ranking, catalog, k) if pmu_aware else select_top(ranking, k, catalog.fixed)
        try:
            mape = float(trainer(sel))
        except PmcPowerError as e:
            raise type(e)(f"k={k}: {e}") from e
        sels[k], mapes[k] = sel, mape
    finite = [m for m in mapes.values() if math.isfinite(m)]
    if not finite:
        raise SelectionError("no counter count produced a finite validation MAPE")
    best = min(finite)
    best_k = min(k for k in ks if mapes[k] <= best + tie_tol)
    return SweepResult(best_k, mapes, sels)


def load_catalog(path) -> EventCatalog:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise PmcPowerError(f"malformed catalog {path}: {e}") from None
    try:
        subsystem = raw["subsystem"]
        events, groups, fixed = [], {}, set()
        for item in raw["events"]:
            ev = EventId(subsystem, item["name"])
            events.append(ev)
            groups[ev] = frozenset(item.get("conflict_groups", ()))
            if item.get("fixed", False):
                fixed.add(ev)
        return EventCatalog(subsystem, tuple(events), int(raw["pmu_limit"]), groups, frozenset(fixed))
    except (KeyError, TypeError) as e:
        raise PmcPowerError(f"malformed catalog {path}: missing or bad field {e}") from None


def catalog_to_json(cat: EventCatalog) -> dict:
    return {
        "subsystem": cat.subsystem,
        "pmu_limit": cat.pmu_limit,
        "events": [
            {"name": ev.name, "conflict_groups": sorted(cat.conflict_groups.get(ev, ())),
             **({"fixed": True} if ev in cat.fixed else {})}
            for ev in cat.events
        ],
    }


def report_to_json(rep: CharacterizationReport) -> dict:
    return {
        "subsystem": rep.subsystem,
        "frequency_hz": rep.frequency,
        "alpha": rep.alpha,
        "pmu_limit": rep.pmu_limit,
        "ranking": [
            {"event": r.event.name, "slope": r.fit.slope, "intercept": r.fit.intercept,
             "pcc": r.fit.pcc, "p_value": r.fit.p_value, "n": r.fit.n}
            for r in rep.ranking
        ],
        "selected": [ev.name for ev in rep.selected],
    }


def report_from_json(raw: dict) -> CharacterizationReport:
    sub = raw["subsystem"]
    ranking = tuple(
        RankedEvent(EventId(sub, r["event"]),
                    SimpleFit(r["slope"], r["intercept"], r["pcc"], r["p_value"], r["n"]))
        for r in raw["ranking"])
    return CharacterizationReport(sub, int(raw["frequency_hz"]), ranking,
                                  tuple(EventId(sub, n) for n in raw["selected"]),
                                  raw.get("pmu_limit"), raw.get("alpha", DEFAULT_ALPHA))
