"""Per-(sub-system, frequency) linear power models and the system LUT.

A model predicts ``P = L + sum_units sum_events rate * w`` with one weight per
event shared by every unit of the sub-system: a single island sensor cannot
observe per-unit power, so per-unit weights are not identifiable.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ModelError
from .regress import nnls
from .trace import EventId, RateMatrix

LUT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelEntry:
    subsystem: str
    frequency: int
    train_period: int
    intercept: float
    weights: Mapping[str, float]
    selected: tuple[str, ...]
    metadata: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "selected", tuple(self.selected))
        object.__setattr__(self, "weights", {k: float(v) for k, v in self.weights.items()})
        if not (self.intercept >= 0 and math.isfinite(self.intercept)):
            raise ModelError(f"intercept must be finite and >= 0, got {self.intercept}")
        if set(self.weights) != set(self.selected) or len(set(self.selected)) != len(self.selected):
            raise ModelError("weight keys must equal the selected event set")
        for k, w in self.weights.items():
            if not (w >= 0 and math.isfinite(w)):
                raise ModelError(f"weight for {k} must be finite and >= 0, got {w}")

    @property
    def key(self) -> tuple[str, int]:
        return (self.subsystem, self.frequency)


@dataclass(frozen=True)
class PowerLut:
    entries: Mapping[tuple[str, int], ModelEntry] = field(default_factory=dict)

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, key: tuple[str, int]) -> ModelEntry:
        try:
            return self.entries[key]
        except KeyError:
            raise ModelError(f"no model for ({key[0]}, {key[1]})") from None

    @property
    def subsystems(self) -> tuple[str, ...]:
        return tuple(sorted({s for s, _ in self.entries}))

    def frequencies(self, subsystem: str) -> tuple[int, ...]:
        return tuple(sorted(f for s, f in self.entries if s == subsystem))


@dataclass(frozen=True)
class ValidationReport:
    mape: float
    mape_std: float
    energy_error: float
    n_samples: int
    n_excluded: int = 0


def _names(selected: Iterable) -> tuple[str, ...]:
    return tuple(ev.name if isinstance(ev, EventId) else str(ev) for ev in selected)


def design_matrix(m: RateMatrix, selected: Sequence[str]) -> np.ndarray:
    """Per-event rates summed over units, one column per selected event."""
    units = m.units
    index = {(u, ev.name): k for k, (u, ev) in enumerate(m.columns)}
    cols = []
    for name in selected:
        idx = []
        for u in units:
            if (u, name) not in index:
                raise ModelError(f"missing event column {name!r} for unit {u}")
            idx.append(index[(u, name)])
        cols.append(m.samples[:, idx].sum(axis=1))
    return np.column_stack(cols) if cols else np.empty((len(m), 0))


def split_dataset(m: RateMatrix, train_fraction: float = 0.7, seed: int = 0) -> tuple[RateMatrix, RateMatrix]:
    """Random row-disjoint train/validation split; each part keeps time order."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    n = len(m)
    if n < 2:
        raise ModelError("need at least 2 rows to split")
    n_train = min(max(int(math.floor(train_fraction * n + 0.5)), 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    return m.take(np.sort(perm[:n_train])), m.take(np.sort(perm[n_train:]))


def train_entry(train: RateMatrix, selected: Sequence, subsystem: str, frequency: int,
                train_period: int | None = None) -> ModelEntry:
    names = _names(selected)
    if not names:
        raise ModelError("empty selection")
    if len(train) == 0:
        raise ModelError("empty training set")
    X = design_matrix(train, names)
    A = np.column_stack([X, np.ones(len(train))])
    sol = nnls(A, train.power)
    w = sol.weights
    if train_period is None:
        train_period = int(np.median(train.period))
    return ModelEntry(
        subsystem, int(frequency), int(train_period), float(w[-1]),
        {n: float(v) for n, v in zip(names, w[:-1])}, names,
        {"n_train": len(train), "nnls_iterations": sol.iterations,
         "residual_norm_mw": sol.residual_norm})


def _check_rates(entry: ModelEntry, rates: Mapping[tuple[int, str], float]) -> list[int]:
    units = sorted({u for u, _ in rates})
    for u in units:
        for name in entry.selected:
            if (u, name) not in rates:
                raise ModelError(f"missing event column {name!r} for unit {u}")
    return units


def unit_breakdown(entry: ModelEntry, rates: Mapping[tuple[int, str], float]) -> dict[int, float]:
    """Dynamic-power contribution of each unit (intercept excluded)."""
    out = {}
    for u in _check_rates(entry, rates):
        s = 0.0
        for name in entry.selected:
            r = rates[(u, name)]
            if r < 0:
                raise ModelError(f"negative rate for {name!r} on unit {u}")
            s += r * entry.weights[name]
        out[u] = s
    return out


def predict(entry: ModelEntry, rates: Mapping[tuple[int, str], float]) -> float:
    """Power in mW for rates keyed by (unit, event name)."""
    return entry.intercept + sum(unit_breakdown(entry, rates).values())


def predict_matrix(entry: ModelEntry, m: RateMatrix) -> np.ndarray:
    X = design_matrix(m, entry.selected)
    w = np.array([entry.weights[n] for n in entry.selected])
    return entry.intercept + X @ w


def validation_metrics(pred, meas, period) -> ValidationReport:
    pred = np.asarray(pred, dtype=np.float64)
    meas = np.asarray(meas, dtype=np.float64)
    period = np.asarray(period, dtype=np.float64)
    ok = meas > 0
    if ok.any():
        pct = np.abs(pred[ok] - meas[ok]) / meas[ok] * 100.0
        mape, mape_std = float(pct.mean()), float(pct.std())
    else:
        mape = mape_std = math.nan
    e_meas = float(np.sum(meas * period))
    e_pred = float(np.sum(pred * period))
    energy = abs(e_pred - e_meas) / e_meas * 100.0 if e_meas > 0 else math.nan
    return ValidationReport(mape, mape_std, energy, int(ok.sum()), int((~ok).sum()))


def validate_entry(entry: ModelEntry, validation: RateMatrix) -> ValidationReport:
    """MAPE over rows with positive measured power; energy error over all rows."""
    return validation_metrics(predict_matrix(entry, validation), validation.power, validation.period)


def compose_lut(entries: Sequence[ModelEntry]) -> PowerLut:
    table: dict[tuple[str, int], ModelEntry] = {}
    where: dict[tuple[str, int], str] = {}
    for k, e in enumerate(entries):
        src = str(e.metadata.get("source", f"entry #{k}"))
        if e.key in table:
            raise ModelError(
                f"duplicate LUT key ({e.subsystem}, {e.frequency}) from {where[e.key]} and {src}")
        table[e.key] = e
        where[e.key] = src
    return PowerLut(dict(sorted(table.items())))


def system_power(lut: PowerLut, state: Mapping[str, int],
                 rates: Mapping[str, Mapping[tuple[int, str], float]]) -> float:
    """Sum of the sub-system models selected by `state` (exact frequency match)."""
    total = 0.0
    for sub, freq in state.items():
        entry = lut[(sub, int(freq))]
        if sub not in rates:
            raise ModelError(f"no rates for sub-system {sub!r}")
        total += predict(entry, rates[sub])
    return total


def entry_to_json(e: ModelEntry) -> dict:
    return {
        "subsystem": e.subsystem,
        "frequency_hz": e.frequency,
        "train_period_ns": e.train_period,
        "intercept_mw": e.intercept,
        "weights": [{"event": n, "w": e.weights[n]} for n in e.selected],
        "selected": list(e.selected),
        "metadata": dict(e.metadata),
    }


def entry_from_json(raw: Mapping) -> ModelEntry:
    try:
        weights = {w["event"]: float(w["w"]) for w in raw["weights"]}
        return ModelEntry(raw["subsystem"], int(raw["frequency_hz"]), int(raw["train_period_ns"]),
                          float(raw["intercept_mw"]), weights, tuple(raw["selected"]),
                          dict(raw.get("metadata", {})))
    except (KeyError, TypeError) as e:
        raise ModelError(f"malformed model entry: {e}") from None


def lut_to_json(lut: PowerLut) -> dict:
    return {"format_version": LUT_FORMAT_VERSION,
            "entries": [entry_to_json(e) for e in lut.entries.values()]}


def lut_from_json(raw: Mapping) -> PowerLut:
    if raw.get("format_version") != LUT_FORMAT_VERSION:
        raise ModelError(f"unsupported LUT format_version {raw.get('format_version')!r}")
    return compose_lut([entry_from_json(e) for e in raw["entries"]])


def dumps(obj) -> str:
    # repr-based floats round-trip bit-exactly
    return json.dumps(obj, indent=2, sort_keys=False, allow_nan=False) + "\n"


def load_entry(path) -> ModelEntry:
    e = entry_from_json(json.loads(Path(path).read_text(encoding="utf-8")))
    return e


def load_lut(path) -> PowerLut:
    return lut_from_json(json.loads(Path(path).read_text(encoding="utf-8")))
