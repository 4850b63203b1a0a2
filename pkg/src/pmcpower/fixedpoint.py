"""Q34.29 fixed-point arithmetic in 64-bit signed integers and the
integer-only evaluation of a trained power model.

Rounding is half-away-from-zero everywhere. Arithmetic saturates at
+/-(2**63 - 1) and sets a sticky ``overflow`` flag instead of raising, so a
pathological sample can never abort the monitor.

Weights in mW per (event/s) are tiny (~1e-6), so they are stored pre-scaled
by ``2**weight_shift``. The dynamic term is evaluated as

    dyn = (sum_ij count_ij * w_raw_j) * 1e9 / (window_ns * 2**weight_shift)

with a single rounded division: count/window rescaling is applied once to the
accumulated sum, so (counts, T') and (2 counts, 2 T') give identical results.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping

from .errors import FxOverflowError, ModelError
from .model import ModelEntry, PowerLut

FRAC_BITS = 29
ONE = 1 << FRAC_BITS
RAW_MAX = (1 << 63) - 1
RAW_MIN = -RAW_MAX
VALUE_LIMIT = 1 << 34
DEFAULT_WEIGHT_SHIFT = 20
NS_PER_S = 1_000_000_000
FX_FORMAT_VERSION = 1


def round_div(num: int, den: int) -> int:
    """num / den rounded half away from zero (den > 0)."""
    if den <= 0:
        raise ValueError("denominator must be positive")
    q = (2 * abs(num) + den) // (2 * den)
    return q if num >= 0 else -q


def round_shift(num: int, bits: int) -> int:
    if bits == 0:
        return num
    q = (abs(num) + (1 << (bits - 1))) >> bits
    return q if num >= 0 else -q


def _saturate(raw: int) -> tuple[int, bool]:
    if raw > RAW_MAX:
        return RAW_MAX, True
    if raw < RAW_MIN:
        return RAW_MIN, True
    return raw, False


@dataclass(frozen=True)
class Fx:
    raw: int
    overflow: bool = False

    frac_bits = FRAC_BITS

    def __post_init__(self):
        if not RAW_MIN - 1 <= self.raw <= RAW_MAX:
            raise FxOverflowError(f"raw value {self.raw} outside 64-bit range")

    def __float__(self):
        return self.raw / ONE

    def to_float(self) -> float:
        return self.raw / ONE

    @property
    def exact(self) -> Fraction:
        return Fraction(self.raw, ONE)


def to_fx(v: float) -> Fx:
    if not math.isfinite(v):
        raise FxOverflowError(f"cannot convert {v} to fixed point")
    if abs(v) >= VALUE_LIMIT:
        raise FxOverflowError(f"{v} outside the fixed-point range +/-2**34")
    x = Fraction(v) * ONE
    q, r = divmod(abs(x.numerator), x.denominator)
    if 2 * r >= x.denominator:
        q += 1
    return Fx(q if x >= 0 else -q)


def fx_add(a: Fx, b: Fx) -> Fx:
    raw, ovf = _saturate(a.raw + b.raw)
    return Fx(raw, ovf or a.overflow or b.overflow)


def fx_mul_acc(acc: Fx, a: Fx, b: Fx) -> Fx:
    """acc + a*b with the 128-bit product rounded back to 29 fractional bits."""
    prod = round_shift(a.raw * b.raw, FRAC_BITS)
    raw, ovf = _saturate(acc.raw + prod)
    return Fx(raw, ovf or acc.overflow or a.overflow or b.overflow)


def fx_mac_int(acc: Fx, count: int, w: Fx) -> Fx:
    """acc + count*w for an integer count; exact unless it saturates."""
    raw, ovf = _saturate(acc.raw + count * w.raw)
    return Fx(raw, ovf or acc.overflow or w.overflow)


@dataclass(frozen=True)
class FxModelEntry:
    subsystem: str
    frequency: int
    train_period: int
    intercept: Fx
    weights: Mapping[str, Fx]
    selected: tuple[str, ...]
    weight_shift: int = DEFAULT_WEIGHT_SHIFT
    metadata: Mapping = field(default_factory=dict)

    @property
    def key(self) -> tuple[str, int]:
        return (self.subsystem, self.frequency)

    def weight_value(self, name: str) -> Fraction:
        """Exact weight in mW per (event/s) represented by the stored raw value."""
        return Fraction(self.weights[name].raw, ONE << self.weight_shift)


def to_fx_entry(entry: ModelEntry, weight_shift: int = DEFAULT_WEIGHT_SHIFT) -> FxModelEntry:
    weights = {n: to_fx(math.ldexp(entry.weights[n], weight_shift)) for n in entry.selected}
    return FxModelEntry(entry.subsystem, entry.frequency, entry.train_period,
                        to_fx(entry.intercept), weights, entry.selected, weight_shift,
                        dict(entry.metadata))


def fx_dynamic_sum(entry: FxModelEntry, counts: Mapping, acc: Fx | None = None) -> Fx:
    """Accumulate count * w_raw over counts keyed by event name or (unit, event name)."""
    acc = Fx(0) if acc is None else acc
    for key, c in counts.items():
        name = key[1] if isinstance(key, tuple) else key
        if name not in entry.weights:
            raise ModelError(f"event {name!r} is not tracked by model {entry.key}")
        if c < 0:
            raise ValueError(f"negative count for {key}")
        acc = fx_mac_int(acc, int(c), entry.weights[name])
    return acc


def fx_rescale(entry: FxModelEntry, acc: Fx, window_ns: int) -> Fx:
    """Turn an accumulated count*weight sum into mW over a window of `window_ns`."""
    if window_ns <= 0:
        raise ValueError("window_ns must be positive")
    raw, ovf = _saturate(round_div(acc.raw * NS_PER_S, window_ns << entry.weight_shift))
    return Fx(raw, ovf or acc.overflow)


def _check_coverage(entry: FxModelEntry, keys) -> None:
    units = {k[0] for k in keys if isinstance(k, tuple)}
    present = set(keys)
    for u in units:
        for name in entry.selected:
            if (u, name) not in present:
                raise ModelError(f"missing event column {name!r} for unit {u}")
    if not units:
        missing = set(entry.selected) - present
        if missing:
            raise ModelError(f"missing event columns {sorted(missing)}")


def fx_predict(entry: FxModelEntry, synthetic: Mapping, window_ns: int) -> Fx:
    """Fixed-point power for integer counts accumulated over `window_ns`."""
    _check_coverage(entry, synthetic.keys())
    dyn = fx_rescale(entry, fx_dynamic_sum(entry, synthetic), window_ns)
    return fx_add(entry.intercept, dyn)


def fx_entry_to_json(e: FxModelEntry) -> dict:
    return {
        "subsystem": e.subsystem,
        "frequency_hz": e.frequency,
        "train_period_ns": e.train_period,
        "frac_bits": FRAC_BITS,
        "weight_shift": e.weight_shift,
        "intercept_raw": str(e.intercept.raw),
        "weights": [{"event": n, "w_raw": str(e.weights[n].raw)} for n in e.selected],
        "selected": list(e.selected),
    }


def fx_entry_from_json(raw: Mapping) -> FxModelEntry:
    if raw.get("frac_bits", FRAC_BITS) != FRAC_BITS:
        raise ModelError(f"unsupported frac_bits {raw.get('frac_bits')}")
    return FxModelEntry(raw["subsystem"], int(raw["frequency_hz"]), int(raw["train_period_ns"]),
                        Fx(int(raw["intercept_raw"])),
                        {w["event"]: Fx(int(w["w_raw"])) for w in raw["weights"]},
                        tuple(raw["selected"]), int(raw["weight_shift"]))


def export_fx_lut(lut: PowerLut, weight_shift: int = DEFAULT_WEIGHT_SHIFT) -> dict:
    return {"format_version": FX_FORMAT_VERSION, "frac_bits": FRAC_BITS,
            "entries": [fx_entry_to_json(to_fx_entry(e, weight_shift)) for e in lut.entries.values()]}


def fx_lut_from_json(raw: Mapping) -> dict[tuple[str, int], FxModelEntry]:
    if raw.get("frac_bits") != FRAC_BITS:
        raise ModelError(f"unsupported frac_bits {raw.get('frac_bits')}")
    entries = [fx_entry_from_json(e) for e in raw["entries"]]
    return {e.key: e for e in entries}


def load_fx_lut(path) -> dict[tuple[str, int], FxModelEntry]:
    return fx_lut_from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def fx_lut(lut: PowerLut, weight_shift: int = DEFAULT_WEIGHT_SHIFT) -> dict[tuple[str, int], FxModelEntry]:
    return {k: to_fx_entry(e, weight_shift) for k, e in lut.entries.items()}
