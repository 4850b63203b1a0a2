import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import TRUTH, rel_err, scenario, training_matrix
from pmcpower.errors import ModelError
from pmcpower.model import (ModelEntry, PowerLut, compose_lut, dumps, entry_from_json, entry_to_json,
                            lut_from_json, lut_to_json, predict, predict_matrix, split_dataset,
                            system_power, train_entry, unit_breakdown, validate_entry,
                            validation_metrics)
from pmcpower.trace import EventId, RateMatrix

X = EventId("cpu", "x")
Y = EventId("cpu", "y")

CPU_FREQS = [730_000_000, 1_200_000_000, 2_300_000_000]
GPU_FREQS = [114_750_000, 204_000_000, 306_000_000, 408_000_000, 510_000_000, 599_250_000,
             701_250_000, 752_250_000, 803_250_000, 854_250_000, 905_250_000, 1_032_750_000,
             1_198_500_000, 1_377_000_000]


def _matrix(n, n_units=1, events=(X,)):
    cols = tuple((u, e) for u in range(n_units) for e in events)
    rng = np.random.default_rng(n)
    return RateMatrix(cols, rng.uniform(0, 1e9, (n, len(cols))), rng.uniform(500, 900, n))


def _entry(sub="cpu", freq=730_000_000, L=500.0, w=None, **meta):
    w = {"x": 2.0} if w is None else w
    return ModelEntry(sub, freq, 100_000_000, L, w, tuple(w), meta)


def test_split_seven_three():
    m = _matrix(10)
    tr, va = split_dataset(m, 0.7, seed=3)
    assert (len(tr), len(va)) == (7, 3)
    assert sorted(tr.t.tolist() + va.t.tolist()) == list(range(10))
    assert not set(tr.t.tolist()) & set(va.t.tolist())


def test_split_half_of_two():
    tr, va = split_dataset(_matrix(2), 0.5, seed=0)
    assert (len(tr), len(va)) == (1, 1)
    with pytest.raises(ModelError):
        split_dataset(_matrix(1), 0.5)


def test_split_determinism():
    m = _matrix(40)
    parts = [tuple(split_dataset(m, 0.7, seed=s)[0].t.tolist()) for s in range(100)]
    assert parts[0] == tuple(split_dataset(m, 0.7, seed=0)[0].t.tolist())
    # 40 choose 28 partitions: 100 seeds should essentially never collide
    assert len(set(parts)) == 100


@given(st.integers(2, 200), st.floats(0.01, 0.99))
def test_split_sizes(n, f):
    tr, va = split_dataset(_matrix(n), f, seed=n)
    assert len(tr) + len(va) == n
    assert len(tr) == min(max(math.floor(f * n + 0.5), 1), n - 1)


def test_train_recovers_ground_truth():
    cols = ((0, X),)
    rng = np.random.default_rng(2)
    rates = rng.integers(0, 200, 50) * 1e7
    power = 500.0 + 2e-6 * rates
    e = train_entry(RateMatrix(cols, rates[:, None], power), [X], "cpu", 1)
    assert rel_err(e.intercept, 500.0) < 1e-6
    assert rel_err(e.weights["x"], 2e-6) < 1e-6


def test_train_all_zero_rates():
    power = np.array([600.0, 640, 620, 700])
    e = train_entry(RateMatrix(((0, X),), np.zeros((4, 1)), power), [X], "cpu", 1)
    assert e.weights["x"] == 0.0
    assert e.intercept == pytest.approx(power.mean(), rel=1e-12)


def test_anticorrelated_event_gets_zero_weight():
    # y falls as a hidden load z rises, so unconstrained LS would give y a negative weight
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1e9, 100)
    z = rng.uniform(0, 1e9, 100)
    y = 1e9 - z + rng.uniform(0, 1e8, 100)
    m = RateMatrix(((0, X), (0, Y)), np.column_stack([x, y]), 300 + 1e-6 * x + 5e-7 * z)
    ls = np.linalg.lstsq(np.column_stack([x, y, np.ones(100)]), m.power, rcond=None)[0]
    assert ls[1] < 0
    e = train_entry(m, [X, Y], "cpu", 1)
    assert e.weights["y"] == 0.0
    assert e.weights["x"] > 0


def test_train_errors():
    with pytest.raises(ModelError, match="empty selection"):
        train_entry(_matrix(5), [], "cpu", 1)
    with pytest.raises(ModelError, match="missing event column"):
        train_entry(_matrix(5), [Y], "cpu", 1)


def test_multiunit_training_ties_weights():
    spec = scenario(1_200_000_000)
    m = training_matrix(spec)
    e = train_entry(m, ["e1", "e3"], "cpu", spec.frequency)
    L, w = TRUTH[spec.frequency]
    assert rel_err(e.intercept, L) < 1e-6
    for k, v in w.items():
        assert rel_err(e.weights[k], v) < 1e-6


def test_predict_examples():
    e = _entry()
    assert predict(e, {(0, "x"): 0.0}) == 500.0
    assert predict(e, {(0, "x"): 300.0}) == 1100.0
    four = {(u, "x"): 75.0 for u in range(4)}
    assert predict(e, four) == predict(e, {(0, "x"): 300.0})
    assert unit_breakdown(e, four) == {u: 150.0 for u in range(4)}
    with pytest.raises(ModelError, match="missing event column"):
        predict(_entry(w={"x": 1.0, "y": 1.0}), {(0, "x"): 1.0})


@given(st.lists(st.floats(0, 1e10), min_size=3, max_size=3), st.integers(0, 2), st.floats(0, 1e9))
def test_predict_monotone(rates, k, bump):
    e = _entry(w={"a": 1e-6, "b": 0.0, "c": 3e-7})
    r = {(0, n): v for n, v in zip("abc", rates)}
    r2 = dict(r)
    r2[(0, "abc"[k])] += bump
    assert predict(e, r2) >= predict(e, r) >= e.intercept


def test_validate_examples():
    cols = ((0, X),)
    rates = np.array([[0.0], [1e8], [3e8]])
    m = RateMatrix(cols, rates, 600 + 1e-6 * rates[:, 0], period=[10, 10, 10])
    exact = validate_entry(ModelEntry("cpu", 1, 10, 600.0, {"x": 1e-6}, ("x",)), m)
    assert exact.mape == 0.0 and exact.energy_error == 0.0
    meas = np.array([100.0, 200.0, 400.0])
    r = validation_metrics(1.1 * meas, meas, [10, 10, 10])
    assert r.mape == pytest.approx(10.0) and r.energy_error == pytest.approx(10.0)
    assert r.mape_std == pytest.approx(0.0, abs=1e-12)
    r = validation_metrics([90, 110], [100, 100], [5, 5])
    assert r.mape == pytest.approx(10.0) and r.energy_error == 0.0


def test_validate_excludes_zero_power():
    r = validation_metrics([100, 50, 110], [100, 0, 100], [1, 1, 1])
    assert r.n_excluded == 1 and r.n_samples == 2
    assert r.mape == pytest.approx(5.0)
    assert r.energy_error == pytest.approx(30.0)


def test_validate_energy_uses_row_periods():
    r = validation_metrics([200, 100], [100, 100], [1, 3])
    assert r.energy_error == pytest.approx(25.0)


def test_weight_zeroing_never_helps_on_noise_free_data():
    spec = scenario(2_300_000_000)
    m = training_matrix(spec)
    e = train_entry(m, ["e1", "e3", "e0"], "cpu", spec.frequency)
    base = validate_entry(e, m).mape
    for name in e.selected:
        w = dict(e.weights)
        w[name] = 0.0
        z = ModelEntry(e.subsystem, e.frequency, e.train_period, e.intercept, w, e.selected)
        assert base <= validate_entry(z, m).mape


def _full_lut():
    entries = [_entry("cpu", f, 300.0 + k, {"cycles": 1e-6 * (k + 1)}) for k, f in enumerate(CPU_FREQS)]
    entries += [_entry("gpu", f, 100.0 + k, {"sm_active": 2e-7 * (k + 1), "l2_hit": 1e-8})
                for k, f in enumerate(GPU_FREQS)]
    return compose_lut(entries)


def test_compose_seventeen_entries():
    lut = _full_lut()
    assert len(GPU_FREQS) == 14
    assert len(lut) == 17
    assert lut.subsystems == ("cpu", "gpu")
    assert lut.frequencies("cpu") == tuple(CPU_FREQS)


def test_compose_empty_and_duplicates():
    empty = compose_lut([])
    assert len(empty) == 0
    assert system_power(empty, {}, {}) == 0.0
    with pytest.raises(ModelError, match="a.json.*b.json"):
        compose_lut([_entry(source="a.json"), _entry(source="b.json")])
    with pytest.raises(ModelError, match="entry #0.*entry #1"):
        compose_lut([_entry(), _entry()])


def test_system_power():
    cpu = _entry("cpu", 730_000_000, 500.0, {"x": 2.0})
    gpu = _entry("gpu", 306_000_000, 1000.0, {"y": 5.0})
    lut = compose_lut([cpu, gpu])
    rates = {"cpu": {(0, "x"): 300.0}, "gpu": {(0, "y"): 300.0}}
    assert system_power(lut, {"cpu": 730_000_000}, rates) == 1100.0
    assert system_power(lut, {"cpu": 730_000_000, "gpu": 306_000_000}, rates) == 3600.0
    with pytest.raises(ModelError, match=r"no model for \(cpu, 1000000000\)"):
        system_power(lut, {"cpu": 1_000_000_000}, rates)


@given(st.lists(st.floats(0, 1e9), min_size=17, max_size=17))
def test_system_power_is_sum_of_predicts(vals):
    lut = _full_lut()
    it = iter(vals)
    rates = {"cpu": {(0, "cycles"): next(it)},
             "gpu": {(0, "sm_active"): next(it), (0, "l2_hit"): next(it)}}
    state = {"cpu": CPU_FREQS[1], "gpu": GPU_FREQS[5]}
    parts = predict(lut[("cpu", CPU_FREQS[1])], rates["cpu"]) + predict(lut[("gpu", GPU_FREQS[5])], rates["gpu"])
    assert system_power(lut, state, rates) == pytest.approx(parts, rel=4e-16)


@given(st.floats(0, 1e4), st.lists(st.floats(0, 10, allow_subnormal=True), min_size=1, max_size=5))
def test_serialization_bit_exact(L, ws):
    e = _entry(L=L, w={f"e{k}": w for k, w in enumerate(ws)}, note="x")
    lut = compose_lut([e])
    back = lut_from_json(json.loads(dumps(lut_to_json(lut))))
    b = back[e.key]
    assert b.intercept == e.intercept and b.weights == e.weights
    assert b == entry_from_json(json.loads(dumps(entry_to_json(e))))


def test_lut_format_version_checked():
    with pytest.raises(ModelError):
        lut_from_json({"format_version": 99, "entries": []})


def test_entry_invariants():
    with pytest.raises(ModelError):
        _entry(L=-1.0)
    with pytest.raises(ModelError):
        _entry(w={"x": -1e-9})
    with pytest.raises(ModelError):
        ModelEntry("cpu", 1, 1, 0.0, {"x": 1.0}, ("x", "y"))
    assert isinstance(PowerLut(), PowerLut)


def test_predict_matrix_matches_predict():
    m = _matrix(6, n_units=3, events=(X, Y))
    e = _entry(w={"x": 1e-6, "y": 4e-7})
    np.testing.assert_allclose(predict_matrix(e, m), [predict(e, m.row_rates(k)) for k in range(6)],
                               rtol=1e-14)
