import json
import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import (EVENTS, TRUTH, characterization_passes, ranked, scenario, training_matrix)
from oracles import best_feasible_subset, pearson_direct
from pmcpower.characterize import (EventCatalog, catalog_to_json, characterize, correlate_events,
                                   load_catalog, report_from_json, report_to_json, select_pmu_aware,
                                   select_top, sweep_counter_count)
from pmcpower.errors import SelectionError
from pmcpower.model import split_dataset, train_entry, validate_entry
from pmcpower.trace import EventId, RateMatrix

A, B, C, D = (EventId("cpu", n) for n in "ABCD")


def _matrix(cols, power):
    evs = [EventId("cpu", n) for n in cols]
    return RateMatrix(tuple((0, e) for e in evs), np.column_stack([cols[n] for n in cols]), power)


def _catalog(names, conflicts=(), limit=4, fixed=()):
    evs = tuple(EventId("cpu", n) for n in names)
    groups = {e: frozenset() for e in evs}
    for k, (a, b) in enumerate(conflicts):
        g = f"g{k}"
        groups[EventId("cpu", a)] |= {g}
        groups[EventId("cpu", b)] |= {g}
    return EventCatalog("cpu", evs, limit, groups, frozenset(EventId("cpu", n) for n in fixed))


def test_perfect_and_flat_split():
    p = np.array([100.0, 220, 330, 470, 500])
    m = _matrix({"A": p * 1e6, "B": np.full(5, 3e8)}, p)
    r = correlate_events([m])
    assert [x.event for x in r] == [A]
    assert r[0].fit.pcc == pytest.approx(1.0)


def test_ordering_by_abs_pcc():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, 200)
    noise = rng.normal(0, 1, 200)
    power = 1000 + 100 * x
    # A strongly, B weakly related; C is anti-correlated
    cols = {"A": x + 0.05 * noise, "B": np.abs(x + 0.8 * rng.normal(0, 1, 200)), "C": 2 - x + 0.2 * noise}
    cols = {k: np.maximum(v, 0) * 1e8 for k, v in cols.items()}
    r = correlate_events([_matrix(cols, power)])
    assert [x.event.name for x in r] == sorted(cols, key=lambda n: -abs(pearson_direct(list(cols[n]), list(power))))
    assert any(x.fit.pcc < 0 for x in r)


def test_ranking_matches_brute_force_oracle():
    spec = scenario(1_200_000_000, sigma=0.01, seed=4)
    passes = characterization_passes(spec)
    got = correlate_events(passes)
    expect = []
    for m in passes:
        for ev in m.events:
            rates = m.event_rates(ev)
            if np.ptp(rates) > 0:
                expect.append((-abs(pearson_direct(list(rates), list(m.power))), ev.name))
    expect.sort()
    kept = {r.event.name for r in got}
    assert [r.event.name for r in got] == [n for _, n in expect if n in kept]
    assert [r.event.name for r in got][:2] == ["e1", "e3"]


def test_duplicate_event_across_passes():
    m = _matrix({"A": np.arange(5.0)}, np.arange(5.0) + 1)
    with pytest.raises(SelectionError, match="duplicate event across passes"):
        correlate_events([m, m])


def test_alpha_filter():
    rng = np.random.default_rng(1)
    m = _matrix({"A": rng.uniform(0, 1, 10) * 1e8}, rng.uniform(100, 200, 10))
    full = correlate_events([m], alpha=0.999999)
    assert len(full) == 1
    p = full[0].fit.p_value
    assert correlate_events([m], alpha=min(p * 0.999, 0.5)) == []
    assert all(r.fit.p_value <= 0.05 for r in correlate_events([m]))


def test_select_top():
    r = ranked({f"x{k}": 1 - k / 20 for k in range(10)})
    assert [e.name for e in select_top(r, 3)] == ["x0", "x1", "x2"]
    assert len(select_top(r[:2], 4)) == 2
    with pytest.raises(SelectionError, match="no significant events"):
        select_top([], 3)


def test_select_top_tie_rule():
    r = ranked({"zeta": 0.7, "alpha": -0.7, "mid": 0.5})
    assert [e.name for e in select_top(r, 2)] == ["alpha", "zeta"]


def test_pmu_aware_forced_skip():
    r = ranked({"A": 0.9, "B": 0.8, "C": 0.7})
    cat = _catalog("ABC", conflicts=[("A", "B")])
    assert select_pmu_aware(r, cat, 2) == (A, C)


def test_pmu_aware_unconstrained_is_top_k():
    r = ranked({"A": 0.9, "B": 0.8, "C": 0.7, "D": 0.6})
    assert select_pmu_aware(r, _catalog("ABCD"), 3) == select_top(r, 3)


def test_pmu_aware_limit_above_pmu_limit():
    with pytest.raises(ValueError):
        select_pmu_aware(ranked({"A": 0.9}), _catalog("A", limit=2), 3)


def test_fixed_events_ride_along():
    r = ranked({"A": 0.9, "B": 0.8, "C": 0.7, "D": 0.2})
    cat = _catalog("ABCD", conflicts=[("D", "A")], limit=2, fixed="D")
    sel = select_pmu_aware(r, cat, 2)
    assert sel == (D, A, B)
    assert cat.compat(sel)
    assert select_top(r, 2, fixed=[D]) == (D, A, B)


def test_catalog_compat_downward_closed():
    cat = _catalog("ABCD", conflicts=[("A", "B"), ("C", "D")])
    assert cat.compat([])
    assert cat.compat([A, C]) and not cat.compat([A, B, C])
    with pytest.raises(KeyError):
        cat.compat([EventId("cpu", "nope")])


@given(st.integers(0, 10**6))
def test_selected_invariants_random(seed):
    rnd = random.Random(seed)
    n = rnd.randint(1, 10)
    names = [f"x{k}" for k in range(n)]
    pairs = [(a, b) for i, a in enumerate(names) for b in names[i + 1:] if rnd.random() < 0.3]
    cat = _catalog(names, pairs, limit=rnd.randint(1, 6))
    r = ranked({m: rnd.uniform(-1, 1) for m in names})
    limit = rnd.randint(1, cat.pmu_limit)
    sel = select_pmu_aware(r, cat, limit)
    assert len(sel) <= limit and cat.compat(sel)
    assert set(sel) <= {x.event for x in r}
    top = min(r, key=lambda x: (-abs(x.fit.pcc), x.event.name)).event
    assert sel[0] == top
    # removing an unselected event from the catalog never changes the selection
    for x in r:
        if x.event not in sel:
            rest = [y for y in r if y.event != x.event]
            assert select_pmu_aware(rest, cat.without(x.event), limit) == sel


def test_greedy_gap_is_documented_not_asserted():
    rnd = random.Random(7)
    gaps = []
    for _ in range(30):
        names = [f"x{k}" for k in range(8)]
        pairs = [(a, b) for i, a in enumerate(names) for b in names[i + 1:] if rnd.random() < 0.4]
        pcc = {m: rnd.uniform(0.1, 1) for m in names}
        cat = _catalog(names, pairs, limit=3)
        sel = select_pmu_aware(ranked(pcc), cat, 3)
        _, best = best_feasible_subset([EventId("cpu", m) for m in names],
                                       {EventId("cpu", m): v for m, v in pcc.items()},
                                       {frozenset((EventId("cpu", a), EventId("cpu", b))) for a, b in pairs}, 3)
        got = sum(pcc[e.name] for e in sel)
        assert got <= best + 1e-12
        gaps.append(best - got)
    assert min(gaps) >= 0


def test_affine_rescaling_keeps_ranking():
    spec = scenario(730_000_000, sigma=0.02, seed=9)
    passes = characterization_passes(spec)
    base = [r.event for r in correlate_events(passes)]
    scaled = [RateMatrix(m.columns, m.samples, 3.7 * m.power + 120.0, m.t, m.period) for m in passes]
    assert [r.event for r in correlate_events(scaled)] == base


def _trainer(spec):
    m = training_matrix(spec)

    def run(sel):
        tr, va = split_dataset(m, 0.7, 0)
        return validate_entry(train_entry(tr, sel, spec.subsystem, spec.frequency), va).mape
    return run


@pytest.mark.parametrize("freq", sorted(TRUTH))
def test_sweep_finds_two_drivers(freq):
    spec = scenario(freq)
    cat = EventCatalog.all_compatible("cpu", [EventId("cpu", e) for e in EVENTS], 4)
    res = sweep_counter_count(characterization_passes(spec), cat, range(1, 5), _trainer(spec))
    assert res.best_k == 2
    assert {e.name for e in res.selections[2]} == {"e1", "e3"}
    assert res.mape[1] > 1.0


def test_sweep_singleton_range():
    spec = scenario(730_000_000, sigma=0.05)
    cat = EventCatalog.all_compatible("cpu", [EventId("cpu", e) for e in EVENTS], 4)
    assert sweep_counter_count(characterization_passes(spec), cat, [1], _trainer(spec)).best_k == 1


def test_sweep_annotates_errors_with_k():
    spec = scenario(730_000_000)
    cat = EventCatalog.all_compatible("cpu", [EventId("cpu", e) for e in EVENTS], 4)

    def bad(sel):
        raise SelectionError("boom")
    with pytest.raises(SelectionError, match="k=1: boom"):
        sweep_counter_count(characterization_passes(spec), cat, [1, 2], bad)


def test_catalog_and_report_json(tmp_path):
    cat = _catalog("ABCD", conflicts=[("A", "B")], fixed="D")
    p = tmp_path / "cat.json"
    p.write_text(json.dumps(catalog_to_json(cat)))
    assert load_catalog(p) == cat
    spec = scenario(730_000_000)
    rep = characterize(characterization_passes(spec), "cpu", 730_000_000, 2)
    back = report_from_json(json.loads(json.dumps(report_to_json(rep))))
    assert back == rep
    assert {e.name for e in rep.selected} == {"e1", "e3"}
