import numpy as np
import pytest

from pmcpower.errors import PmcPowerError
from pmcpower.synth import Phase, SynthSpec, generate, generate_multipass, random_phases, spec_from_json
from pmcpower.trace import EventId, normalize

EV = ("a", "b", "c", "d", "e", "f")


def _spec(sigma=0.0, seed=3, n_phases=20, n_units=2, rows=5, L=400.0):
    w = {"a": 2e-6, "b": 0.0, "c": 1e-6, "d": 3e-7, "e": 0.0, "f": 5e-6}
    return SynthSpec("gpu", 306_000_000, L, w, random_phases(EV, n_units, n_phases, seed, rows),
                     sigma=sigma, seed=seed, n_units=n_units)


def _truth_power(trace, truth):
    m = normalize(trace)
    return truth.intercept + sum(m.event_rates(EventId("gpu", n)) * w for n, w in truth.weights.items())


def test_noise_free_exact():
    tr, truth = generate(_spec())
    m = normalize(tr)
    assert np.array_equal(m.power, _truth_power(tr, truth))
    assert truth.weights["f"] == 5e-6 and truth.intercept == 400.0


def test_noise_free_single_phase_off_grid_rates():
    spec = SynthSpec("cpu", 1, 123.4, {"x": 1.7e-6}, [Phase(1_000_000_000, {"x": (3.33e8,)})])
    tr, truth = generate(spec)
    assert len(tr.rows) == 10
    for p in normalize(tr).power:
        assert abs(p - (123.4 + 3.33e8 * 1.7e-6)) <= 0.5


def test_determinism():
    a, _ = generate(_spec(sigma=0.05))
    b, _ = generate(_spec(sigma=0.05))
    c, _ = generate(_spec(sigma=0.05, seed=4))
    assert a == b and a != c


def test_noise_statistics():
    spec = _spec(sigma=0.01, n_phases=250, rows=4)
    tr, truth = generate(spec)
    m = normalize(tr)
    assert len(m) >= 1000
    resid = m.power - _truth_power(tr, truth)
    target = 0.01 * _truth_power(tr, truth).mean()
    assert abs(resid.std() - target) < 0.2 * target


def test_multipass_shapes():
    passes = generate_multipass(_spec(sigma=0.02), [("a", "b", "c"), ("d", "e", "f")])
    assert len(passes) == 2
    assert [r.t for r in passes[0].rows] == [r.t for r in passes[1].rows]
    assert not set(passes[0].events) & set(passes[1].events)
    assert [tr.pass_id for tr in passes] == [0, 1]


def test_multipass_singleton_equals_generate():
    spec = _spec(sigma=0.03)
    assert generate_multipass(spec, [EV])[0] == generate(spec)[0]


def test_multipass_errors():
    with pytest.raises(PmcPowerError, match="overlapping"):
        generate_multipass(_spec(), [("a", "b"), ("b", "c", "d", "e", "f")])
    with pytest.raises(PmcPowerError, match="cover"):
        generate_multipass(_spec(), [("a", "b")])


def _pass_mean_z(seed, sigma=0.02):
    spec = _spec(sigma=sigma, seed=seed, n_phases=40)
    passes = generate_multipass(spec, [("a", "b"), ("c", "d"), ("e", "f")])
    full, truth = generate(spec)
    tp = _truth_power(full, truth)
    sd = sigma * tp.mean() / np.sqrt(len(tp))
    return [(normalize(p).power.mean() - tp.mean()) / sd for p in passes]


def test_replay_mean_consistency():
    z = _pass_mean_z(seed=0)
    assert max(abs(v) for v in z) < 3
    assert max(z) - min(z) < 3 * np.sqrt(2)


def test_replay_means_are_calibrated():
    # the 3-sigma bound is statistical: check it is violated only at the nominal rate
    z = np.array([v for seed in range(100) for v in _pass_mean_z(seed)])
    assert 0.9 < z.std() < 1.1
    assert abs(z.mean()) < 0.15
    assert np.mean(np.abs(z) >= 3) < 0.01


def test_spec_validation():
    with pytest.raises(PmcPowerError):
        SynthSpec("cpu", 1, -1.0, {"x": 1.0}, [Phase(10, {"x": (1.0,)})], period=10)
    with pytest.raises(PmcPowerError):
        SynthSpec("cpu", 1, 1.0, {"x": -1.0}, [Phase(10, {"x": (1.0,)})], period=10)
    with pytest.raises(PmcPowerError):
        SynthSpec("cpu", 1, 1.0, {"x": 1.0}, [Phase(10, {"x": (1.0,)})], sigma=-0.1, period=10)
    with pytest.raises(PmcPowerError):
        SynthSpec("cpu", 1, 1.0, {"x": 1.0}, [Phase(5, {"x": (1.0,)})], period=10)
    with pytest.raises(PmcPowerError):
        SynthSpec("cpu", 1, 1.0, {"x": 1.0}, [Phase(10, {"y": (1.0,)})], period=10)


def test_counts_overflow():
    spec = SynthSpec("cpu", 1, 1.0, {"x": 1.0}, [Phase(10 ** 9, {"x": (1e19,)})], period=10 ** 9)
    with pytest.raises(PmcPowerError, match="overflow"):
        generate(spec)


def test_spec_from_json():
    raw = {"subsystem": "cpu", "frequency_hz": 730000000, "intercept_mw": 350, "n_units": 4,
           "weights": {"e0": 0, "e1": 2e-6}, "sigma": 0.01, "seed": 5,
           "random_phases": {"n_phases": 10, "seed": 2}}
    spec = spec_from_json(raw)
    assert spec.n_units == 4 and len(spec.phases) == 10 and spec.sigma == 0.01
    explicit = spec_from_json({"subsystem": "cpu", "frequency_hz": 1, "intercept_mw": 1,
                               "weights": {"x": 1e-6},
                               "phases": [{"duration_ns": 200000000, "rates": {"x": [1e8]}}]})
    assert explicit.phases[0].rates == {"x": (1e8,)}
    with pytest.raises(PmcPowerError, match="malformed synth config"):
        spec_from_json({"subsystem": "cpu"})
