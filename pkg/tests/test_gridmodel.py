import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gridshield.gridmodel import (
    CaseError,
    LoadProfile,
    UnobservableError,
    bundled_case,
    bundled_case_names,
    case_from_dict,
    clean_measurements,
    default_profile,
    load_case,
    load_profile,
    simulate_day,
    true_states,
)

THREE_BUS = {
    "buses": [
        {"id": 1, "type": "slack"},
        {"id": 2, "type": "load", "base_load": 0.5},
        {"id": 3, "type": "load", "base_load": 0.3},
    ],
    "branches": [{"from": 1, "to": 2, "x": 0.1}, {"from": 2, "to": 3, "x": 0.1}],
    "measurements": [
        {"kind": "flow", "loc": [1, 2]},
        {"kind": "flow", "loc": [2, 3]},
        {"kind": "injection", "loc": 2},
        {"kind": "injection", "loc": 3},
    ],
}


def test_three_bus_jacobian_matches_hand_derivation():
    case = case_from_dict(THREE_BUS)
    # states (theta2, theta3); flow f->t = (theta_f - theta_t)/x;
    # injection = sum of flows leaving the bus
    expected = np.array([[-10.0, 0.0], [10.0, -10.0], [20.0, -10.0], [-10.0, 10.0]])
    assert case.state_dim == 2 and case.meas_dim == 4
    np.testing.assert_allclose(case.H, expected)
    assert np.linalg.matrix_rank(case.H) == 2


def test_disconnected_bus_is_unobservable():
    doc = json.loads(json.dumps(THREE_BUS))
    doc["buses"].append({"id": 4, "type": "load", "base_load": 0.1})
    doc["measurements"].append({"kind": "voltage", "loc": 4})
    with pytest.raises(UnobservableError):
        case_from_dict(doc)


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda d: d["buses"].append({"id": 2, "type": "load"}), "duplicate"),
        (lambda d: d["buses"][1].update(type="slack"), "slack"),
        (lambda d: d["branches"].append({"from": 1, "to": 9, "x": 0.1}), "unknown bus"),
        (lambda d: d["branches"].append({"from": 2, "to": 1, "x": 0.2}), "parallel"),
        (lambda d: d["measurements"][0].update(sigma=0.0), "sigma"),
        (lambda d: d["measurements"][0].update(kind="current"), "kind"),
        (lambda d: d.pop("branches"), "malformed"),
    ],
)
def test_case_validation_errors(mutate, message):
    doc = json.loads(json.dumps(THREE_BUS))
    mutate(doc)
    with pytest.raises(CaseError, match=message):
        case_from_dict(doc)


def test_too_few_measurements_rejected():
    doc = json.loads(json.dumps(THREE_BUS))
    doc["measurements"] = doc["measurements"][:2]
    with pytest.raises(UnobservableError):
        case_from_dict(doc)


def test_bundled_cases(case14):
    assert set(bundled_case_names()) >= {"ieee14", "tiny3"}
    assert case14.state_dim == 13
    assert case14.meas_dim >= 40
    assert np.linalg.matrix_rank(case14.H) == 13
    with pytest.raises(CaseError):
        bundled_case("ieee999")


def test_owner_bus_rules(case14):
    for m, owner in zip(case14.measurements, case14.owner_buses):
        expected = m.location[0] if m.kind == "flow" else m.location
        assert owner == expected
        assert m.sigma == 0.01


def test_load_case_reports_parse_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n "buses": [\n  {"id": 1,,}\n ]\n}\n')
    with pytest.raises(CaseError, match="line 3"):
        load_case(p)


def test_load_case_round_trip(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(THREE_BUS))
    assert np.array_equal(load_case(p).H, case_from_dict(THREE_BUS).H)


def test_dc_consistency_injections_equal_incident_flows(case14):
    """Zero noise: each injection equals the sum of flows leaving its bus."""
    z = clean_measurements(case14, case14.base_loads)
    theta = np.zeros(len(case14.buses))
    theta[1:] = case14.solve_dc(case14.base_loads)
    for i, m in enumerate(case14.measurements):
        if m.kind != "injection":
            continue
        total = 0.0
        for br in case14.branches:
            if m.location in br.key:
                f, t = br.key if br.from_bus == m.location else br.key[::-1]
                total += (theta[f - 1] - theta[t - 1]) / br.x
        assert z[i] == pytest.approx(total, abs=1e-12)


def test_power_balance(case14):
    x = case14.solve_dc(case14.base_loads)
    keep = [i for i, b in enumerate(case14.buses) if b.type != "slack"]
    np.testing.assert_allclose(case14.bus_susceptance @ x, -case14.base_loads[keep], atol=1e-12)
    # injection meters sum to zero over the whole network when all are metered
    z = clean_measurements(case14, case14.base_loads)
    inj = [i for i, m in enumerate(case14.measurements) if m.kind == "injection"]
    if len(inj) == len(case14.buses):
        assert z[inj].sum() == pytest.approx(0.0, abs=1e-12)


def test_flat_profile_zero_noise_is_constant(case14):
    z = simulate_day(case14, LoadProfile(shape=(1.0,)), 10, seed=3, magnitude_floor=0.0)
    exact = clean_measurements(case14, case14.base_loads)
    # sigma * |h| noise is still present; zero-noise check uses sigma -> 0
    assert z.shape == (10, case14.meas_dim)
    doc = {
        "buses": [{"id": b.id, "type": b.type, "base_load": b.base_load} for b in case14.buses],
        "branches": [{"from": b.from_bus, "to": b.to_bus, "x": b.x} for b in case14.branches],
        "measurements": [
            {"kind": m.kind, "loc": list(m.location) if m.kind == "flow" else m.location, "sigma": 1e-300}
            for m in case14.measurements
        ],
    }
    quiet = case_from_dict(doc)
    zq = simulate_day(quiet, LoadProfile(shape=(1.0,)), 10, seed=3, magnitude_floor=0.0)
    assert np.all(zq == zq[0])
    np.testing.assert_allclose(zq[0], exact, rtol=0, atol=1e-13)


def test_seed_determinism(case14):
    a = simulate_day(case14, default_profile(), 500, seed=9)
    b = simulate_day(case14, default_profile(), 500, seed=9)
    c = simulate_day(case14, default_profile(), 500, seed=10)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_noise_level_relative_to_magnitude(case14):
    """Per-measurement noise std over mean |h| stays within 20% of 0.01."""
    prof = default_profile()
    z = simulate_day(case14, prof, 21600, seed=4)
    exact = case14.h(true_states(case14, prof, 21600, np.random.default_rng(0)))
    mag = np.abs(exact).mean(axis=0)
    keep = mag > 1e-2
    ratio = (z - exact).std(axis=0)[keep] / mag[keep]
    assert keep.sum() >= 30
    assert np.all(np.abs(ratio - 0.01) <= 0.2 * 0.01)


def test_zero_injection_meters_still_noisy(case14):
    z = simulate_day(case14, default_profile(), 200, seed=1)
    assert np.all(z.std(axis=0) > 0)


def test_samples_must_be_positive(case14):
    with pytest.raises(ValueError):
        simulate_day(case14, default_profile(), 0)


@given(st.integers(min_value=0, max_value=10**6), st.integers(min_value=1, max_value=50))
def test_profile_periodicity(k, period):
    prof = LoadProfile(shape=np.linspace(0.5, 1.5, period))
    f = prof.factors(k + 1)
    assert f[k] == prof.shape[k % period]


def test_default_profile_shape():
    prof = default_profile(21600)
    assert prof.shape.size == 21600
    assert 0.55 < prof.shape.min() < prof.shape.max() < 1.45
    k = np.arange(21600)
    expected = 1 + 0.3 * np.sin(2 * np.pi * k / 21600 - np.pi / 2) + 0.1 * np.sin(4 * np.pi * k / 21600)
    np.testing.assert_allclose(prof.shape, expected, atol=1e-12)


def test_profile_validation(tmp_path):
    with pytest.raises(ValueError):
        LoadProfile(shape=(1.0, -0.2))
    with pytest.raises(ValueError):
        LoadProfile(shape=(1.0,), noise_sigma=-1)
    p = tmp_path / "p.json"
    p.write_text(json.dumps({"shape": [1.0, 1.1], "noise_sigma": 0.02}))
    prof = load_profile(p)
    assert prof.noise_sigma == 0.02 and prof.shape.tolist() == [1.0, 1.1]
    p.write_text(json.dumps({"shape": [1.0], "colour": 1}))
    with pytest.raises(ValueError, match="unknown"):
        load_profile(p)
