from dataclasses import replace

import numpy as np
import pytest

from gridshield.attackgen import (
    ATTACK_KINDS,
    AttackEvent,
    AttackScenario,
    Column,
    LabeledDataset,
    expected_attack_fraction,
    low_ii_candidates,
    make_cmfdi,
    make_dataset,
    make_mdos,
    make_mfdi,
    make_mfdi_mdos,
    make_mitm,
    place_events,
)
from gridshield.detector import CrossLayerEnsemble, EnsembleConfig
from gridshield.eval import score
from gridshield.sestimator import compute_ii, estimate, measurement_sigmas, projection_matrix

# attacked-sample counts reported for one 21600-sample day
REFERENCE_COUNTS = {"mfdi": 1103, "mdos": 7330, "mfdi_mdos": 4861, "mitm": 7330}


def _changed(ds, clean):
    """Boolean (samples, columns) map of features that differ from clean."""
    base = np.hstack([clean.channel(c.channel)[:, [c.measurement]] for c in ds.columns])
    return ds.features != base


def test_scenario_validation():
    with pytest.raises(ValueError):
        AttackScenario("ddos")
    with pytest.raises(ValueError):
        AttackScenario("mfdi", attack_fraction=1.0)
    with pytest.raises(ValueError):
        AttackScenario("mdos", burst_length=0)
    with pytest.raises(ValueError):
        AttackScenario("mdos", severity=(0.5, 2.0))
    sc = AttackScenario("c_mfdi")
    assert sc.severity_range == (1.2, 2.0) and sc.targets == 2 and sc.burst == 1
    assert AttackScenario("mdos").severity_range == (2.0, 7.0)
    assert AttackScenario("mitm", severity=3.0).severity_range == (3.0, 3.0)


def test_too_many_targets(clean_short):
    with pytest.raises(ValueError, match="targets_per_event"):
        make_mfdi(clean_short, AttackScenario("mfdi", targets_per_event=1000))
    with pytest.raises(ValueError, match="targets_per_event"):
        make_mdos(clean_short, None, AttackScenario("mdos", targets_per_event=15))


def test_kind_mismatch(clean_short):
    with pytest.raises(ValueError):
        make_mfdi(clean_short, AttackScenario("mdos"))


def test_place_events_renewal():
    rng = np.random.default_rng(0)
    ev = place_events(1000, 0.2, 10, rng)
    starts = [s for s, _ in ev]
    assert starts == sorted(starts)
    for (s0, l0), (s1, _) in zip(ev, ev[1:]):
        assert s1 >= s0 + l0
    assert all(s + L <= 1000 for s, L in ev)


@pytest.mark.parametrize("kind", ["mfdi", "mdos", "mfdi_mdos", "mitm"])
def test_attack_fraction_over_ten_runs(clean_day, kind):
    fracs = [make_dataset(clean_day, AttackScenario(kind, seed=s)).attacked_count / len(clean_day) for s in range(10)]
    assert np.mean(fracs) == pytest.approx(expected_attack_fraction(AttackScenario(kind)), abs=0.01)
    # the reported counts for one day sit inside the same band
    assert np.mean(fracs) == pytest.approx(REFERENCE_COUNTS[kind] / 21600, abs=0.01)


def test_expected_fraction_closed_form():
    assert expected_attack_fraction(AttackScenario("mfdi")) == pytest.approx(0.05)
    assert expected_attack_fraction(AttackScenario("mdos")) == pytest.approx(10 / 29)
    assert expected_attack_fraction(AttackScenario("mfdi_mdos")) == pytest.approx(5.5 / 24.5)


@pytest.mark.parametrize("kind", ATTACK_KINDS)
def test_determinism(clean_short, kind):
    a = make_dataset(clean_short, AttackScenario(kind, seed=3))
    b = make_dataset(clean_short, AttackScenario(kind, seed=3))
    c = make_dataset(clean_short, AttackScenario(kind, seed=4))
    assert a.features.tobytes() == b.features.tobytes()
    assert np.array_equal(a.labels, b.labels)
    assert not np.array_equal(a.labels, c.labels)


@pytest.mark.parametrize("kind", ATTACK_KINDS)
def test_label_soundness(clean_short, kind):
    ds = make_dataset(clean_short, AttackScenario(kind, seed=1))
    assert ds.attacked_count == int(ds.labels.sum())
    assert np.array_equal(ds.events_mask(), ds.labels)
    changed = _changed(ds, clean_short).any(axis=1)
    assert np.array_equal(changed, ds.labels == 1)


def test_layouts(clean_short, case14):
    d = case14.meas_dim
    cross = make_dataset(clean_short, AttackScenario("mfdi", seed=1))
    pc = make_dataset(clean_short, AttackScenario("mitm", seed=1))
    assert cross.features.shape[1] == 3 * d and cross.layout == "cross"
    assert cross.channels == ("sg", "iat", "td")
    assert pc.features.shape[1] == d and pc.layout == "pc" and pc.channels == ("pc",)
    assert cross.select("sg").features.shape[1] == d
    with pytest.raises(KeyError):
        pc.select("sg")
    sample = cross[5]
    assert sample.index == 5 and sample.features.shape == (3 * d,)


def test_null_attacks(clean_short):
    mf = make_mfdi(clean_short, AttackScenario("mfdi", fdi_magnitude=0.0, severity=1.0, seed=2))
    assert mf.scenario.is_null and mf.attacked_count > 0
    assert not _changed(mf, clean_short).any()
    mi = make_mitm(clean_short, AttackScenario("mitm", severity=1.0, seed=2))
    assert mi.scenario.is_null and mi.attacked_count > 0
    assert not _changed(mi, clean_short).any()


def test_mfdi_containment(clean_short, case14):
    ds = make_mfdi(clean_short, AttackScenario("mfdi", seed=5))
    ch = _changed(ds, clean_short)
    d = case14.meas_dim
    for ev in ds.events:
        k = ev.start
        assert ev.length == 1
        assert set(np.flatnonzero(ch[k, :d])) == set(ev.measurements)
        owner_links = set(np.flatnonzero(np.isin(case14.owner_buses, ev.buses)))
        for block in (1, 2):
            assert set(np.flatnonzero(ch[k, block * d:(block + 1) * d])) == owner_links
        assert 2.0 <= ev.severity <= 7.0


def test_mfdi_magnitude(clean_short, case14):
    ds = make_mfdi(clean_short, AttackScenario("mfdi", seed=5))
    d = case14.meas_dim
    for ev in ds.events[:20]:
        k, meas = ev.start, np.asarray(ev.measurements)
        clean = clean_short.sg[k, meas]
        delta = np.abs(ds.features[k, meas] - clean)
        expect = 10 * case14.sigmas[meas] * np.maximum(np.abs(clean), 1e-3)
        np.testing.assert_allclose(delta, expect, rtol=1e-9)
        # IAT shrinks, TD grows on the owner links
        links = np.flatnonzero(np.isin(case14.owner_buses, ev.buses))
        assert np.all(ds.features[k, d + links] < clean_short.iat[k, links])
        assert np.all(ds.features[k, 2 * d + links] > clean_short.td[k, links])


def test_mdos_structure(clean_short, case14):
    ds = make_mdos(clean_short, None, AttackScenario("mdos", seed=6))
    ch = _changed(ds, clean_short)
    d = case14.meas_dim
    for ev in ds.events:
        assert len(ev.buses) == 3
        assert ev.length == 10 or ev.start + ev.length == len(ds)
        rows = slice(ev.start, ev.start + ev.length)
        victims = np.isin(case14.owner_buses, ev.buses)
        for block in range(3):
            cols = ch[rows, block * d:(block + 1) * d]
            assert not cols[:, ~victims].any()
            if block:
                assert cols[:, victims].all()
        # stale values: every victim meter holds its pre-event reading
        held = clean_short.sg[max(ev.start - 1, 0), victims]
        assert np.all(ds.features[rows, :d][:, victims] == held)


def test_mdos_burst_one(clean_short):
    ds = make_mdos(clean_short, None, AttackScenario("mdos", burst_length=1, seed=6))
    assert all(ev.length == 1 for ev in ds.events)
    assert ds.attacked_count == len(ds.events)


def test_mixture_degenerates_to_mfdi(clean_short):
    mix = make_mfdi_mdos(clean_short, None, AttackScenario("mfdi_mdos", mfdi_probability=1.0, seed=9))
    ref = make_mfdi(clean_short, AttackScenario("mfdi", targets_per_event=4, seed=9))
    assert np.array_equal(mix.features, ref.features)
    assert np.array_equal(mix.labels, ref.labels)


def test_mixture_partition(clean_day):
    ds = make_mfdi_mdos(clean_day, None, AttackScenario("mfdi_mdos", seed=9))
    tags = set(ds.attack_kind[ds.labels == 1])
    assert tags == {"mfdi", "mdos"}
    assert set(ds.attack_kind[ds.labels == 0]) == {""}
    mfdi = [ev for ev in ds.events if ev.kind == "mfdi"]
    mdos = [ev for ev in ds.events if ev.kind == "mdos"]
    assert all(len(ev.measurements) == 4 for ev in mfdi)
    assert all(len(ev.buses) == 4 for ev in mdos)
    assert 0.4 < len(mfdi) / len(ds.events) < 0.6


def test_cmfdi_targets_low_ii(case14, clean_short):
    cand = low_ii_candidates(case14)
    z0 = case14.h(case14.solve_dc(case14.base_loads))
    ii = compute_ii(np.diag(projection_matrix(case14, measurement_sigmas(case14, z0))))
    assert np.all(ii[cand] < np.median(ii))
    assert len(cand) >= 0.2 * case14.meas_dim


def test_cmfdi_injection_in_range_space(case14, clean_short):
    ds = make_cmfdi(clean_short, case14, AttackScenario("c_mfdi", seed=2))
    d = case14.meas_dim
    q, _ = np.linalg.qr(case14.H)
    for ev in ds.events[:25]:
        k = ev.start
        a = ds.features[k, :d] - clean_short.sg[k]
        assert np.linalg.norm(a - q @ (q.T @ a)) <= 1e-9 * np.linalg.norm(a)
        sig = measurement_sigmas(case14, clean_short.sg[k])
        before = estimate(case14, clean_short.sg[k], sig).j_cme
        after = estimate(case14, ds.features[k, :d], sig).j_cme
        assert abs(after - before) <= 1e-6 * before
        assert 1.2 <= ev.severity <= 2.0


def test_se_detects_cmfdi_less_than_mfdi(case14, clean_short):
    from gridshield.sestimator import detect_stream

    rates = {}
    for kind in ("mfdi", "c_mfdi"):
        ds = make_dataset(clean_short, AttackScenario(kind, seed=4))
        hit, _, _ = detect_stream(case14, ds.select("sg").features[ds.labels == 1])
        rates[kind] = hit.mean()
    assert rates["c_mfdi"] < rates["mfdi"]


def test_mitm_only_pc(clean_short, case14):
    ds = make_mitm(clean_short, AttackScenario("mitm", seed=7))
    ch = _changed(ds, clean_short)
    for ev in ds.events:
        assert len(ev.buses) == 1
        rows = slice(ev.start, ev.start + ev.length)
        victims = np.isin(case14.owner_buses, ev.buses)
        assert not ch[rows][:, ~victims].any()
        np.testing.assert_allclose(
            ds.features[rows][:, victims], clean_short.pc[rows][:, victims] * ev.severity
        )


def test_sg_only_detector_blind_to_mitm(clean_day, case14):
    mitm = make_mitm(clean_day, AttackScenario("mitm", seed=7))
    # grid measurements of the same day carry no trace of the MITM events
    sg = LabeledDataset(
        features=clean_day.sg,
        labels=mitm.labels,
        attack_kind=mitm.attack_kind,
        columns=tuple(Column("sg", c.bus, c.measurement, c.label) for c in mitm.columns),
        layout="cross",
    )
    ens = CrossLayerEnsemble(EnsembleConfig(eta=7.0), sg.bus_groups()).fit(sg.features[:1800], sg.labels[:1800])
    log = ens.run(sg.features[1800:12600])
    s = score(log.predicted, sg.labels[1800:12600])
    assert s.recall < 5.0


def test_event_round_trip():
    ev = AttackEvent("mdos", 3, 10, (1, 4), (0, 5, 9), 3.5, (10.0,))
    assert AttackEvent.from_dict(ev.to_dict()) == ev


def test_dataset_validation():
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((3, 2)), np.array([0, 1, 2]), np.array(["", "", ""]),
                       (Column("sg", 1, 0, "a"), Column("sg", 1, 1, "b")), "cross")
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((3, 1)), np.zeros(3), np.array(["", "", ""]),
                       (Column("sg", 1, 0, "a"), Column("sg", 1, 1, "b")), "cross")


def test_column_names(case14):
    from gridshield.attackgen import columns_for

    cols = columns_for(case14, ("sg", "td"))
    assert len(cols) == 2 * case14.meas_dim
    c = cols[0]
    assert Column.parse(c.name, c.measurement) == c
    assert c.name.startswith("sg:")
