import json

import numpy as np
import pytest

from aedtrace import sensorlog as sl
from aedtrace import simtrip
from aedtrace.simtrip import Segment


def _script(segs, seed=1, **kw):
    return simtrip.TripScript("T1", "P01", "pre_exam", "map", "AED1", simtrip.BASE_EPOCH_MS, seed, segs, **kw)


BASIC = [Segment("walk", 30), Segment("pause", 10), Segment("walk", 20, indoor=True)]


def test_labels_mirror_script(registry_doc):
    log, truth = simtrip.synthesize(_script(BASIC, tail_s=0), registry_doc=registry_doc)
    lab = log.labels
    rel = (lab.t - simtrip.BASE_EPOCH_MS) // 1000
    pausing = rel[lab.columns["label"] == "pausing"]
    assert pausing.tolist() == list(range(30, 40))
    assert truth["pause_intervals"] == [[simtrip.BASE_EPOCH_MS + 30_000, simtrip.BASE_EPOCH_MS + 40_000]]
    assert truth["D_T"] == 60.0 and truth["D_P"] == 10.0


def test_truth_partition(registry_doc):
    segs = [Segment("pause", 5), Segment("walk", 40), Segment("walk", 20, indoor=True)]
    truth = simtrip.ground_truth(_script(segs))
    assert (truth["prep_ms"], truth["building_search_ms"], truth["indoor_ms"]) == (5000, 40_000, 20_000)
    assert truth["prep_ms"] + truth["building_search_ms"] + truth["indoor_ms"] == 1000 * truth["D_T"]


def test_same_seed_byte_identical(tmp_path, registry_doc):
    for name in ("a", "b"):
        log, truth = simtrip.synthesize(_script(BASIC, seed=9), registry_doc=registry_doc)
        simtrip.write_simulated_trip(log, truth, tmp_path / name)
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "truth.json" in files and "labels.csv" in files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_different_seed_differs(registry_doc):
    a, _ = simtrip.synthesize(_script(BASIC, seed=1), registry_doc=registry_doc)
    b, _ = simtrip.synthesize(_script(BASIC, seed=2), registry_doc=registry_doc)
    assert a["accel"] != b["accel"]


def test_beacon_path_loss_at_one_metre():
    assert simtrip.beacon_rssi(1.0) == -59.0
    assert simtrip.beacon_rssi(10.0) == pytest.approx(-81.0)


def test_streams_pass_rate_checks(tmp_path, registry_doc):
    log, truth = simtrip.synthesize(_script(BASIC), registry_doc=registry_doc)
    simtrip.write_simulated_trip(log, truth, tmp_path)
    loaded = sl.load_trip(tmp_path / "manifest.json", registry=simtrip.default_registry())
    assert loaded.warnings == []
    assert all(sl.check_rate(loaded[k]) is None for k in sl.REQUIRED_STREAMS)


def test_beacon_only_near_aed(registry_doc):
    log, truth = simtrip.synthesize(_script(BASIC), registry_doc=registry_doc)
    beacon = log["beacon"]
    assert len(beacon) > 0
    assert beacon.t.min() >= truth["entry_t"] - 30_000
    assert beacon.columns["rssi_dbm"].max() > -70


def test_wifi_confirms_target_building_after_entry(registry_doc):
    log, truth = simtrip.synthesize(_script(BASIC), registry_doc=registry_doc)
    own = set(next(b for b in registry_doc["buildings"] if b["building_id"] == "B1")["bssids"])
    w = log["wifi"]
    strong = (w.columns["rssi_dbm"] >= -75) & np.isin(w.columns["bssid"], list(own))
    assert w.t[strong].min() >= truth["entry_t"]


@pytest.mark.parametrize("segs,msg", [
    ([], "no segments"),
    ([Segment("walk", 10)], "never enters"),
    ([Segment("walk", 10, indoor=True), Segment("walk", 10)], "outdoor segment after"),
    ([Segment("walk", 10), Segment("pause", 10, indoor=True)], "end with a walk"),
    ([Segment("walk", 0), Segment("walk", 10, indoor=True)], "positive integer"),
    ([Segment("run", 5), Segment("walk", 10, indoor=True)], "unknown kind"),
])
def test_invalid_scripts(segs, msg):
    with pytest.raises(simtrip.ScriptError, match=msg):
        _script(segs).validate()


def test_script_dict_round_trip():
    s = _script(BASIC)
    assert simtrip.TripScript.from_dict(json.loads(json.dumps(s.to_dict()))) == s


def test_local_latlon_round_trip():
    lat, lon = simtrip.local_to_latlon(120.0, -45.0, 35.0, 135.0)
    x, y = simtrip.latlon_to_local(lat, lon, 35.0, 135.0)
    assert (x, y) == pytest.approx((120.0, -45.0), abs=0.02)  # 7-decimal degrees ~ 1 cm


def test_cohort_factor_point_six():
    c = simtrip.synthesize_cohort(20, 0.6, seed=7)
    assert len(c.members) == 20
    assert abs(c.truth_median_delta_D_T() - 0.4) < 0.06
    assert [m.group for m in c.members[:4]] == ["map", "no_map", "map", "no_map"]


def test_cohort_factor_one_is_jitter_only():
    c = simtrip.synthesize_cohort(30, 1.0, seed=3, jitter_sigma=0.0)
    assert all(m.truth_delta_D_T == 0.0 for m in c.members)


def test_cohort_deterministic():
    a = simtrip.synthesize_cohort(6, 0.6, seed=5)
    b = simtrip.synthesize_cohort(6, 0.6, seed=5)
    assert [s.to_dict() for s in a.scripts()] == [s.to_dict() for s in b.scripts()]


@pytest.mark.parametrize("n,f", [(1, 0.6), (5, 0.0), (5, 1.2)])
def test_cohort_rejects_bad_args(n, f):
    with pytest.raises(ValueError):
        simtrip.synthesize_cohort(n, f, seed=0)


def test_corpus_imbalance(corpus):
    labels = [w.label for w in corpus]
    assert len(labels) >= 1300
    frac = labels.count("pausing") / len(labels)
    assert 0.10 <= frac <= 0.18


def test_survey_and_sus_rows_validate():
    c = simtrip.synthesize_cohort(4, 0.6, seed=1)
    rows = simtrip.survey_rows(c, seed=2)
    assert len(rows) == 4 * 3 * 2
    for r in rows:
        sl.validate_survey([r[f"q{i}"] for i in range(1, 6)])
    for r in simtrip.sus_rows(c, seed=2):
        assert sum(1 for k in r if k.startswith("item")) == 10
