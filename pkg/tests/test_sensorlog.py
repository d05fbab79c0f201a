import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aedtrace import sensorlog as sl
from aedtrace import simtrip


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def _registry_doc(n_aeds=6):
    doc = simtrip.default_registry_doc()
    doc["aeds"] = doc["aeds"][:n_aeds]
    return doc


# ---------------------------------------------------------------- registry


def test_registry_of_six_aeds(tmp_path):
    path = _write(tmp_path / "reg.json", json.dumps(_registry_doc()))
    reg = sl.load_registry(path)
    assert len(reg.aeds) == 6
    assert reg.aed("AED3").building_id == "B2"


def test_empty_registry_is_valid():
    reg = sl.parse_registry({"aeds": [], "buildings": []})
    assert reg.aeds == [] and reg.buildings == []


def test_overlapping_bssids_rejected():
    doc = _registry_doc()
    doc["buildings"][1]["bssids"].append(doc["buildings"][0]["bssids"][0].upper())
    with pytest.raises(sl.RegistryError, match="belongs to both"):
        sl.parse_registry(doc)


def test_duplicate_aed_id_rejected():
    doc = _registry_doc()
    doc["aeds"][1] = dict(doc["aeds"][1], id=doc["aeds"][0]["id"])
    with pytest.raises(sl.RegistryError, match="duplicate AED id"):
        sl.parse_registry(doc)


def test_shared_beacon_rejected():
    doc = _registry_doc()
    doc["aeds"][1] = dict(doc["aeds"][1], beacon=doc["aeds"][0]["beacon"])
    with pytest.raises(sl.RegistryError, match="share a beacon"):
        sl.parse_registry(doc)


def test_bad_coordinates_rejected():
    doc = _registry_doc()
    doc["aeds"][0] = dict(doc["aeds"][0], lat=91.0)
    with pytest.raises(sl.RegistryError, match="invalid coordinates"):
        sl.parse_registry(doc)


def test_altitude_is_accepted_and_kept():
    doc = _registry_doc(1)
    doc["aeds"][0]["altitude"] = 42.5
    reg = sl.parse_registry(doc)
    assert reg.aeds[0].altitude == 42.5
    assert sl.parse_registry(sl.registry_to_dict(reg)) == reg


def test_registry_round_trip():
    reg = sl.parse_registry(_registry_doc())
    assert sl.parse_registry(sl.registry_to_dict(reg)) == reg


# ------------------------------------------------------------------ survey


@pytest.mark.parametrize("raw", [(2, 4, 1, 4, 4), (1, 1, 1, 1, 1), (4, 5, 5, 5, 5)])
def test_valid_surveys(raw):
    assert sl.validate_survey(raw).answers() == tuple(raw)


@pytest.mark.parametrize("raw,msg", [
    ((5, 3, 3, 3, 3), "q1 out of range"),
    ((0, 3, 3, 3, 3), "q1 out of range"),
    ((1, 6, 3, 3, 3), "q2 out of range"),
    ((1, 3, 3, 3, 0), "q5 out of range"),
    ((1, 3, 3, 3), "expected 5"),
    ((1, 2.5, 3, 3, 3), "integer"),
])
def test_invalid_surveys(raw, msg):
    with pytest.raises(sl.SurveyError, match=msg):
        sl.validate_survey(raw)


# ------------------------------------------------------------------ streams


def test_reordered_rows_sorted_with_warning(tmp_path):
    path = _write(tmp_path / "accel.csv", "t_ms,x_g,y_g,z_g\n20,0.0,0.0,1.0\n0,0.1,0.0,1.0\n10,0.2,0.0,1.0\n")
    stream, warns = sl.read_stream_csv("accel", path)
    assert stream.t.tolist() == [0, 10, 20]
    assert stream.columns["x_g"].tolist() == [0.1, 0.2, 0.0]
    assert any("reordered" in w for w in warns)


def test_duplicate_timestamps_keep_first(tmp_path):
    path = _write(tmp_path / "baro.csv", "t_ms,hpa\n0,1000.0\n1000,1001.0\n1000,1002.0\n2000,1003.0\n")
    stream, warns = sl.read_stream_csv("baro", path)
    assert stream.t.tolist() == [0, 1000, 2000]
    assert stream.columns["hpa"].tolist() == [1000.0, 1001.0, 1003.0]
    assert any("duplicate" in w for w in warns)


def test_wifi_keeps_distinct_bssids_at_same_time(tmp_path):
    text = "t_ms,bssid,rssi_dbm\n0,AA:BB:CC:00:00:01,-60\n0,aa:bb:cc:00:00:02,-61\n0,aa:bb:cc:00:00:01,-70\n"
    stream, warns = sl.read_stream_csv("wifi", _write(tmp_path / "wifi.csv", text))
    assert stream.columns["bssid"].tolist() == ["aa:bb:cc:00:00:01", "aa:bb:cc:00:00:02"]
    assert stream.columns["rssi_dbm"].tolist() == [-60, -61]


def test_malformed_row_reports_line_number(tmp_path):
    path = _write(tmp_path / "gyro.csv", "t_ms,x_rads,y_rads,z_rads\n0,0,0,0\n10,0,zero,0\n")
    with pytest.raises(sl.SensorLogError, match=r"gyro.csv:3"):
        sl.read_stream_csv("gyro", path)


def test_wrong_field_count_reports_line_number(tmp_path):
    path = _write(tmp_path / "baro.csv", "t_ms,hpa\n0,1000.0\n1000\n")
    with pytest.raises(sl.SensorLogError, match=r"baro.csv:3"):
        sl.read_stream_csv("baro", path)


def test_bad_header(tmp_path):
    path = _write(tmp_path / "baro.csv", "time,hpa\n0,1000.0\n")
    with pytest.raises(sl.SensorLogError, match="expected header"):
        sl.read_stream_csv("baro", path)


def test_unknown_label_rejected(tmp_path):
    path = _write(tmp_path / "labels.csv", "t_ms,label\n0,moving\n1000,running\n")
    with pytest.raises(sl.SensorLogError, match="unknown label"):
        sl.read_stream_csv("labels", path)


def test_rate_warning_for_slow_imu():
    s = sl.Stream.from_rows("accel", np.arange(0, 2000, 20), x_g=np.zeros(100), y_g=np.zeros(100), z_g=np.ones(100))
    assert "deviates" in sl.check_rate(s)


def test_rate_within_tolerance_is_silent():
    t = np.arange(0, 100_000, 1000) + np.tile([0, 150], 50)
    s = sl.Stream.from_rows("baro", t, hpa=np.zeros(100))
    assert sl.check_rate(s) is None


# -------------------------------------------------------------------- trips


@pytest.fixture(scope="module")
def simulated(tmp_path_factory, registry_doc):
    script = simtrip.TripScript(
        "T1", "P1", "pre_exam", "map", "AED1", simtrip.BASE_EPOCH_MS, 5,
        [simtrip.Segment("pause", 4), simtrip.Segment("walk", 40), simtrip.Segment("walk", 20, indoor=True)],
    )
    log, _ = simtrip.synthesize(script, registry_doc=registry_doc)
    out = tmp_path_factory.mktemp("trip")
    sl.write_trip(log, out)
    return log, out


def test_load_trip_round_trip(simulated):
    log, out = simulated
    loaded = sl.load_trip(out / "manifest.json")
    assert loaded == log
    assert loaded.warnings == []
    assert all(len(loaded[k]) > 0 for k in sl.REQUIRED_STREAMS)


def test_load_is_idempotent(simulated):
    _, out = simulated
    assert sl.load_trip(out / "manifest.json") == sl.load_trip(out / "manifest.json")


def test_rewrite_is_byte_identical(simulated, tmp_path):
    _, out = simulated
    sl.write_trip(sl.load_trip(out / "manifest.json"), tmp_path)
    for f in sorted(out.iterdir()):
        assert (tmp_path / f.name).read_bytes() == f.read_bytes(), f.name


def test_unknown_target_aed(simulated, tmp_path):
    _, out = simulated
    doc = json.loads((out / "manifest.json").read_text())
    doc["target_aed"] = "AED99"
    _write(tmp_path / "manifest.json", json.dumps(doc))
    reg = simtrip.default_registry()
    with pytest.raises(sl.RegistryError, match="unknown AED"):
        sl.load_trip(tmp_path / "manifest.json", data_dir=out, registry=reg)


def test_missing_stream_file(simulated, tmp_path):
    _, out = simulated
    doc = json.loads((out / "manifest.json").read_text())
    doc["streams"]["gps"] = "nope.csv"
    _write(tmp_path / "manifest.json", json.dumps(doc))
    with pytest.raises(sl.SensorLogError, match="not found"):
        sl.load_trip(tmp_path / "manifest.json", data_dir=out)


def test_sample_before_start_rejected(simulated, tmp_path):
    _, out = simulated
    doc = json.loads((out / "manifest.json").read_text())
    doc["start_t"] += 10_000
    _write(tmp_path / "manifest.json", json.dumps(doc))
    with pytest.raises(sl.SensorLogError, match="precedes trip start_t"):
        sl.load_trip(tmp_path / "manifest.json", data_dir=out)


def test_manifest_rejects_unknown_kind():
    with pytest.raises(sl.SensorLogError, match="session_kind"):
        sl.parse_manifest({"trip_id": "a", "participant_id": "p", "session_kind": "warmup",
                           "target_aed": "AED1", "guidance": "map", "start_t": 0})


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 10**13), finite, finite, finite), min_size=1, max_size=40))
def test_stream_csv_round_trip_is_bit_exact(tmp_path_factory, rows):
    rows = sorted({r[0]: r for r in rows}.values())
    t = [r[0] for r in rows]
    s = sl.Stream.from_rows("accel", t, x_g=[r[1] for r in rows], y_g=[r[2] for r in rows], z_g=[r[3] for r in rows])
    path = tmp_path_factory.mktemp("rt") / "accel.csv"
    sl.write_stream_csv(s, path)
    back, _ = sl.read_stream_csv("accel", path)
    assert back == s
