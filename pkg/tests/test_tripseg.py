import numpy as np
import pytest

from aedtrace import simtrip, tripseg
from aedtrace.sensorlog import BeaconId, Stream

TARGET = BeaconId(simtrip.BEACON_UUID, 1, 1)
OTHER = BeaconId(simtrip.BEACON_UUID, 1, 2)


def _beacon(rssi, beacon=TARGET, t0=0):
    n = len(rssi)
    return Stream.from_rows(
        "beacon", t0 + 1000 * np.arange(n),
        uuid=[beacon.uuid] * n, major=[beacon.major] * n, minor=[beacon.minor] * n, rssi_dbm=rssi,
    )


def _wifi(rows):
    t, b, r = zip(*rows) if rows else ((), (), ())
    return Stream.from_rows("wifi", list(t), bssid=list(b), rssi_dbm=list(r))


def _script(segments, trip_id="T", kind="pre_exam", pid="P01", seed=3):
    return simtrip.TripScript(trip_id, pid, kind, "map", "AED1", simtrip.BASE_EPOCH_MS, seed, segments)


W, P = "walk", "pause"


# ------------------------------------------------------------------ arrival


def test_arrival_at_fourth_second():
    assert tripseg.detect_arrival(_beacon([-80, -65, -64, -66, -60]), TARGET, -70, 3, origin=0) == 3000


def test_arrival_earliest_possible():
    assert tripseg.detect_arrival(_beacon([-50] * 10), TARGET, -70, 3, origin=0) == 2000


def test_arrival_never():
    with pytest.raises(tripseg.IncompleteTrip):
        tripseg.detect_arrival(_beacon([-80] * 10), TARGET, -70, 3)


def test_arrival_empty_stream():
    with pytest.raises(tripseg.IncompleteTrip):
        tripseg.detect_arrival(Stream.empty("beacon"), TARGET)


def test_arrival_ignores_other_beacons():
    with pytest.raises(tripseg.IncompleteTrip):
        tripseg.detect_arrival(_beacon([-40] * 10, beacon=OTHER), TARGET)


def test_missing_second_breaks_run():
    s = Stream.from_rows("beacon", [0, 1000, 3000, 4000, 5000],
                         uuid=[TARGET.uuid] * 5, major=[1] * 5, minor=[1] * 5, rssi_dbm=[-60] * 5)
    assert tripseg.detect_arrival(s, TARGET, -70, 3, origin=0) == 5000


def test_dwell_tracker_agrees_with_batch():
    rng = np.random.default_rng(0)
    for _ in range(200):
        rssi = rng.integers(-85, -55, size=30).tolist()
        try:
            batch = tripseg.detect_arrival(_beacon(rssi), TARGET, -70, 3, origin=0)
        except tripseg.IncompleteTrip:
            batch = None
        tr = tripseg.DwellTracker(-70, 3, origin=0)
        inc = None
        for i, r in enumerate(rssi):
            inc = tr.feed(1000 * i, r)
        assert inc == batch


def test_arrival_monotone_in_threshold_and_dwell():
    rng = np.random.default_rng(1)
    for _ in range(100):
        rssi = rng.integers(-90, -50, size=40).tolist()
        prev = -1
        for thr in (-85, -80, -75, -70, -65, -60):
            try:
                a = tripseg.detect_arrival(_beacon(rssi), TARGET, thr, 3, origin=0)
            except tripseg.IncompleteTrip:
                a = float("inf")
            assert a >= prev
            prev = a
        prev = -1
        for dwell in (1, 2, 3, 4, 5):
            try:
                a = tripseg.detect_arrival(_beacon(rssi), TARGET, -70, dwell, origin=0)
            except tripseg.IncompleteTrip:
                a = float("inf")
            assert a >= prev
            prev = a


# -------------------------------------------------------------------- entry


def test_entry_confirmed_at_ninety_seconds():
    rows = [(1000 * s, "aa:00:00:00:00:01", -90) for s in range(0, 90)]
    rows += [(1000 * s, "aa:00:00:00:00:01", -60) for s in range(90, 95)]
    rows = sorted({r[0]: r for r in rows}.values())
    assert tripseg.detect_entry(_wifi(rows), ["AA:00:00:00:00:01"], -75, 3, origin=0) == 90_000


def test_entry_short_burst_not_enough():
    rows = [(0, "aa", -60), (1000, "aa", -60), (5000, "aa", -60), (6000, "aa", -60), (7000, "aa", -60)]
    assert tripseg.detect_entry(_wifi(rows), ["aa"], -75, 3, origin=0) == 5000


def test_entry_other_building_only():
    rows = [(1000 * s, "bb", -50) for s in range(20)]
    assert tripseg.detect_entry(_wifi(rows), ["aa"], -75, 3) is None


def test_entry_requires_bssids():
    with pytest.raises(ValueError):
        tripseg.detect_entry(_wifi([]), [])


def test_degenerate_entry_set_to_arrival(registry_doc, registry, model):
    script = _script([simtrip.Segment(W, 40), simtrip.Segment(W, 20, indoor=True)])
    log, truth = simtrip.synthesize(script, registry_doc=registry_doc)
    log.streams["wifi"] = Stream.empty("wifi")
    ph = tripseg.segment(log, registry, model)
    assert ph.entry_t == ph.arrival_t
    assert any("entry set to arrival" in w for w in ph.warnings)


# ------------------------------------------------------------------- pauses


def test_single_pause_interval(registry_doc, model):
    script = _script([simtrip.Segment(W, 30), simtrip.Segment(P, 10), simtrip.Segment(W, 20, indoor=True)])
    script.tail_s = 0
    log, truth = simtrip.synthesize(script, registry_doc=registry_doc)
    pauses = tripseg.detect_pauses(log["accel"], log["gyro"], model)
    t0 = script.start_t
    assert len(pauses) == 1
    a, b = pauses[0]
    assert abs(a - (t0 + 30_000)) <= 2000 and abs(b - (t0 + 40_000)) <= 2000


def test_all_walking_has_no_pauses(registry_doc, model):
    script = _script([simtrip.Segment(W, 30), simtrip.Segment(W, 20, indoor=True)])
    script.tail_s = 0
    log, _ = simtrip.synthesize(script, registry_doc=registry_doc)
    assert tripseg.detect_pauses(log["accel"], log["gyro"], model) == []


def test_all_standing_is_one_interval(model):
    rng = np.random.default_rng(0)
    segs = [simtrip.Segment(P, 20)]
    acc, gyr, _ = simtrip.imu_streams(segs, 0, 0, rng, simtrip.SimConfig(fidget_prob=0.0))
    pauses = tripseg.detect_pauses(acc, gyr, model)
    assert len(pauses) == 1
    assert pauses[0][1] - pauses[0][0] >= 18_000


def test_too_short_streams(model):
    acc = Stream.from_rows("accel", [0, 10], x_g=[0, 0], y_g=[0, 0], z_g=[1, 1])
    gyr = Stream.from_rows("gyro", [0, 10], x_rads=[0, 0], y_rads=[0, 0], z_rads=[0, 0])
    with pytest.raises(ValueError):
        tripseg.detect_pauses(acc, gyr, model)


# ------------------------------------------------------------- segmentation


def test_three_phases_match_truth(registry_doc, registry, model):
    script = _script([simtrip.Segment(P, 6), simtrip.Segment(W, 80), simtrip.Segment(W, 40, indoor=True)])
    log, truth = simtrip.synthesize(script, registry_doc=registry_doc)
    ph = tripseg.segment(log, registry, model)
    assert abs(ph.prep_ms - 6000) <= 2000
    assert abs(ph.building_search_ms - 80_000) <= 2000
    assert abs(ph.indoor_ms - 40_000) <= 2000
    assert ph.prep_ms + ph.building_search_ms + ph.indoor_ms == ph.total_ms


def test_mid_stride_start_has_no_prep(registry_doc, registry, model):
    script = _script([simtrip.Segment(W, 50), simtrip.Segment(W, 20, indoor=True)])
    log, _ = simtrip.synthesize(script, registry_doc=registry_doc)
    assert tripseg.segment(log, registry, model).prep_ms == 0


def test_incomplete_trip(registry_doc, registry, model):
    script = _script([simtrip.Segment(W, 30), simtrip.Segment(W, 20, indoor=True)])
    log, _ = simtrip.synthesize(script, registry_doc=registry_doc)
    log.streams["beacon"] = Stream.empty("beacon")
    ph = tripseg.segment(log, registry, model)
    assert not ph.complete and ph.D_T is None
    assert any("incomplete" in w for w in ph.warnings)


def test_invariants_over_random_trips(registry_doc, registry, model):
    rng = np.random.default_rng(5)
    for i in range(8):
        script = _script(simtrip.random_exam_segments(rng), trip_id=f"T{i}", seed=i)
        log, _ = simtrip.synthesize(script, registry_doc=registry_doc)
        ph = tripseg.segment(log, registry, model)
        assert ph.start_t <= ph.prep_end <= ph.entry_t <= ph.arrival_t
        assert ph.prep_ms + ph.building_search_ms + ph.indoor_ms == ph.total_ms
        assert 0 <= ph.D_P <= ph.D_T
        assert ph.pause_ms % 2000 == 0
        for (a, b), (c, _) in zip(ph.pause_intervals, ph.pause_intervals[1:]):
            assert b < c
        for a, b in ph.pause_intervals:
            assert ph.start_t <= a < b <= ph.arrival_t
            assert (b - a) % 2000 == 0
        assert tripseg.segment(log, registry, model) == ph


def test_batch_csv_round_trip(tmp_path, registry_doc, registry, model):
    rng = np.random.default_rng(2)
    phases = []
    for i in range(3):
        script = _script(simtrip.random_exam_segments(rng), trip_id=f"T{i}", seed=i)
        log, _ = simtrip.synthesize(script, registry_doc=registry_doc)
        phases.append(tripseg.segment(log, registry, model))
    log.streams["beacon"] = Stream.empty("beacon")
    phases.append(tripseg.segment(log, registry, model))
    path = tmp_path / "segments.csv"
    tripseg.write_batch_csv(phases, path)
    back = tripseg.read_batch_csv(path)
    for a, b in zip(phases, back):
        assert (a.start_t, a.prep_end, a.entry_t, a.arrival_t) == (b.start_t, b.prep_end, b.entry_t, b.arrival_t)
        assert a.pause_ms == b.pause_ms
        assert a.manifest.participant_id == b.manifest.participant_id
    assert tripseg.batch_csv(back).splitlines()[1:] != []


def test_to_dict_rounds_to_tenths():
    ph = tripseg.TripPhases("T", 0, 3_040, 89_550, 129_310, [(0, 4000)])
    d = ph.to_dict()["durations_s"]
    assert d == {"preparation": 3.0, "building_search": 86.5, "indoor_search": 39.8, "D_T": 129.3, "D_P": 4.0}


def test_config_validation():
    with pytest.raises(ValueError):
        tripseg.SegmentConfig(beacon_rssi_dbm=10)
    with pytest.raises(ValueError):
        tripseg.SegmentConfig(dwell_s=0)
