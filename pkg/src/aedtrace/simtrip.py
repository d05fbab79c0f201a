"""Synthetic, fully labelled retrieval trips.

A trip is scripted as an ordered list of walk/pause segments with integer
durations, each flagged outdoor or indoor.  The walker leaves the exam
start point, reaches the target building's entry point at the end of the
last outdoor segment, and reaches the AED at the end of the script.  A
short standing tail is appended so the beacon can be held; the tail is
labelled ``pausing`` but lies after arrival and is not part of the trip.

Ground truth (phase boundaries, pause intervals, D_T, D_P) follows
directly from the script.  Every random draw comes from one
``numpy.random.Generator`` seeded from the script seed, so the same script
always produces the same bytes.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .sensorlog import (
    Registry, SensorLog, Stream, TripManifest, atomic_write_text, dump_json,
    parse_registry, write_trip,
)

EARTH_RADIUS_M = 6_371_008.8
BASE_EPOCH_MS = 1_700_000_000_000
DAY_MS = 86_400_000
BEACON_UUID = "F7826DA6-4FA2-4E98-8024-BC5B71E0893E"


class ScriptError(ValueError):
    pass


@dataclass(frozen=True)
class Segment:
    kind: str  # "walk" | "pause"
    duration_s: int
    indoor: bool = False


@dataclass
class TripScript:
    trip_id: str
    participant_id: str
    session_kind: str
    guidance: str
    target_aed: str
    start_t: int
    seed: int
    segments: list[Segment]
    tail_s: int = 6

    def validate(self) -> None:
        if not self.segments:
            raise ScriptError("script has no segments")
        seen_indoor = False
        for i, s in enumerate(self.segments):
            if s.kind not in ("walk", "pause"):
                raise ScriptError(f"segment {i}: unknown kind {s.kind!r}")
            if int(s.duration_s) != s.duration_s or s.duration_s <= 0:
                raise ScriptError(f"segment {i}: duration must be a positive integer, got {s.duration_s}")
            if seen_indoor and not s.indoor:
                raise ScriptError(f"segment {i}: outdoor segment after building entry")
            seen_indoor |= s.indoor
        if not seen_indoor:
            raise ScriptError("script never enters the building (entry after arrival)")
        last = self.segments[-1]
        if last.kind != "walk" or last.duration_s < 5:
            raise ScriptError("script must end with a walk of at least 5 s to the AED")
        if self.tail_s < 0:
            raise ScriptError("tail_s must be >= 0")

    @property
    def duration_s(self) -> int:
        return sum(s.duration_s for s in self.segments)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["segments"] = [asdict(s) for s in self.segments]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TripScript":
        d = dict(d)
        d["segments"] = [Segment(**s) for s in d["segments"]]
        return cls(**d)


@dataclass(frozen=True)
class SimConfig:
    gait_amp_g: float = 0.3
    sway_amp_g: float = 0.08
    step_hz_range: tuple[float, float] = (1.8, 2.2)
    walk_accel_noise_g: float = 0.05
    pause_accel_noise_g: float = 0.02
    gyro_walk_amp: float = 0.6
    gyro_walk_noise: float = 0.05
    gyro_pause_noise: float = 0.01
    # looking around while paused: slow sway and turning, drawn per pause
    fidget_prob: float = 0.5
    fidget_accel_g: float = 0.06
    fidget_gyro_rads: float = 0.35
    fidget_hz_range: tuple[float, float] = (0.3, 1.2)
    speed_range: tuple[float, float] = (1.2, 1.6)
    gps_sigma_m: float = 3.0
    gps_indoor_sigma_m: float = 10.0
    wifi_mean_dbm: float = -60.0
    wifi_sigma_dbm: float = 4.0
    wifi_leak_dbm: float = -85.0
    wifi_leak_s: int = 10
    wifi_other_dbm: float = -72.0
    beacon_tx_dbm: float = -59.0
    path_loss_exp: float = 2.2
    beacon_sigma_dbm: float = 2.0
    beacon_range_m: float = 30.0
    beacon_min_d_m: float = 0.5
    baro_hpa: float = 1013.25
    baro_sigma: float = 0.05
    imu_hz: int = 100
    imu_decimals: int = 5

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        for k in ("step_hz_range", "speed_range", "fidget_hz_range"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


# ------------------------------------------------------------------ geometry


def default_registry_doc(origin=(35.0, 135.0)) -> dict:
    """Six AEDs in three buildings around an exam start point at ``origin``."""
    lat0, lon0 = origin
    buildings, aeds = [], []
    # entry points (east, north) in metres from the start point
    entries = {"B1": (50.0, 0.0), "B2": (-10.0, 55.0), "B3": (-45.0, -30.0)}
    aed_no = 0
    for bi, (bid, (ex, ey)) in enumerate(entries.items(), start=1):
        elat, elon = local_to_latlon(ex, ey, lat0, lon0)
        # AEDs sit 15 m past the entrance, +-45 deg off the approach bearing,
        # so no outdoor route comes within beacon-verification range of them
        bearing = math.atan2(ey, ex)
        aed_offsets = [(15.0 * math.cos(bearing + a), 15.0 * math.sin(bearing + a)) for a in (-math.pi / 4, math.pi / 4)]
        buildings.append({
            "building_id": bid,
            "bssids": [f"02:00:00:0{bi}:00:{k:02x}" for k in range(1, 5)],
            "entry_point": {"lat": elat, "lon": elon},
        })
        for k, (ox, oy) in enumerate(aed_offsets, start=1):
            aed_no += 1
            alat, alon = local_to_latlon(ex + ox, ey + oy, lat0, lon0)
            aeds.append({
                "id": f"AED{aed_no}",
                "name": f"{bid} AED {k}",
                "lat": alat,
                "lon": alon,
                "floor": "1F" if k == 1 else "2F",
                "building_id": bid,
                "beacon": {"uuid": BEACON_UUID, "major": bi, "minor": k},
            })
    return {"aeds": aeds, "buildings": buildings, "exam_start": {"lat": lat0, "lon": lon0}}


def default_registry() -> Registry:
    return parse_registry(default_registry_doc())


def local_to_latlon(x_east: float, y_north: float, lat0: float, lon0: float) -> tuple[float, float]:
    lat = lat0 + math.degrees(y_north / EARTH_RADIUS_M)
    lon = lon0 + math.degrees(x_east / (EARTH_RADIUS_M * math.cos(math.radians(lat0))))
    return round(lat, 7), round(lon, 7)


def latlon_to_local(lat: float, lon: float, lat0: float, lon0: float) -> tuple[float, float]:
    y = math.radians(lat - lat0) * EARTH_RADIUS_M
    x = math.radians(lon - lon0) * EARTH_RADIUS_M * math.cos(math.radians(lat0))
    return x, y


def _detour_path(a: np.ndarray, b: np.ndarray, length: float) -> tuple[np.ndarray, float]:
    """Apex of an isosceles A-apex-B path of the given length (>= |AB|)."""
    ab = b - a
    dist = float(np.hypot(*ab))
    half = max(length, dist) / 2.0
    h = math.sqrt(max(half * half - (dist / 2.0) ** 2, 0.0))
    normal = np.array([-ab[1], ab[0]]) / dist if dist > 0 else np.array([0.0, 1.0])
    return (a + b) / 2.0 + h * normal, 2.0 * half


def _along(a, apex, b, half, s):
    """Positions at arc lengths ``s`` on the polyline a -> apex -> b."""
    s = np.clip(s, 0.0, 2.0 * half)
    first = s <= half
    f1 = np.where(first, s / half if half else 1.0, 1.0)
    f2 = np.where(first, 0.0, (s - half) / half if half else 1.0)
    p = a + f1[:, None] * (apex - a)
    return np.where(first[:, None], p, apex + f2[:, None] * (b - apex))


def beacon_rssi(d_m, noise=0.0, config: SimConfig | None = None):
    """Log-distance path loss: tx - 10 n log10(d) + noise."""
    cfg = config or SimConfig()
    d = np.maximum(np.asarray(d_m, dtype=np.float64), cfg.beacon_min_d_m)
    out = cfg.beacon_tx_dbm - 10.0 * cfg.path_loss_exp * np.log10(d) + noise
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------- synthesis


def _segment_times(script: TripScript):
    """(start_ms, end_ms, Segment) relative to trip start."""
    out, t = [], 0
    for s in script.segments:
        out.append((t, t + 1000 * s.duration_s, s))
        t += 1000 * s.duration_s
    return out


def ground_truth(script: TripScript) -> dict:
    script.validate()
    t0 = script.start_t
    segs = _segment_times(script)
    prep = 0
    for a, b, s in segs:
        if s.kind != "pause":
            break
        prep = b
    entry = next(a for a, b, s in segs if s.indoor)
    arrival = segs[-1][1]
    pauses = [[t0 + a, t0 + b] for a, b, s in segs if s.kind == "pause"]
    d_p = sum(b - a for a, b in pauses)
    return {
        "trip_id": script.trip_id,
        "participant_id": script.participant_id,
        "session_kind": script.session_kind,
        "guidance": script.guidance,
        "start_t": t0,
        "prep_end": t0 + prep,
        "entry_t": t0 + entry,
        "arrival_t": t0 + arrival,
        "pause_intervals": pauses,
        "prep_ms": prep,
        "building_search_ms": entry - prep,
        "indoor_ms": arrival - entry,
        "D_T": arrival / 1000.0,
        "D_P": d_p / 1000.0,
    }


def imu_streams(
    segments: Sequence[Segment], start_t: int, tail_s: int, rng: np.random.Generator, cfg: SimConfig
) -> tuple[Stream, Stream, Stream]:
    """Accel, gyro and 1 Hz label streams for a walk/pause sequence."""
    step = 1000 // cfg.imu_hz
    total_ms = 1000 * (sum(s.duration_s for s in segments) + tail_s)
    rel = np.arange(0, total_ms + 1, step, dtype=np.int64)
    acc = np.zeros((rel.size, 3))
    gyr = np.zeros((rel.size, 3))
    acc[:, 2] = 1.0
    bounds, t = [], 0
    for s in segments:
        bounds.append((t, t + 1000 * s.duration_s, s.kind))
        t += 1000 * s.duration_s
    bounds.append((t, total_ms + step, "pause"))  # standing tail
    for a, b, kind in bounds:
        idx = np.nonzero((rel >= a) & (rel < b))[0]
        if idx.size == 0:
            continue
        tt = (rel[idx] - a) / 1000.0
        if kind == "walk":
            f = rng.uniform(*cfg.step_hz_range)
            ph = rng.uniform(0, 2 * math.pi)
            w = 2 * math.pi * f * tt + ph
            acc[idx, 2] += cfg.gait_amp_g * np.sin(w)
            acc[idx, 0] += cfg.sway_amp_g * np.sin(w / 2.0)
            acc[idx, 1] += cfg.sway_amp_g * np.cos(w)
            gyr[idx, 0] += cfg.gyro_walk_amp * np.sin(w)
            gyr[idx, 1] += 0.5 * cfg.gyro_walk_amp * np.sin(w / 2.0)
            acc[idx] += rng.normal(0.0, cfg.walk_accel_noise_g, (idx.size, 3))
            gyr[idx] += rng.normal(0.0, cfg.gyro_walk_noise, (idx.size, 3))
        else:
            if rng.uniform() < cfg.fidget_prob:
                w = 2 * math.pi * rng.uniform(*cfg.fidget_hz_range) * tt + rng.uniform(0, 2 * math.pi)
                acc[idx, 0] += cfg.fidget_accel_g * np.sin(w)
                acc[idx, 2] += 0.5 * cfg.fidget_accel_g * np.cos(w)
                gyr[idx, 2] += cfg.fidget_gyro_rads * np.sin(w)
            acc[idx] += rng.normal(0.0, cfg.pause_accel_noise_g, (idx.size, 3))
            gyr[idx] += rng.normal(0.0, cfg.gyro_pause_noise, (idx.size, 3))
    acc = np.round(acc, cfg.imu_decimals)
    gyr = np.round(gyr, cfg.imu_decimals)
    t_abs = start_t + rel
    accel = Stream.from_rows("accel", t_abs, x_g=acc[:, 0], y_g=acc[:, 1], z_g=acc[:, 2])
    gyro = Stream.from_rows("gyro", t_abs, x_rads=gyr[:, 0], y_rads=gyr[:, 1], z_rads=gyr[:, 2])

    n_sec = total_ms // 1000
    lab = np.empty(n_sec, dtype=object)
    lab[:] = "pausing"
    for a, b, kind in bounds[:-1]:
        lab[a // 1000 : b // 1000] = "pausing" if kind == "pause" else "moving"
    labels = Stream.from_rows("labels", start_t + 1000 * np.arange(n_sec, dtype=np.int64), label=lab)
    return accel, gyro, labels


def _positions(script, registry_doc, rng, cfg, rel_ms):
    """Local (x, y) metres at times ``rel_ms`` plus the AED and entry points."""
    lat0 = registry_doc["exam_start"]["lat"]
    lon0 = registry_doc["exam_start"]["lon"]
    aed = next(a for a in registry_doc["aeds"] if a["id"] == script.target_aed)
    bld = next(b for b in registry_doc["buildings"] if b["building_id"] == aed["building_id"])
    start = np.zeros(2)
    entry = np.array(latlon_to_local(bld["entry_point"]["lat"], bld["entry_point"]["lon"], lat0, lon0))
    target = np.array(latlon_to_local(aed["lat"], aed["lon"], lat0, lon0))

    segs = _segment_times(script)
    # arc length reached at each segment end, per phase (outdoor / indoor)
    speeds = [rng.uniform(*cfg.speed_range) if s.kind == "walk" else 0.0 for _, _, s in segs]
    phases = {}
    for indoor, a_pt, b_pt in ((False, start, entry), (True, entry, target)):
        walk_s = sum(s.duration_s * v for (_, _, s), v in zip(segs, speeds) if s.indoor == indoor)
        need = float(np.hypot(*(b_pt - a_pt)))
        scale = max(1.0, need / walk_s) if walk_s > 0 else 1.0
        apex, length = _detour_path(a_pt, b_pt, walk_s * scale)
        phases[indoor] = (a_pt, apex, b_pt, length / 2.0, scale)

    pos = np.empty((rel_ms.size, 2))
    arc = {False: 0.0, True: 0.0}
    end_ms = segs[-1][1]
    for (a, b, s), v in zip(segs, speeds):
        idx = np.nonzero((rel_ms >= a) & (rel_ms < b))[0]
        a_pt, apex, b_pt, half, scale = phases[s.indoor]
        sarc = arc[s.indoor] + (v * scale * (rel_ms[idx] - a) / 1000.0 if s.kind == "walk" else 0.0)
        pos[idx] = _along(a_pt, apex, b_pt, half, np.atleast_1d(sarc))
        if s.kind == "walk":
            arc[s.indoor] += v * scale * s.duration_s
    pos[rel_ms >= end_ms] = target
    return pos, entry, target, (lat0, lon0)


def synthesize(
    script: TripScript, config: SimConfig | None = None, registry_doc: dict | None = None
) -> tuple[SensorLog, dict]:
    """Generate one trip's SensorLog and its ground truth."""
    cfg = config or SimConfig()
    doc = registry_doc or default_registry_doc()
    script.validate()
    truth = ground_truth(script)
    rng = np.random.default_rng(script.seed)

    accel, gyro, labels = imu_streams(script.segments, script.start_t, script.tail_s, rng, cfg)

    total_ms = 1000 * (script.duration_s + script.tail_s)
    phase = int(rng.integers(0, 1000))
    rel = np.arange(phase, total_ms, 1000, dtype=np.int64)
    t_abs = script.start_t + rel
    pos, _, target, (lat0, lon0) = _positions(script, doc, rng, cfg, rel)
    entry_rel = truth["entry_t"] - script.start_t
    indoor = rel >= entry_rel

    # GPS
    sig = np.where(indoor, cfg.gps_indoor_sigma_m, cfg.gps_sigma_m)
    noisy = pos + rng.normal(0.0, 1.0, pos.shape) * sig[:, None]
    lat = np.round(lat0 + np.degrees(noisy[:, 1] / EARTH_RADIUS_M), 7)
    lon = np.round(lon0 + np.degrees(noisy[:, 0] / (EARTH_RADIUS_M * math.cos(math.radians(lat0)))), 7)
    acc_m = np.where(indoor, 20.0, 5.0)
    gps = Stream.from_rows("gps", t_abs, lat=lat, lon=lon, acc_m=acc_m)

    # Wi-Fi: target building from entry on, weak leak just before, other buildings outdoors
    aed = next(a for a in doc["aeds"] if a["id"] == script.target_aed)
    own = next(b for b in doc["buildings"] if b["building_id"] == aed["building_id"])
    others = [s for b in doc["buildings"] if b is not own for s in b["bssids"]]
    w_t, w_b, w_r = [], [], []
    for k, tr in enumerate(rel):
        if indoor[k]:
            for bssid in own["bssids"]:
                w_t.append(t_abs[k]); w_b.append(bssid)
                w_r.append(int(round(rng.normal(cfg.wifi_mean_dbm, cfg.wifi_sigma_dbm))))
        else:
            if entry_rel - tr <= 1000 * cfg.wifi_leak_s:
                w_t.append(t_abs[k]); w_b.append(own["bssids"][0])
                w_r.append(int(round(rng.normal(cfg.wifi_leak_dbm, 2.0))))
            if others:
                bssid = others[int(rng.integers(0, len(others)))]
                w_t.append(t_abs[k]); w_b.append(bssid)
                w_r.append(int(round(rng.normal(cfg.wifi_other_dbm, cfg.wifi_sigma_dbm))))
    wifi = Stream.from_rows("wifi", w_t, bssid=w_b, rssi_dbm=w_r)

    # beacon
    d = np.hypot(*(pos - target).T)
    near = d <= cfg.beacon_range_m
    rssi = np.round(beacon_rssi(d, rng.normal(0.0, cfg.beacon_sigma_dbm, d.shape), cfg)).astype(np.int64)
    b = aed["beacon"]
    n_near = int(near.sum())
    beacon = Stream.from_rows(
        "beacon", t_abs[near], uuid=[b["uuid"].upper()] * n_near, major=[b["major"]] * n_near,
        minor=[b["minor"]] * n_near, rssi_dbm=rssi[near],
    )

    baro = Stream.from_rows("baro", t_abs, hpa=np.round(cfg.baro_hpa + rng.normal(0.0, cfg.baro_sigma, rel.size), 3))

    manifest = TripManifest(
        trip_id=script.trip_id,
        participant_id=script.participant_id,
        session_kind=script.session_kind,
        target_aed=script.target_aed,
        guidance=script.guidance,
        start_t=script.start_t,
    )
    streams = {"accel": accel, "gyro": gyro, "gps": gps, "wifi": wifi, "baro": baro, "beacon": beacon,
               "labels": labels}
    return SensorLog(manifest, streams), truth


# ------------------------------------------------------------------ scripts


def random_exam_segments(rng: np.random.Generator) -> list[Segment]:
    """A plausible first-visit exam: prep, outdoor search with pauses, indoor search."""
    segs = []
    prep = int(rng.integers(0, 9))
    if prep:
        segs.append(Segment("pause", prep))
    n_out = int(rng.integers(2, 5))
    for k in range(n_out):
        segs.append(Segment("walk", int(rng.integers(18, 36))))
        if k < n_out - 1:
            segs.append(Segment("pause", int(rng.integers(3, 11))))
    n_in = int(rng.integers(1, 4))
    for k in range(n_in):
        segs.append(Segment("walk", int(rng.integers(8, 18)), indoor=True))
        segs.append(Segment("pause", int(rng.integers(3, 9)), indoor=True))
    segs.append(Segment("walk", int(rng.integers(6, 12)), indoor=True))
    return segs


def scale_segments(segs: Sequence[Segment], factor: float) -> list[Segment]:
    """Multiply every duration by ``factor``, rounding to whole seconds.

    Durations stay at least 1 s and the final approach walk at least 5 s.
    """
    out = [replace(s, duration_s=max(1, int(round(s.duration_s * factor)))) for s in segs]
    out[-1] = replace(out[-1], duration_s=max(5, out[-1].duration_s))
    return out


@dataclass
class CohortMember:
    participant_id: str
    group: str
    pre: TripScript
    post: TripScript
    jitter: float

    @property
    def truth_delta_D_T(self) -> float:
        pre = ground_truth(self.pre)["D_T"]
        post = ground_truth(self.post)["D_T"]
        return (pre - post) / pre


@dataclass
class Cohort:
    members: list[CohortMember]
    factor: float
    seed: int
    registry_doc: dict = field(default_factory=default_registry_doc)

    def scripts(self) -> list[TripScript]:
        return [s for m in self.members for s in (m.pre, m.post)]

    def truth_median_delta_D_T(self) -> float:
        return float(np.median([m.truth_delta_D_T for m in self.members]))


def synthesize_cohort(
    n_participants: int,
    improvement_factor: float,
    seed: int,
    jitter_sigma: float = 0.1,
    target_aed: str = "AED1",
) -> Cohort:
    """Scripts for a pre/post exam cohort.

    Post-exam durations are the participant's pre-exam durations scaled by
    ``improvement_factor`` times a per-participant log-normal jitter.
    Participants alternate between the map and no-map groups.
    """
    if n_participants < 2:
        raise ValueError("a cohort needs at least 2 participants")
    if not 0.0 < improvement_factor <= 1.0:
        raise ValueError("improvement_factor must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    members = []
    width = max(2, len(str(n_participants)))
    for i in range(n_participants):
        pid = f"P{i + 1:0{width}d}"
        group = "map" if i % 2 == 0 else "no_map"
        segs = random_exam_segments(rng)
        jitter = float(np.exp(rng.normal(0.0, jitter_sigma)))
        post_segs = scale_segments(segs, improvement_factor * jitter)
        seeds = rng.integers(0, 2**31 - 1, size=2)
        pre = TripScript(f"{pid}-pre", pid, "pre_exam", group, target_aed,
                         BASE_EPOCH_MS + i * DAY_MS, int(seeds[0]), segs)
        post = TripScript(f"{pid}-post1", pid, "post_exam_1", group, target_aed,
                          BASE_EPOCH_MS + (i + 14) * DAY_MS + 3_600_000, int(seeds[1]), post_segs)
        members.append(CohortMember(pid, group, pre, post, jitter))
    return Cohort(members, improvement_factor, seed)


def labelled_corpus_scripts(min_windows: int = 1312, seed: int = 0, pause_range=(3, 10), walk_range=(14, 36)):
    """IMU-only scripts whose 2 s windows are roughly 14% pausing."""
    rng = np.random.default_rng(seed)
    scripts = []
    total_s = 0
    k = 0
    while total_s // 2 < min_windows:
        segs = []
        for _ in range(int(rng.integers(4, 9))):
            segs.append(Segment("walk", int(rng.integers(*walk_range))))
            segs.append(Segment("pause", int(rng.integers(*pause_range))))
        segs.append(Segment("walk", int(rng.integers(*walk_range))))
        scripts.append((BASE_EPOCH_MS + k * DAY_MS, int(rng.integers(0, 2**31 - 1)), segs))
        total_s += sum(s.duration_s for s in segs)
        k += 1
    return scripts


def labelled_corpus(min_windows: int = 1312, seed: int = 0, config: SimConfig | None = None):
    """Labelled feature windows from simulated IMU traces."""
    from . import dsp

    cfg = config or SimConfig()
    out = []
    for start_t, s, segs in labelled_corpus_scripts(min_windows, seed):
        accel, gyro, labels = imu_streams(segs, start_t, 0, np.random.default_rng(s), cfg)
        out.extend(w for w in dsp.imu_windows(accel, gyro, labels) if w.label is not None)
    return out


# ------------------------------------------------------------- side outputs


def survey_rows(cohort: Cohort, seed: int) -> list[dict]:
    """Synthetic in-app survey answers: each participant revisits three AEDs."""
    rng = np.random.default_rng(seed)
    aed_ids = [a["id"] for a in cohort.registry_doc["aeds"]]
    rows = []
    for i, m in enumerate(cohort.members):
        visited = rng.choice(len(aed_ids), size=3, replace=False)
        for j, a in enumerate(sorted(int(v) for v in visited)):
            first = [int(rng.integers(1, 4)), int(rng.integers(3, 6)), int(rng.integers(1, 3)),
                     int(rng.integers(3, 6)), int(rng.integers(3, 6))]
            second = list(first)
            second[0] = min(4, first[0] + int(rng.integers(0, 3)))
            for q in range(1, 5):
                second[q] = int(np.clip(first[q] + rng.integers(-1, 2), 1, 5))
            base = BASE_EPOCH_MS + i * DAY_MS + (j + 1) * 3_600_000
            for visit, (t, ans) in enumerate(((base, first), (base + 3 * DAY_MS, second))):
                rows.append({
                    "participant_id": m.participant_id, "group": m.group, "aed_id": aed_ids[a],
                    "visit_t": t, **{f"q{k + 1}": v for k, v in enumerate(ans)},
                })
    return rows


def sus_rows(cohort: Cohort, seed: int) -> list[dict]:
    rng = np.random.default_rng(seed + 1)
    rows = []
    for m in cohort.members:
        items = {}
        for k in range(1, 11):
            items[f"item{k}"] = int(rng.integers(4, 6)) if k % 2 == 1 else int(rng.integers(1, 3))
        rows.append({"participant_id": m.participant_id, **items})
    return rows


def session_events(log: SensorLog, registry_doc: dict, truth: dict, survey=(2, 4, 1, 4, 4)) -> list[dict]:
    """Replayable app events for one exam trip.

    The participant first reports positions while approaching the exam
    start point, then the countdown runs, then the trip's beacon sightings
    are replayed, and finally the survey is submitted.
    """
    lat0 = registry_doc["exam_start"]["lat"]
    lon0 = registry_doc["exam_start"]["lon"]
    t0 = log.manifest.start_t
    ev = [{"type": "exam_selected", "t": t0 - 60_000, "session_kind": log.manifest.session_kind,
           "aed_id": log.manifest.target_aed}]
    for k, dist in enumerate((60.0, 35.0, 20.0, 10.0)):
        lat, lon = local_to_latlon(0.0, dist, lat0, lon0)
        ev.append({"type": "position", "t": t0 - 50_000 + 10_000 * k, "lat": lat, "lon": lon})
    countdown = 3
    for k in range(countdown + 1):
        ev.append({"type": "tick", "t": t0 - 1000 * (countdown - k)})
    b = log["beacon"]
    for i in range(len(b)):
        ev.append({
            "type": "beacon", "t": int(b.t[i]), "uuid": str(b.columns["uuid"][i]),
            "major": int(b.columns["major"][i]), "minor": int(b.columns["minor"][i]),
            "rssi": int(b.columns["rssi_dbm"][i]),
        })
    end = int(b.t[-1]) if len(b) else truth["arrival_t"]
    ev.append({"type": "tick", "t": end + 1000})
    ev.append({"type": "survey_submitted", "t": end + 20_000, "answers": list(survey)})
    ev.sort(key=lambda e: e["t"])
    return ev


def write_simulated_trip(log: SensorLog, truth: dict, out_dir) -> Path:
    path = write_trip(log, out_dir)
    atomic_write_text(Path(out_dir) / "truth.json", dump_json(truth))
    return path
