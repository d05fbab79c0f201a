"""Three-phase trip segmentation and pause accounting.

A trip runs from the manifest ``start_t`` to beacon-verified arrival and is
split into Preparation (initial run of pausing windows), Building Search
(until Wi-Fi confirms the target building) and Indoor AED Search.  All
boundaries are integer milliseconds, so the three phase durations always
sum exactly to the total.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import dsp, pausenet
from .sensorlog import BeaconId, Registry, SensorLog, Stream, TripManifest, atomic_write_text

logger = logging.getLogger(__name__)

WINDOW_MS = dsp.WINDOW_MS


class IncompleteTrip(RuntimeError):
    """No beacon dwell run was found, so the trip has no arrival time."""


@dataclass(frozen=True)
class SegmentConfig:
    beacon_rssi_dbm: float = -70.0
    dwell_s: int = 3
    wifi_rssi_dbm: float = -75.0
    confirm_s: int = 3

    def __post_init__(self):
        for name in ("beacon_rssi_dbm", "wifi_rssi_dbm"):
            v = getattr(self, name)
            if not -120.0 <= v <= 0.0:
                raise ValueError(f"{name}={v} outside [-120, 0] dBm")
        if self.dwell_s < 1 or self.confirm_s < 1:
            raise ValueError("dwell_s and confirm_s must be at least 1 s")


@dataclass
class TripPhases:
    trip_id: str
    start_t: int
    prep_end: int | None
    entry_t: int | None
    arrival_t: int | None
    pause_intervals: list[tuple[int, int]]
    warnings: list[str] = field(default_factory=list)
    manifest: TripManifest | None = field(default=None, compare=False, repr=False)

    @property
    def complete(self) -> bool:
        return self.arrival_t is not None

    @property
    def prep_ms(self) -> int | None:
        return None if not self.complete else self.prep_end - self.start_t

    @property
    def building_search_ms(self) -> int | None:
        return None if not self.complete else self.entry_t - self.prep_end

    @property
    def indoor_ms(self) -> int | None:
        return None if not self.complete else self.arrival_t - self.entry_t

    @property
    def total_ms(self) -> int | None:
        return None if not self.complete else self.arrival_t - self.start_t

    @property
    def pause_ms(self) -> int:
        return sum(b - a for a, b in self.pause_intervals)

    @property
    def D_T(self) -> float | None:
        return None if not self.complete else self.total_ms / 1000.0

    @property
    def D_P(self) -> float:
        return self.pause_ms / 1000.0

    def to_dict(self) -> dict:
        def s1(ms):
            return None if ms is None else round(ms / 1000.0, 1)

        return {
            "trip_id": self.trip_id,
            "complete": self.complete,
            "boundaries_ms": {
                "start_t": self.start_t,
                "prep_end": self.prep_end,
                "entry_t": self.entry_t,
                "arrival_t": self.arrival_t,
            },
            "durations_s": {
                "preparation": s1(self.prep_ms),
                "building_search": s1(self.building_search_ms),
                "indoor_search": s1(self.indoor_ms),
                "D_T": s1(self.total_ms),
                "D_P": s1(self.pause_ms),
            },
            "pause_intervals_ms": [list(iv) for iv in self.pause_intervals],
            "warnings": list(self.warnings),
        }


# ------------------------------------------------------------ run detection


class DwellTracker:
    """Incremental run-length detector over 1 Hz sightings.

    Seconds are counted as ``(t - origin) // 1000``.  A run is broken by a
    second with no qualifying sighting.  ``feed`` returns the timestamp of
    the ``dwell_s``-th qualifying second once reached, else None.
    """

    def __init__(self, rssi_threshold: float, dwell_s: int, origin: int):
        self.threshold = rssi_threshold
        self.dwell_s = dwell_s
        self.origin = origin
        self.last_sec: int | None = None
        self.run = 0
        self.run_start: int | None = None
        self.done_at: int | None = None

    def feed(self, t: int, rssi: float) -> int | None:
        if self.done_at is not None:
            return self.done_at
        if rssi < self.threshold:
            return None
        sec = (int(t) - self.origin) // 1000
        if sec == self.last_sec:
            return None
        if self.last_sec is not None and sec == self.last_sec + 1:
            self.run += 1
        else:
            self.run = 1
            self.run_start = int(t)
        self.last_sec = sec
        if self.run >= self.dwell_s:
            self.done_at = int(t)
        return self.done_at


def _first_run(t: np.ndarray, ok: np.ndarray, need: int, origin: int) -> tuple[int, int] | None:
    """(first qualifying t, need-th qualifying t) of the first run, by second."""
    secs = (t[ok] - origin) // 1000
    times = t[ok]
    if secs.size == 0:
        return None
    uniq, first_idx = np.unique(secs, return_index=True)
    run = 1
    run_start = 0
    if need <= 1:
        return int(times[first_idx[0]]), int(times[first_idx[0]])
    for k in range(1, len(uniq)):
        if uniq[k] == uniq[k - 1] + 1:
            run += 1
        else:
            run = 1
            run_start = k
        if run >= need:
            return int(times[first_idx[run_start]]), int(times[first_idx[k]])
    return None


def detect_arrival(
    beacon: Stream,
    target: BeaconId,
    rssi_threshold: float = -70.0,
    dwell_s: int = 3,
    origin: int | None = None,
) -> int:
    """Time the target beacon completes ``dwell_s`` consecutive strong seconds."""
    if len(beacon) == 0:
        raise IncompleteTrip("beacon stream is empty")
    origin = int(beacon.t[0]) if origin is None else int(origin)
    c = beacon.columns
    ok = (
        (c["uuid"] == target.uuid)
        & (c["major"] == target.major)
        & (c["minor"] == target.minor)
        & (c["rssi_dbm"] >= rssi_threshold)
    )
    run = _first_run(beacon.t, np.asarray(ok, dtype=bool), dwell_s, origin)
    if run is None:
        raise IncompleteTrip(
            f"target beacon never held rssi >= {rssi_threshold} dBm for {dwell_s} consecutive s"
        )
    return run[1]


def detect_entry(
    wifi: Stream,
    bssids: Iterable[str],
    rssi_threshold: float = -75.0,
    confirm_s: int = 3,
    origin: int | None = None,
) -> int | None:
    """Start of the first ``confirm_s``-second run seeing a target BSSID, or None."""
    bssids = {b.lower() for b in bssids}
    if not bssids:
        raise ValueError("building has no BSSIDs")
    if len(wifi) == 0:
        return None
    origin = int(wifi.t[0]) if origin is None else int(origin)
    names = wifi.columns["bssid"]
    ok = np.fromiter((b in bssids for b in names), dtype=bool, count=len(names))
    ok &= wifi.columns["rssi_dbm"] >= rssi_threshold
    run = _first_run(wifi.t, ok, confirm_s, origin)
    return None if run is None else run[0]


def classify_windows(log_or_streams, model: pausenet.PausingModel) -> list[tuple[int, str]]:
    """(window start, predicted label) for every full 2 s IMU window."""
    if isinstance(log_or_streams, SensorLog):
        accel, gyro = log_or_streams["accel"], log_or_streams["gyro"]
    else:
        accel, gyro = log_or_streams
    try:
        windows = dsp.imu_windows(accel, gyro)
    except dsp.SignalError as exc:
        raise ValueError(f"IMU streams too short for pause detection: {exc}") from exc
    labels = pausenet.predict(model, np.vstack([w.features for w in windows]))
    return [(w.start_t, str(lab)) for w, lab in zip(windows, labels)]


def runs_of_pausing(classified: Sequence[tuple[int, str]]) -> list[tuple[int, int]]:
    out: list[tuple[int, int]] = []
    for start, label in classified:
        if label != "pausing":
            continue
        if out and out[-1][1] == start:
            out[-1] = (out[-1][0], start + WINDOW_MS)
        else:
            out.append((start, start + WINDOW_MS))
    return out


def detect_pauses(accel: Stream, gyro: Stream, model: pausenet.PausingModel) -> list[tuple[int, int]]:
    """Maximal runs of pausing windows as [t0, t1) intervals."""
    return runs_of_pausing(classify_windows((accel, gyro), model))


# --------------------------------------------------------------- segmentation


def segment(
    log: SensorLog,
    registry: Registry,
    model: pausenet.PausingModel,
    config: SegmentConfig | None = None,
) -> TripPhases:
    cfg = config or SegmentConfig()
    m = log.manifest
    aed = registry.aed(m.target_aed)
    building = registry.building(aed.building_id)
    start = m.start_t
    warns = list(log.warnings)

    classified = classify_windows(log, model)

    try:
        arrival = detect_arrival(log["beacon"], aed.beacon, cfg.beacon_rssi_dbm, cfg.dwell_s, origin=start)
    except IncompleteTrip as exc:
        warns.append(f"incomplete trip: {exc}")
        return TripPhases(m.trip_id, start, None, None, None, runs_of_pausing(classified), warns, m)

    # Preparation: maximal initial run of pausing windows starting at start_t
    prep_end = start
    for wstart, label in classified:
        if wstart != prep_end or label != "pausing":
            break
        prep_end = wstart + WINDOW_MS
    prep_end = min(prep_end, arrival)

    entry = detect_entry(log["wifi"], building.bssids, cfg.wifi_rssi_dbm, cfg.confirm_s, origin=start)
    if entry is None:
        warns.append("no Wi-Fi confirmation of building entry; entry set to arrival")
        entry = arrival
    entry = min(max(entry, prep_end), arrival)

    # whole windows inside [start, arrival] only, so D_P <= D_T and stays a multiple of 2 s
    inside = [(s, lab) for s, lab in classified if s >= start and s + WINDOW_MS <= arrival]
    pauses = runs_of_pausing(inside)
    return TripPhases(m.trip_id, start, prep_end, entry, arrival, pauses, warns, m)


# ---------------------------------------------------------------- batch CSV

BATCH_COLUMNS = (
    "trip_id", "participant_id", "session_kind", "guidance", "target_aed", "complete",
    "start_t", "prep_end", "entry_t", "arrival_t",
    "prep_s", "building_search_s", "indoor_s", "D_T", "D_P", "n_pauses", "n_warnings",
)


def _sec(ms: int | None) -> str:
    return "" if ms is None else f"{ms / 1000:.3f}"


def batch_rows(phases: Sequence[TripPhases]) -> list[dict]:
    rows = []
    for p in phases:
        m = p.manifest
        rows.append({
            "trip_id": p.trip_id,
            "participant_id": m.participant_id if m else "",
            "session_kind": m.session_kind if m else "",
            "guidance": m.guidance if m else "",
            "target_aed": m.target_aed if m else "",
            "complete": int(p.complete),
            "start_t": p.start_t,
            "prep_end": "" if p.prep_end is None else p.prep_end,
            "entry_t": "" if p.entry_t is None else p.entry_t,
            "arrival_t": "" if p.arrival_t is None else p.arrival_t,
            "prep_s": _sec(p.prep_ms),
            "building_search_s": _sec(p.building_search_ms),
            "indoor_s": _sec(p.indoor_ms),
            "D_T": _sec(p.total_ms),
            "D_P": _sec(p.pause_ms),
            "n_pauses": len(p.pause_intervals),
            "n_warnings": len(p.warnings),
        })
    return rows


def batch_csv(phases: Sequence[TripPhases]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=BATCH_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in batch_rows(phases):
        w.writerow(row)
    return buf.getvalue()


def write_batch_csv(phases: Sequence[TripPhases], path) -> None:
    atomic_write_text(path, batch_csv(phases))


def read_batch_csv(path) -> list[TripPhases]:
    """Rebuild TripPhases (with manifests) from a batch CSV.

    Pause intervals are not stored in the batch file; a single synthetic
    interval of the recorded pause length stands in for them.
    """
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(BATCH_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            start = int(row["start_t"])

            def opt(key):
                return int(row[key]) if row[key] != "" else None

            m = TripManifest(
                trip_id=row["trip_id"],
                participant_id=row["participant_id"],
                session_kind=row["session_kind"],
                target_aed=row["target_aed"],
                guidance=row["guidance"],
                start_t=start,
            )
            pause_ms = int(round(float(row["D_P"]) * 1000)) if row["D_P"] else 0
            pauses = [(start, start + pause_ms)] if pause_ms else []
            out.append(TripPhases(
                row["trip_id"], start, opt("prep_end"), opt("entry_t"), opt("arrival_t"), pauses, [], m
            ))
    return out
