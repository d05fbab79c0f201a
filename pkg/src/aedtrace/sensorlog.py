"""Sensor streams, registries, trip manifests and survey responses.

Streams are stored column-wise as numpy arrays.  Each stream type has a
fixed CSV schema (see ``STREAM_SCHEMAS``); floats are written with
``repr`` so a write/read round trip is bit-exact.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

logger = logging.getLogger(__name__)

G_MS2 = 9.80665
SESSION_KINDS = ("pre_exam", "post_exam_1", "post_exam_2", "routine")
GUIDANCE = ("map", "no_map")
LABELS = ("moving", "pausing")
RATE_TOLERANCE = 0.2

# (column name, python type) after the leading t_ms column
STREAM_SCHEMAS: dict[str, list[tuple[str, type]]] = {
    "accel": [("x_g", float), ("y_g", float), ("z_g", float)],
    "gyro": [("x_rads", float), ("y_rads", float), ("z_rads", float)],
    "gps": [("lat", float), ("lon", float), ("acc_m", float)],
    "wifi": [("bssid", str), ("rssi_dbm", int)],
    "baro": [("hpa", float)],
    "beacon": [("uuid", str), ("major", int), ("minor", int), ("rssi_dbm", int)],
    "labels": [("label", str)],
}

# nominal sample spacing in ms; labels are not rate checked
NOMINAL_SPACING_MS = {"accel": 10, "gyro": 10, "gps": 1000, "wifi": 1000, "baro": 1000, "beacon": 1000}

# columns that, together with t_ms, identify a duplicate row
DEDUP_KEYS = {"wifi": ("bssid",), "beacon": ("uuid", "major", "minor")}

REQUIRED_STREAMS = ("accel", "gyro", "gps", "wifi", "baro", "beacon")


class SensorLogError(ValueError):
    """Raised for unreadable, malformed or inconsistent input files."""


class RegistryError(SensorLogError):
    """Raised when registry contents violate uniqueness or referential rules."""


class SurveyError(ValueError):
    pass


@dataclass(eq=False)
class Stream:
    """One sensor stream: int64 timestamps plus named columns."""

    kind: str
    t: np.ndarray
    columns: dict[str, np.ndarray]

    def __len__(self) -> int:
        return int(self.t.shape[0])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Stream):
            return NotImplemented
        if self.kind != other.kind or not np.array_equal(self.t, other.t):
            return False
        if list(self.columns) != list(other.columns):
            return False
        return all(np.array_equal(self.columns[k], other.columns[k]) for k in self.columns)

    def xyz(self) -> np.ndarray:
        """(n, 3) float array for triaxial streams."""
        names = [name for name, _ in STREAM_SCHEMAS[self.kind]]
        return np.column_stack([self.columns[n] for n in names])

    def select(self, mask: np.ndarray) -> "Stream":
        return Stream(self.kind, self.t[mask], {k: v[mask] for k, v in self.columns.items()})

    @classmethod
    def empty(cls, kind: str) -> "Stream":
        cols = {name: np.array([], dtype=_np_dtype(tp)) for name, tp in STREAM_SCHEMAS[kind]}
        return cls(kind, np.array([], dtype=np.int64), cols)

    @classmethod
    def from_rows(cls, kind: str, t: Sequence[int], **columns) -> "Stream":
        cols = {}
        for name, tp in STREAM_SCHEMAS[kind]:
            cols[name] = np.asarray(columns[name], dtype=_np_dtype(tp))
        return cls(kind, np.asarray(t, dtype=np.int64), cols)


def _np_dtype(tp: type):
    return {float: np.float64, int: np.int64, str: object}[tp]


@dataclass(frozen=True)
class BeaconId:
    uuid: str
    major: int
    minor: int

    def as_dict(self) -> dict:
        return {"uuid": self.uuid, "major": self.major, "minor": self.minor}


@dataclass(frozen=True)
class AedRecord:
    id: str
    name: str
    lat: float
    lon: float
    floor: str
    building_id: str
    beacon: BeaconId
    altitude: float | None = None  # accepted, unused


@dataclass(frozen=True)
class BuildingRecord:
    building_id: str
    bssids: frozenset[str]
    entry_lat: float
    entry_lon: float


class Registry(NamedTuple):
    aeds: list[AedRecord]
    buildings: list[BuildingRecord]

    def aed(self, aed_id: str) -> AedRecord:
        for a in self.aeds:
            if a.id == aed_id:
                return a
        raise RegistryError(f"unknown AED id {aed_id!r}")

    def building(self, building_id: str) -> BuildingRecord:
        for b in self.buildings:
            if b.building_id == building_id:
                return b
        raise RegistryError(f"unknown building id {building_id!r}")


@dataclass(frozen=True)
class TripManifest:
    trip_id: str
    participant_id: str
    session_kind: str
    target_aed: str
    guidance: str
    start_t: int
    streams: dict = field(default_factory=dict, compare=False, hash=False)

    def to_dict(self) -> dict:
        d = {
            "trip_id": self.trip_id,
            "participant_id": self.participant_id,
            "session_kind": self.session_kind,
            "target_aed": self.target_aed,
            "guidance": self.guidance,
            "start_t": self.start_t,
        }
        if self.streams:
            d["streams"] = dict(self.streams)
        return d


@dataclass(frozen=True)
class SurveyResponse:
    trip_id: str
    q1: int
    q2: int
    q3: int
    q4: int
    q5: int

    def answers(self) -> tuple[int, int, int, int, int]:
        return (self.q1, self.q2, self.q3, self.q4, self.q5)


@dataclass(eq=False)
class SensorLog:
    manifest: TripManifest
    streams: dict[str, Stream]
    warnings: list[str] = field(default_factory=list)

    def __getitem__(self, kind: str) -> Stream:
        return self.streams.get(kind) or Stream.empty(kind)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SensorLog):
            return NotImplemented
        return (
            self.manifest == other.manifest
            and sorted(self.streams) == sorted(other.streams)
            and all(self.streams[k] == other.streams[k] for k in self.streams)
        )

    @property
    def labels(self) -> Stream | None:
        return self.streams.get("labels")


# ---------------------------------------------------------------- validation


def validate_survey(raw: Sequence[int], trip_id: str = "") -> SurveyResponse:
    """Range-check five in-app survey answers (Q1 is 1-4, Q2-Q5 are 1-5)."""
    if len(raw) != 5:
        raise SurveyError(f"expected 5 answers, got {len(raw)}")
    vals = []
    for i, v in enumerate(raw, start=1):
        if isinstance(v, bool) or int(v) != v:
            raise SurveyError(f"q{i} must be an integer, got {v!r}")
        v = int(v)
        hi = 4 if i == 1 else 5
        if not 1 <= v <= hi:
            raise SurveyError(f"q{i} out of range: {v} not in [1, {hi}]")
        vals.append(v)
    return SurveyResponse(trip_id, *vals)


def _parse_beacon(d: dict) -> BeaconId:
    return BeaconId(str(d["uuid"]).upper(), int(d["major"]), int(d["minor"]))


def parse_registry(doc: dict) -> Registry:
    """Build and validate registries from an already-decoded JSON document."""
    try:
        aeds = [
            AedRecord(
                id=str(a["id"]),
                name=str(a.get("name", a["id"])),
                lat=float(a["lat"]),
                lon=float(a["lon"]),
                floor=str(a.get("floor", "")),
                building_id=str(a["building_id"]),
                beacon=_parse_beacon(a["beacon"]),
                altitude=None if a.get("altitude") is None else float(a["altitude"]),
            )
            for a in doc.get("aeds", [])
        ]
        buildings = [
            BuildingRecord(
                building_id=str(b["building_id"]),
                bssids=frozenset(str(s).lower() for s in b.get("bssids", [])),
                entry_lat=float(b["entry_point"]["lat"]),
                entry_lon=float(b["entry_point"]["lon"]),
            )
            for b in doc.get("buildings", [])
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise RegistryError(f"registry does not match schema: {exc!r}") from exc

    seen_ids: set[str] = set()
    seen_beacons: dict[BeaconId, str] = {}
    for a in aeds:
        if a.id in seen_ids:
            raise RegistryError(f"duplicate AED id {a.id!r}")
        seen_ids.add(a.id)
        if a.beacon in seen_beacons:
            raise RegistryError(f"AEDs {seen_beacons[a.beacon]!r} and {a.id!r} share a beacon id")
        seen_beacons[a.beacon] = a.id
        if not (-90.0 <= a.lat <= 90.0 and -180.0 <= a.lon <= 180.0):
            raise RegistryError(f"AED {a.id!r} has invalid coordinates ({a.lat}, {a.lon})")

    owner: dict[str, str] = {}
    seen_b: set[str] = set()
    for b in buildings:
        if b.building_id in seen_b:
            raise RegistryError(f"duplicate building id {b.building_id!r}")
        seen_b.add(b.building_id)
        for s in b.bssids:
            if s in owner:
                raise RegistryError(f"BSSID {s} belongs to both {owner[s]!r} and {b.building_id!r}")
            owner[s] = b.building_id
    if buildings:
        for a in aeds:
            if a.building_id not in seen_b:
                raise RegistryError(f"AED {a.id!r} references unknown building {a.building_id!r}")
    return Registry(aeds, buildings)


def load_registry(path: str | os.PathLike) -> Registry:
    """Load AED and building registries from a JSON file."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise SensorLogError(f"registry file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise RegistryError(f"{path}: invalid JSON: {exc}") from exc
    return parse_registry(doc)


def registry_to_dict(reg: Registry) -> dict:
    return {
        "aeds": [
            {
                "id": a.id,
                "name": a.name,
                "lat": a.lat,
                "lon": a.lon,
                "floor": a.floor,
                "building_id": a.building_id,
                "beacon": a.beacon.as_dict(),
                **({"altitude": a.altitude} if a.altitude is not None else {}),
            }
            for a in reg.aeds
        ],
        "buildings": [
            {
                "building_id": b.building_id,
                "bssids": sorted(b.bssids),
                "entry_point": {"lat": b.entry_lat, "lon": b.entry_lon},
            }
            for b in reg.buildings
        ],
    }


def parse_manifest(doc: dict) -> TripManifest:
    try:
        m = TripManifest(
            trip_id=str(doc["trip_id"]),
            participant_id=str(doc["participant_id"]),
            session_kind=str(doc["session_kind"]),
            target_aed=str(doc["target_aed"]),
            guidance=str(doc["guidance"]),
            start_t=int(doc["start_t"]),
            streams=dict(doc.get("streams") or {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SensorLogError(f"manifest does not match schema: {exc!r}") from exc
    if m.session_kind not in SESSION_KINDS:
        raise SensorLogError(f"unknown session_kind {m.session_kind!r}")
    if m.guidance not in GUIDANCE:
        raise SensorLogError(f"unknown guidance {m.guidance!r}")
    return m


# ------------------------------------------------------------------- CSV I/O


def _format_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_stream_csv(stream: Stream, path: str | os.PathLike) -> None:
    names = [name for name, _ in STREAM_SCHEMAS[stream.kind]]
    header = ["t_ms"] + names
    cols = [stream.t.tolist()] + [stream.columns[n].tolist() for n in names]
    lines = [",".join(header)]
    for row in zip(*cols):
        lines.append(",".join(_format_value(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_stream_csv(kind: str, path: str | os.PathLike) -> tuple[Stream, list[str]]:
    """Parse, sort and de-duplicate one stream file.

    Returns the stream and a list of ingestion warnings.
    """
    path = Path(path)
    schema = STREAM_SCHEMAS[kind]
    expected = ["t_ms"] + [n for n, _ in schema]
    warns: list[str] = []
    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise SensorLogError(f"stream file not found: {path}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != expected:
            raise SensorLogError(f"{path}:1: expected header {','.join(expected)}, got {header}")
        ts: list[int] = []
        cols: list[list] = [[] for _ in schema]
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected):
                raise SensorLogError(f"{path}:{lineno}: expected {len(expected)} fields, got {len(row)}")
            try:
                ts.append(int(row[0]))
                for k, (name, tp) in enumerate(schema):
                    cell = row[k + 1]
                    if tp is float:
                        val = float(cell)
                        if not math.isfinite(val):
                            raise ValueError(f"non-finite {name}")
                    elif tp is int:
                        val = int(cell)
                    else:
                        val = cell
                    cols[k].append(val)
            except ValueError as exc:
                raise SensorLogError(f"{path}:{lineno}: malformed row: {exc}") from None
            if kind == "labels" and cols[0][-1] not in LABELS:
                raise SensorLogError(f"{path}:{lineno}: unknown label {cols[0][-1]!r}")

    t = np.asarray(ts, dtype=np.int64)
    columns = {name: np.asarray(c, dtype=_np_dtype(tp)) for (name, tp), c in zip(schema, cols)}
    if kind in ("wifi",):
        columns["bssid"] = np.asarray([s.lower() for s in columns["bssid"]], dtype=object)
    if kind == "beacon":
        columns["uuid"] = np.asarray([s.upper() for s in columns["uuid"]], dtype=object)
    stream = Stream(kind, t, columns)

    if len(t) > 1 and np.any(np.diff(t) < 0):
        order = np.argsort(t, kind="stable")
        stream = stream.select(order)
        warns.append(f"{kind}: reordered rows to non-decreasing timestamps")
    stream, n_dup = _drop_duplicates(stream)
    if n_dup:
        warns.append(f"{kind}: dropped {n_dup} duplicate-timestamp rows (kept first)")
    rate = check_rate(stream)
    if rate:
        warns.append(rate)
    return stream, warns


def _drop_duplicates(stream: Stream) -> tuple[Stream, int]:
    n = len(stream)
    if n < 2:
        return stream, 0
    key_cols = DEDUP_KEYS.get(stream.kind, ())
    seen: set = set()
    keep = np.ones(n, dtype=bool)
    cols = [stream.columns[c] for c in key_cols]
    for i in range(n):
        key = (int(stream.t[i]),) + tuple(c[i] for c in cols)
        if key in seen:
            keep[i] = False
        else:
            seen.add(key)
    dropped = int(n - keep.sum())
    return (stream.select(keep) if dropped else stream), dropped


def check_rate(stream: Stream) -> str | None:
    """Warning text if the median sample spacing is off nominal by >20%."""
    nominal = NOMINAL_SPACING_MS.get(stream.kind)
    if nominal is None or len(stream) < 2:
        return None
    ut = np.unique(stream.t)
    if len(ut) < 2:
        return None
    spacing = float(np.median(np.diff(ut)))
    if abs(spacing / nominal - 1.0) > RATE_TOLERANCE:
        return f"{stream.kind}: median spacing {spacing:g} ms deviates from nominal {nominal} ms by more than 20%"
    return None


def load_trip(
    manifest_path: str | os.PathLike,
    data_dir: str | os.PathLike | None = None,
    registry: Registry | None = None,
) -> SensorLog:
    """Load one trip's manifest and its CSV streams.

    Stream file names come from the manifest's ``streams`` mapping, falling
    back to ``<kind>.csv`` in ``data_dir`` (default: the manifest's folder).
    ``labels.csv`` is optional.  When ``registry`` is supplied the target
    AED must exist in it.
    """
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise SensorLogError(f"manifest not found: {manifest_path}") from None
    except json.JSONDecodeError as exc:
        raise SensorLogError(f"{manifest_path}: invalid JSON: {exc}") from exc
    manifest = parse_manifest(doc)
    if registry is not None:
        registry.aed(manifest.target_aed)

    base = Path(data_dir) if data_dir is not None else manifest_path.parent
    streams: dict[str, Stream] = {}
    warns: list[str] = []
    for kind in REQUIRED_STREAMS + ("labels",):
        fname = manifest.streams.get(kind, f"{kind}.csv")
        fpath = base / fname
        if kind == "labels" and not fpath.exists():
            continue
        stream, w = read_stream_csv(kind, fpath)
        warns.extend(w)
        if len(stream) and int(stream.t[0]) < manifest.start_t:
            raise SensorLogError(
                f"{fpath}: first sample {int(stream.t[0])} precedes trip start_t {manifest.start_t}"
            )
        streams[kind] = stream
    for w in warns:
        logger.warning("%s: %s", manifest.trip_id, w)
    return SensorLog(manifest, streams, warns)


def write_trip(log: SensorLog, out_dir: str | os.PathLike) -> Path:
    """Write a SensorLog as manifest.json plus one CSV per stream."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = {kind: f"{kind}.csv" for kind in log.streams}
    for kind, stream in log.streams.items():
        write_stream_csv(stream, out / names[kind])
    doc = log.manifest.to_dict()
    doc["streams"] = names
    atomic_write_text(out / "manifest.json", dump_json(doc))
    return out / "manifest.json"


# ------------------------------------------------------------------- helpers


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
