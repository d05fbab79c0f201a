"""Replayable state machine for exam and routine hunting sessions.

States::

    Registered --exam_selected(pre_exam)--> PreExamPending
    PreExamPending / Approaching --position--> Approaching (> 15 m) | ReadyToStart (<= 15 m)
    ReadyToStart --tick--> Countdown --tick after countdown--> Hunting
    Hunting --beacon dwell--> Verified --tick/position--> SurveyPending
    Verified / SurveyPending --survey_submitted--> Completed
    Completed --exam_selected(post exam)--> Approaching
    Completed --exam_selected(routine)--> Countdown

Radio events (ticks, positions, beacons) that have no meaning in the
current state are ignored.  Requests that break a gating rule, such as a
routine hunt before the pre-exam or a survey before verification, are
rejected with a reason and leave the state unchanged.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

from . import metrics
from .sensorlog import BeaconId, Registry, RegistryError, SurveyError, validate_survey
from .tripseg import DwellTracker

EARTH_RADIUS_KM = 6371.0088
EXAM_KINDS = ("pre_exam", "post_exam_1", "post_exam_2")
EVENT_TYPES = ("exam_selected", "position", "tick", "beacon", "survey_submitted")


class State(str, Enum):
    REGISTERED = "Registered"
    PRE_EXAM_PENDING = "PreExamPending"
    APPROACHING = "Approaching"
    READY_TO_START = "ReadyToStart"
    COUNTDOWN = "Countdown"
    HUNTING = "Hunting"
    VERIFIED = "Verified"
    SURVEY_PENDING = "SurveyPending"
    COMPLETED = "Completed"


class TransitionRejected(Exception):
    def __init__(self, state: State, event: dict, reason: str):
        super().__init__(f"{event.get('type')} rejected in {state.value}: {reason}")
        self.state = state
        self.event = event
        self.reason = reason


def distance(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Haversine great-circle distance in metres."""
    for lat, lon in ((lat1, lon1), (lat2, lon2)):
        if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0) or math.isnan(lat) or math.isnan(lon):
            raise ValueError(f"invalid coordinate ({lat}, {lon})")
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2.0 * EARTH_RADIUS_KM * 1000.0 * math.asin(min(1.0, math.sqrt(a)))


@dataclass(frozen=True)
class SessionConfig:
    start_lat: float
    start_lon: float
    ready_radius_m: float = 15.0
    countdown_s: int = 3
    beacon_rssi_dbm: float = -70.0
    dwell_s: int = 3
    points_per_hunt: int = 1
    exam_targets: dict = field(
        default_factory=lambda: {"pre_exam": "AED1", "post_exam_1": "AED1", "post_exam_2": "AED2"}
    )


@dataclass
class SessionContext:
    state: State = State.REGISTERED
    session_kind: str | None = None
    target_aed: str | None = None
    countdown_start: int | None = None
    hunt_start: int | None = None
    elapsed_ms: int = 0
    survival: float | None = None
    points: int = 0
    exams_done: dict = field(default_factory=lambda: {k: False for k in EXAM_KINDS})
    last_distance_m: float | None = None
    survey: list[int] | None = None
    verified_at: int | None = None
    hunts_completed: int = 0

    def to_dict(self) -> dict:
        return {
            "state": self.state.value,
            "session_kind": self.session_kind,
            "target_aed": self.target_aed,
            "elapsed_ms": self.elapsed_ms,
            "survival": self.survival,
            "points": self.points,
            "exams_done": dict(self.exams_done),
            "survey": self.survey,
            "verified_at": self.verified_at,
            "hunts_completed": self.hunts_completed,
        }


class SessionMachine:
    """One participant's session flow; feed events in arrival order."""

    def __init__(self, registry: Registry, config: SessionConfig):
        self.registry = registry
        self.config = config
        self.ctx = SessionContext()
        self._tracker: DwellTracker | None = None
        self._beacon: BeaconId | None = None

    @property
    def state(self) -> State:
        return self.ctx.state

    def _reject(self, event, reason):
        raise TransitionRejected(self.ctx.state, event, reason)

    def _begin(self, kind: str, aed_id: str) -> None:
        c = self.ctx
        self._beacon = self.registry.aed(aed_id).beacon
        c.session_kind = kind
        c.target_aed = aed_id
        c.countdown_start = c.hunt_start = c.verified_at = None
        c.elapsed_ms = 0
        c.survival = None
        c.survey = None
        c.last_distance_m = None
        self._tracker = None

    def step(self, event: dict) -> State:
        etype = event.get("type")
        if etype not in EVENT_TYPES:
            raise TransitionRejected(self.ctx.state, event, f"unknown event type {etype!r}")
        t = int(event["t"])
        handler = getattr(self, f"_on_{etype}")
        handler(event, t)
        return self.ctx.state

    # ---------------------------------------------------------- handlers

    def _on_exam_selected(self, event, t):
        c = self.ctx
        kind = event.get("session_kind")
        if c.state not in (State.REGISTERED, State.COMPLETED):
            self._reject(event, "a session is already in progress")
        if kind not in EXAM_KINDS + ("routine",):
            self._reject(event, f"unknown session kind {kind!r}")
        if kind != "pre_exam" and not c.exams_done["pre_exam"]:
            self._reject(event, "pre-exam not completed")
        if kind == "pre_exam" and c.exams_done["pre_exam"]:
            self._reject(event, "pre-exam already completed")
        if kind == "routine":
            aed_id = event.get("aed_id")
            if aed_id is None:
                self._reject(event, "routine session needs an aed_id")
        else:
            aed_id = event.get("aed_id") or self.config.exam_targets.get(kind)
        try:
            self.registry.aed(aed_id)
        except RegistryError:
            self._reject(event, f"unknown AED {aed_id!r}")
        self._begin(kind, aed_id)
        if kind == "routine":
            c.countdown_start = t
            c.state = State.COUNTDOWN
        elif kind == "pre_exam":
            c.state = State.PRE_EXAM_PENDING
        else:
            c.state = State.APPROACHING

    def _on_position(self, event, t):
        c = self.ctx
        if c.state in (State.PRE_EXAM_PENDING, State.APPROACHING, State.READY_TO_START):
            d = distance(float(event["lat"]), float(event["lon"]), self.config.start_lat, self.config.start_lon)
            c.last_distance_m = d
            c.state = State.READY_TO_START if d <= self.config.ready_radius_m else State.APPROACHING
        elif c.state == State.VERIFIED:
            c.state = State.SURVEY_PENDING

    def _on_tick(self, event, t):
        c = self.ctx
        if c.state == State.READY_TO_START:
            c.countdown_start = t
            c.state = State.COUNTDOWN
            self._maybe_start_hunt(t)
        elif c.state == State.COUNTDOWN:
            self._maybe_start_hunt(t)
        elif c.state == State.HUNTING:
            self._update_elapsed(t)
        elif c.state == State.VERIFIED:
            c.state = State.SURVEY_PENDING

    def _maybe_start_hunt(self, t):
        c = self.ctx
        start = c.countdown_start + 1000 * self.config.countdown_s
        if t >= start:
            c.hunt_start = start
            c.state = State.HUNTING
            self._tracker = DwellTracker(self.config.beacon_rssi_dbm, self.config.dwell_s, origin=start)
            self._update_elapsed(t)

    def _update_elapsed(self, t):
        c = self.ctx
        c.elapsed_ms = max(c.elapsed_ms, t - c.hunt_start)
        c.survival = metrics.survival_rate(c.elapsed_ms / 1000.0)

    def _on_beacon(self, event, t):
        c = self.ctx
        if c.state != State.HUNTING or t < c.hunt_start:
            return
        seen = BeaconId(str(event["uuid"]).upper(), int(event["major"]), int(event["minor"]))
        if seen != self._beacon:
            return
        done = self._tracker.feed(t, float(event["rssi"]))
        if done is not None:
            self._update_elapsed(done)
            c.verified_at = done
            c.points += self.config.points_per_hunt
            c.hunts_completed += 1
            c.state = State.VERIFIED

    def _on_survey_submitted(self, event, t):
        c = self.ctx
        if c.state not in (State.VERIFIED, State.SURVEY_PENDING):
            self._reject(event, "survey is only accepted after a verified hunt")
        try:
            resp = validate_survey(event.get("answers") or [], trip_id=str(event.get("trip_id", "")))
        except SurveyError as exc:
            self._reject(event, f"invalid survey: {exc}")
        c.survey = list(resp.answers())
        if c.session_kind in EXAM_KINDS:
            c.exams_done[c.session_kind] = True
        c.state = State.COMPLETED


@dataclass
class ReplayResult:
    trajectory: list[tuple[int, str, str]]
    rejections: list[dict]
    record: dict


def replay(events: Iterable[dict], registry: Registry, config: SessionConfig) -> ReplayResult:
    """Run events through a fresh machine, collecting rejections instead of raising."""
    m = SessionMachine(registry, config)
    traj: list[tuple[int, str, str]] = []
    rejected: list[dict] = []
    for ev in events:
        try:
            m.step(ev)
        except TransitionRejected as exc:
            rejected.append({"t": ev.get("t"), "type": ev.get("type"), "state": exc.state.value,
                             "reason": exc.reason})
        except (KeyError, TypeError, ValueError) as exc:
            rejected.append({"t": ev.get("t"), "type": ev.get("type"), "state": m.state.value,
                             "reason": f"malformed event: {exc}"})
        traj.append((int(ev.get("t", 0)), str(ev.get("type")), m.state.value))
    record = m.ctx.to_dict()
    record["rejections"] = rejected
    return ReplayResult(traj, rejected, record)


def read_events(path) -> list[dict]:
    events = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                ev = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON: {exc}") from None
            if not isinstance(ev, dict) or "type" not in ev or "t" not in ev:
                raise ValueError(f"{path}:{lineno}: event needs 'type' and 't'")
            events.append(ev)
    return events


def events_jsonl(events: Iterable[dict]) -> str:
    return "".join(json.dumps(e, sort_keys=True) + "\n" for e in events)
