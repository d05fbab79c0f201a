"""Efficiency metrics, the survival display model, and pre/post pairing."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

from .sensorlog import atomic_write_text
from .tripseg import TripPhases

SURVIVAL_INTERCEPT = 92.13
SURVIVAL_DECAY_PER_MIN = 0.147
# retrieval time is doubled to account for carrying the AED back
ROUND_TRIP_FACTOR = 2.0

OUTCOME_COLUMNS = (
    "participant_id", "group", "D_T_pre", "D_T_post", "D_P_pre", "D_P_post", "delta_D_T", "delta_D_P",
)


class MetricError(ValueError):
    pass


def survival_rate(elapsed_retrieval_s: float) -> float:
    """Displayed survival percentage after ``elapsed_retrieval_s`` of retrieval."""
    if elapsed_retrieval_s < 0 or math.isnan(elapsed_retrieval_s):
        raise MetricError(f"elapsed time must be >= 0 s, got {elapsed_retrieval_s}")
    minutes = ROUND_TRIP_FACTOR * elapsed_retrieval_s / 60.0
    return SURVIVAL_INTERCEPT * math.exp(-SURVIVAL_DECAY_PER_MIN * minutes)


def delta(pre: float, post: float) -> float:
    """Relative reduction ``(pre - post) / pre``; positive means faster after."""
    if not pre > 0:
        raise MetricError(f"relative change undefined for pre={pre}")
    return (pre - post) / pre


@dataclass
class ParticipantOutcome:
    participant_id: str
    group: str
    D_T_pre: float
    D_T_post: float
    D_P_pre: float
    D_P_post: float
    delta_D_T: float
    delta_D_P: float | None
    pre: TripPhases | None = None
    post: TripPhases | None = None

    def row(self) -> dict:
        return {
            "participant_id": self.participant_id,
            "group": self.group,
            "D_T_pre": f"{self.D_T_pre:.3f}",
            "D_T_post": f"{self.D_T_post:.3f}",
            "D_P_pre": f"{self.D_P_pre:.3f}",
            "D_P_post": f"{self.D_P_post:.3f}",
            "delta_D_T": repr(self.delta_D_T),
            "delta_D_P": "" if self.delta_D_P is None else repr(self.delta_D_P),
        }


def pair_outcomes(phases: Sequence[TripPhases]) -> tuple[list[ParticipantOutcome], list[str]]:
    """Pair each participant's pre_exam and post_exam_1 trips.

    Trips carry their manifest.  A participant is excluded (with a warning)
    unless there is exactly one complete trip of each kind.  Output is
    sorted by participant id.
    """
    by_pid: dict[str, dict[str, list[TripPhases]]] = {}
    for p in phases:
        if p.manifest is None:
            raise MetricError(f"trip {p.trip_id} has no manifest")
        kind = p.manifest.session_kind
        if kind not in ("pre_exam", "post_exam_1"):
            continue
        by_pid.setdefault(p.manifest.participant_id, {"pre_exam": [], "post_exam_1": []})[kind].append(p)

    outcomes: list[ParticipantOutcome] = []
    warns: list[str] = []
    for pid in sorted(by_pid):
        slots = by_pid[pid]
        problems = []
        for kind in ("pre_exam", "post_exam_1"):
            trips = slots[kind]
            if len(trips) != 1:
                problems.append(f"{len(trips)} {kind} trips")
            elif not trips[0].complete:
                problems.append(f"incomplete {kind} trip {trips[0].trip_id}")
        if problems:
            warns.append(f"participant {pid} excluded: " + "; ".join(problems))
            continue
        pre, post = slots["pre_exam"][0], slots["post_exam_1"][0]
        if pre.total_ms <= 0:
            warns.append(f"participant {pid} excluded: non-positive pre-exam duration")
            continue
        dp = delta(pre.pause_ms, post.pause_ms) if pre.pause_ms > 0 else None
        outcomes.append(ParticipantOutcome(
            participant_id=pid,
            group=pre.manifest.guidance,
            D_T_pre=pre.total_ms / 1000.0,
            D_T_post=post.total_ms / 1000.0,
            D_P_pre=pre.pause_ms / 1000.0,
            D_P_post=post.pause_ms / 1000.0,
            delta_D_T=delta(pre.total_ms, post.total_ms),
            delta_D_P=dp,
            pre=pre,
            post=post,
        ))
    return outcomes, warns


def outcomes_csv(outcomes: Sequence[ParticipantOutcome]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=OUTCOME_COLUMNS, lineterminator="\n")
    w.writeheader()
    for o in outcomes:
        w.writerow(o.row())
    return buf.getvalue()


def write_outcomes_csv(outcomes: Sequence[ParticipantOutcome], path) -> None:
    atomic_write_text(path, outcomes_csv(outcomes))


def read_outcomes_csv(path) -> list[ParticipantOutcome]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(OUTCOME_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise MetricError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            out.append(ParticipantOutcome(
                participant_id=row["participant_id"],
                group=row["group"],
                D_T_pre=float(row["D_T_pre"]),
                D_T_post=float(row["D_T_post"]),
                D_P_pre=float(row["D_P_pre"]),
                D_P_post=float(row["D_P_post"]),
                delta_D_T=float(row["delta_D_T"]),
                delta_D_P=float(row["delta_D_P"]) if row["delta_D_P"] else None,
            ))
    return out


def improvement_counts(outcomes: Sequence[ParticipantOutcome]) -> tuple[int, int]:
    """(improved, worsened) participant counts by the sign of delta_D_T."""
    improved = sum(1 for o in outcomes if o.delta_D_T > 0)
    worsened = sum(1 for o in outcomes if o.delta_D_T < 0)
    return improved, worsened
