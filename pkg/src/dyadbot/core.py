"""Shared domain vocabulary for co-regulation sessions.

Participants, observed-behavior codes, intervention strategies, transcript
entries and the event-sourced session record. Everything here is an
immutable value type safe to share across execution contexts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Optional


class ParticipantRole(str, Enum):
    PARENT = "parent"
    CHILD = "child"
    ROBOT = "robot"
    OPERATOR = "operator"


#: Speaker value for utterances that could not be attributed to a participant.
#: Diarization is absent by default, so this is a first-class value, not an error.
UNKNOWN_SPEAKER = "unknown"


class BehaviorCode(str, Enum):
    """Observed dyad behaviors an operator can report. Total, exclusive."""

    NEGATIVE_STRESSFUL_INTERACTION = "negative_stressful_interaction"
    NEGATIVE_STRESSFUL_PHYSICAL_INTERACTION = "negative_stressful_physical_interaction"
    CHILD_OBSTACLE_OR_PROGRESS = "child_obstacle_or_progress"
    NEGATIVE_THOUGHTS_OR_REGULATION_DIFFICULTY = "negative_thoughts_or_regulation_difficulty"
    CHILD_CANNOT_FOCUS = "child_cannot_focus"
    NO_STRESS = "no_stress"


#: Operator-facing labels for each observable behavior category.
BEHAVIOR_CODE_LABELS = {
    BehaviorCode.NEGATIVE_STRESSFUL_INTERACTION:
        "Negative and stressful interactions within parent-child dyads",
    BehaviorCode.NEGATIVE_STRESSFUL_PHYSICAL_INTERACTION:
        "Negative and stressful physical interactions within parent-child dyads",
    BehaviorCode.CHILD_OBSTACLE_OR_PROGRESS:
        "The child encounters obstacles or makes progress",
    BehaviorCode.NEGATIVE_THOUGHTS_OR_REGULATION_DIFFICULTY:
        "The parent or child expresses negative thoughts or the parent faces "
        "challenges in regulating their own stress or that of their child",
    BehaviorCode.CHILD_CANNOT_FOCUS:
        "The child cannot focus on the task",
    BehaviorCode.NO_STRESS:
        "No stress or negative emotion in the dyad",
}


class StrategyKind(str, Enum):
    BREATHING_EXERCISE = "breathing_exercise"
    PHYSICAL_TOUCH = "physical_touch"
    POSITIVE_REINFORCEMENT = "positive_reinforcement"
    EMOTION_VALIDATION = "emotion_validation"
    REFOCUS = "refocus"
    STANDBY = "standby"


STRATEGY_LABELS = {
    StrategyKind.BREATHING_EXERCISE: "Breathing exercises",
    StrategyKind.PHYSICAL_TOUCH: "Physical touch",
    StrategyKind.POSITIVE_REINFORCEMENT: "Encourage positive reinforcement",
    StrategyKind.EMOTION_VALIDATION: "Emotion validation",
    StrategyKind.REFOCUS: "Refocus",
    StrategyKind.STANDBY: "Standby mode",
}


_BEHAVIOR_TO_STRATEGY = {
    BehaviorCode.NEGATIVE_STRESSFUL_INTERACTION: StrategyKind.BREATHING_EXERCISE,
    BehaviorCode.NEGATIVE_STRESSFUL_PHYSICAL_INTERACTION: StrategyKind.PHYSICAL_TOUCH,
    BehaviorCode.CHILD_OBSTACLE_OR_PROGRESS: StrategyKind.POSITIVE_REINFORCEMENT,
    BehaviorCode.NEGATIVE_THOUGHTS_OR_REGULATION_DIFFICULTY: StrategyKind.EMOTION_VALIDATION,
    BehaviorCode.CHILD_CANNOT_FOCUS: StrategyKind.REFOCUS,
    BehaviorCode.NO_STRESS: StrategyKind.STANDBY,
}


def map_behavior_to_strategy(code: BehaviorCode) -> StrategyKind:
    """Resolve an observed behavior to its intervention strategy.

    Total over BehaviorCode, pure and deterministic.
    """
    return _BEHAVIOR_TO_STRATEGY[code]


class TranscriptSource(str, Enum):
    ASR = "asr"
    LLM_RESPONSE = "llm_response"
    OPERATOR_ANNOTATION = "operator_annotation"


@dataclass(frozen=True)
class TranscriptEntry:
    """One attributed utterance in the session record.

    ``speaker`` is a ParticipantRole value or UNKNOWN_SPEAKER; the operator is
    never a transcript speaker. Times are session-relative milliseconds.
    """

    id: int
    speaker: str
    text: str
    t_start: int
    t_end: int
    source: TranscriptSource

    def __post_init__(self) -> None:
        if self.t_start > self.t_end:
            raise ValueError(f"t_start {self.t_start} > t_end {self.t_end}")
        if self.speaker == ParticipantRole.OPERATOR.value:
            raise ValueError("operator cannot be a transcript speaker")
        if self.speaker == ParticipantRole.ROBOT.value and self.source is not TranscriptSource.LLM_RESPONSE:
            raise ValueError("robot entries must have source llm_response")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "speaker": self.speaker,
            "text": self.text,
            "t_start": self.t_start,
            "t_end": self.t_end,
            "source": self.source.value,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TranscriptEntry":
        return cls(
            id=int(d["id"]),
            speaker=str(d["speaker"]),
            text=str(d["text"]),
            t_start=int(d["t_start"]),
            t_end=int(d["t_end"]),
            source=TranscriptSource(d["source"]),
        )

    def with_speaker(self, speaker: str) -> "TranscriptEntry":
        return TranscriptEntry(self.id, speaker, self.text, self.t_start, self.t_end, self.source)


class EventKind(str, Enum):
    TRANSCRIPT_ADDED = "TranscriptAdded"
    INTERVENTION_TRIGGERED = "InterventionTriggered"
    INTERVENTION_COMPLETED = "InterventionCompleted"
    INTERVENTION_PREEMPTED = "InterventionPreempted"
    SENSOR_FIRED = "SensorFired"
    BEHAVIOR_STARTED = "BehaviorStarted"
    TIMER_PAUSED = "TimerPaused"
    TIMER_RESUMED = "TimerResumed"
    PHASE_CHANGED = "PhaseChanged"
    OPERATOR_NOTE = "OperatorNote"
    # Engine diagnostics (barge-in, aborted turns, protocol violations, timer
    # expiry, ignored commands). Carries {code, detail} payloads.
    SYSTEM_NOTE = "SystemNote"


@dataclass(frozen=True)
class SessionEvent:
    """One event in the append-only session record."""

    seq: int
    ts: int
    kind: EventKind
    payload: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {"seq": self.seq, "ts": self.ts, "kind": self.kind.value, "payload": self.payload},
            ensure_ascii=False,
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> "SessionEvent":
        d = json.loads(line)
        return cls(seq=int(d["seq"]), ts=int(d["ts"]), kind=EventKind(d["kind"]), payload=d.get("payload", {}))


@dataclass(frozen=True)
class Violation:
    index: int
    reason: str


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    violation: Optional[Violation] = None

    def __bool__(self) -> bool:
        return self.ok


def validate_event_log(events: Iterable[SessionEvent]) -> ValidationResult:
    """Check structural invariants of a session log, in stored order.

    Verifies seq monotonicity, pause/resume alternation, trigger/complete
    pairing and transcript speaker rules. Returns the first violation found;
    never raises on bad input.
    """
    last_seq: Optional[int] = None
    last_entry_id: Optional[int] = None
    paused = False
    episode_open = False

    for i, ev in enumerate(events):
        if last_seq is not None and ev.seq <= last_seq:
            return ValidationResult(False, Violation(i, f"seq {ev.seq} not increasing after {last_seq}"))
        last_seq = ev.seq

        if ev.kind is EventKind.TIMER_PAUSED:
            if paused:
                return ValidationResult(False, Violation(i, "pause without resume"))
            paused = True
        elif ev.kind is EventKind.TIMER_RESUMED:
            if not paused:
                return ValidationResult(False, Violation(i, "resume without pause"))
            paused = False
        elif ev.kind is EventKind.INTERVENTION_TRIGGERED:
            if episode_open:
                return ValidationResult(False, Violation(i, "trigger while an episode is open"))
            episode_open = True
        elif ev.kind in (EventKind.INTERVENTION_COMPLETED, EventKind.INTERVENTION_PREEMPTED):
            if not episode_open:
                return ValidationResult(False, Violation(i, f"{ev.kind.value} without open episode"))
            episode_open = False
        elif ev.kind is EventKind.TRANSCRIPT_ADDED:
            entry = ev.payload.get("entry", {})
            speaker = entry.get("speaker")
            if speaker == ParticipantRole.OPERATOR.value:
                return ValidationResult(False, Violation(i, "operator appears as transcript speaker"))
            entry_id = entry.get("id")
            if isinstance(entry_id, int):
                if last_entry_id is not None and entry_id <= last_entry_id:
                    return ValidationResult(False, Violation(i, f"transcript id {entry_id} not increasing"))
                last_entry_id = entry_id

    if episode_open:
        return ValidationResult(False, Violation(i, "episode still open at end of log"))
    return ValidationResult(True)
