"""Session protocol: game phases, role reversal, config and the event log.

A session runs Setup -> Session1 -> Break -> Session2 -> Debrief. Each game
session gets a fresh 15-minute timer; the guide/builder roles swap for the
second session. Events persist as JSONL, one object per line, flushed per
event so a crash loses at most the in-flight line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import IO, Iterable, Optional

from .core import ParticipantRole, SessionEvent
from .timer import DEFAULT_BUDGET_MS

DEFAULT_BREAK_MS = 300_000  # 5 minutes


class GamePhase(str, Enum):
    SETUP = "setup"
    SESSION1 = "session1"
    BREAK = "break"
    SESSION2 = "session2"
    DEBRIEF = "debrief"


PHASE_ORDER = [GamePhase.SETUP, GamePhase.SESSION1, GamePhase.BREAK, GamePhase.SESSION2, GamePhase.DEBRIEF]

GAME_PHASES = (GamePhase.SESSION1, GamePhase.SESSION2)


def next_phase(phase: GamePhase) -> Optional[GamePhase]:
    i = PHASE_ORDER.index(phase)
    return PHASE_ORDER[i + 1] if i + 1 < len(PHASE_ORDER) else None


@dataclass(frozen=True)
class RoleAssignment:
    """Who holds the instructions (guide) vs. who touches the pieces (builder)."""

    guide: ParticipantRole
    builder: ParticipantRole

    def __post_init__(self) -> None:
        if self.guide is self.builder:
            raise ValueError("guide and builder must differ")

    def swapped(self) -> "RoleAssignment":
        return RoleAssignment(guide=self.builder, builder=self.guide)

    def to_dict(self) -> dict:
        return {"guide": self.guide.value, "builder": self.builder.value}


@dataclass
class SessionConfig:
    budget_ms: int = DEFAULT_BUDGET_MS
    break_ms: int = DEFAULT_BREAK_MS
    #: Simulation phase plan: how long setup/debrief last before auto-advance.
    setup_ms: int = 10_000
    debrief_ms: int = 10_000
    participants: dict = field(default_factory=lambda: {"parent": "Parent", "child": "Child"})
    max_turns: int = 6
    idle_timeout_ms: int = 20_000
    barge_in_enabled: bool = False
    stage_timeout_ms: int = 10_000
    backends: dict = field(default_factory=lambda: {"kind": "mock"})
    #: Microphone channel -> participant role, for per-channel attribution.
    channel_roles: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "SessionConfig":
        cfg = cls()
        for key, value in d.items():
            if not hasattr(cfg, key):
                raise ValueError(f"unknown config key {key!r}")
            setattr(cfg, key, value)
        cfg.channel_roles = {int(k): v for k, v in cfg.channel_roles.items()}
        return cfg

    @classmethod
    def load(cls, path: str) -> "SessionConfig":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def to_dict(self) -> dict:
        return {
            "budget_ms": self.budget_ms,
            "break_ms": self.break_ms,
            "setup_ms": self.setup_ms,
            "debrief_ms": self.debrief_ms,
            "participants": self.participants,
            "max_turns": self.max_turns,
            "idle_timeout_ms": self.idle_timeout_ms,
            "barge_in_enabled": self.barge_in_enabled,
            "stage_timeout_ms": self.stage_timeout_ms,
            "backends": self.backends,
            "channel_roles": {str(k): v for k, v in self.channel_roles.items()},
        }

    def save(self, path: str) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")


class JsonlEventLog:
    """Append-only JSONL writer, one flushed line per event."""

    def __init__(self, path: str):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh: IO[str] = open(self.path, "w", encoding="utf-8")

    def append(self, event: SessionEvent) -> None:
        self._fh.write(event.to_json())
        self._fh.write("\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "JsonlEventLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class LogParseError(ValueError):
    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


def read_event_log(path: str) -> list[SessionEvent]:
    """Parse a JSONL session log; a corrupt line halts with its line number."""
    events = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            try:
                events.append(SessionEvent.from_json(stripped))
            except (json.JSONDecodeError, KeyError, ValueError) as e:
                raise LogParseError(line_number, str(e)) from e
    return events


def events_to_jsonl(events: Iterable[SessionEvent]) -> str:
    return "".join(ev.to_json() + "\n" for ev in events)
