"""Supervised-autonomy orchestration for a co-regulation companion robot.

The engine runs a speech cascade (VAD -> ASR -> LLM -> TTS), an operator-
triggered intervention state machine with scripted robot expressions, and a
timed collaborative-game session protocol, all behind a versioned WebSocket
gateway with an in-repo simulated robot.
"""

from .core import (
    BehaviorCode,
    EventKind,
    ParticipantRole,
    SessionEvent,
    StrategyKind,
    TranscriptEntry,
    map_behavior_to_strategy,
    validate_event_log,
)
from .engine import Engine
from .session import GamePhase, SessionConfig
from .timer import GameTimer

__version__ = "0.1.0"

__all__ = [
    "BehaviorCode",
    "Engine",
    "EventKind",
    "GamePhase",
    "GameTimer",
    "ParticipantRole",
    "SessionConfig",
    "SessionEvent",
    "StrategyKind",
    "TranscriptEntry",
    "map_behavior_to_strategy",
    "validate_event_log",
    "__version__",
]
