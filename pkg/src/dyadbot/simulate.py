"""Scripted end-to-end sessions and deterministic log replay.

A dyad script is JSONL of timed directives (utterances, touches, faces,
operator commands). The runner is a discrete-event loop over session time:
engine deadlines and script directives are processed in exact time order, so
the resulting event log is identical for any wall-clock compression factor;
compression only changes how long the run takes in real time.

Replay rebuilds the directive list from a recorded log's input events and
re-drives a fresh engine against mock backends.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

from .backends import BackendSet
from .behavior import SensorEvent, SensorKind
from .core import EventKind, SessionEvent, validate_event_log
from .engine import Engine
from .session import GamePhase, SessionConfig, read_event_log
from .vad import read_wav

_REPLAYABLE_NOTE_CODES = {
    "trigger_outside_session": "trigger",
    "trigger_ignored": "trigger",
    "end_ignored": "end",
    "advance_ignored": "advance",
    "annotate_rejected": "annotate",
    "reassign_rejected": "reassign",
}


class ScriptError(ValueError):
    def __init__(self, line_number: int, message: str):
        super().__init__(f"script line {line_number}: {message}")
        self.line_number = line_number


@dataclass(frozen=True)
class Directive:
    """One timed input; ``dispatch_at`` is when the engine processes it
    (audio utterances dispatch at the instant the speech ends)."""

    dispatch_at: int
    action: str
    payload: dict[str, Any]


def load_dyad_script(path: str) -> list[Directive]:
    """Parse a dyad script (JSONL). at_ms must be non-decreasing."""
    directives: list[Directive] = []
    last_at = 0
    base = Path(path).parent
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            try:
                d = json.loads(stripped)
            except json.JSONDecodeError as e:
                raise ScriptError(line_number, f"bad JSON: {e}") from e
            try:
                directives.append(_parse_directive(d, base))
            except (KeyError, ValueError) as e:
                raise ScriptError(line_number, str(e)) from e
            at = int(d["at_ms"])
            if at < last_at:
                raise ScriptError(line_number, f"at_ms {at} decreases (previous {last_at})")
            last_at = at
    return directives


def _parse_directive(d: dict[str, Any], base: Path) -> Directive:
    at = int(d["at_ms"])
    kind = d["kind"]
    if kind == "utterance":
        speaker = d["speaker"]
        if speaker not in ("parent", "child"):
            raise ValueError(f"utterance speaker must be parent or child, got {speaker!r}")
        if "text" in d:
            return Directive(at, "utterance", {"speaker": speaker, "text": d["text"]})
        if "wav_path" in d:
            samples = read_wav(str(base / d["wav_path"]))
            duration = len(samples) * 1000 // 16000
            return Directive(at + duration, "audio", {"speaker": speaker, "samples": samples})
        raise ValueError("utterance needs text or wav_path")
    if kind == "touch":
        region = d.get("region", "back")
        return Directive(at, "sensor", {"event": SensorEvent(SensorKind.TOUCH, ts=at, region=region)})
    if kind == "face":
        return Directive(
            at, "sensor",
            {"event": SensorEvent(SensorKind.FACE_FOUND, ts=at, bearing_deg=float(d["bearing_deg"]))},
        )
    if kind == "operator_trigger":
        return Directive(at, "trigger", {"command": d["command"]})
    if kind == "operator_end":
        return Directive(at, "end", {})
    raise ValueError(f"unknown directive kind {kind!r}")


def directives_from_events(events: list[SessionEvent]) -> list[Directive]:
    """Recover the external inputs of a recorded session, in order.

    Engine-generated events (robot transcript lines, completions, timer
    events, behavior starts) are skipped: replaying the inputs regenerates
    them.
    """
    out: list[Directive] = []
    for ev in events:
        p = ev.payload
        if ev.kind is EventKind.TRANSCRIPT_ADDED:
            entry = p["entry"]
            if entry["source"] != "asr":
                continue
            out.append(Directive(ev.ts, "utterance_replay", {
                "speaker": entry["speaker"],
                "text": entry["text"],
                "t_start": entry["t_start"],
                "t_end": entry["t_end"],
            }))
        elif ev.kind is EventKind.SENSOR_FIRED:
            out.append(Directive(ev.ts, "sensor", {"event": SensorEvent.from_dict(p)}))
        elif ev.kind is EventKind.INTERVENTION_TRIGGERED:
            out.append(Directive(ev.ts, "trigger", {"command": p["command"]}))
        elif ev.kind is EventKind.INTERVENTION_COMPLETED:
            if p.get("reason") == "operator_end":
                out.append(Directive(ev.ts, "end", {}))
        elif ev.kind is EventKind.PHASE_CHANGED:
            out.append(Directive(ev.ts, "advance", {}))
        elif ev.kind is EventKind.OPERATOR_NOTE:
            code = p.get("code")
            if code == "annotate_speaker":
                out.append(Directive(ev.ts, "annotate", {"entry_id": p["entry_id"], "role": p["role"]}))
            elif code == "reassign_addressee":
                out.append(Directive(ev.ts, "reassign", {"phase_index": p["phase_index"]}))
            elif code == "note":
                out.append(Directive(ev.ts, "note", {"text": p["text"]}))
        elif ev.kind is EventKind.SYSTEM_NOTE:
            action = _REPLAYABLE_NOTE_CODES.get(p.get("code", ""))
            if action == "trigger":
                out.append(Directive(ev.ts, "trigger", {"command": p["command"]}))
            elif action == "end":
                out.append(Directive(ev.ts, "end", {}))
            elif action == "advance":
                out.append(Directive(ev.ts, "advance", {}))
            elif action == "annotate":
                out.append(Directive(ev.ts, "annotate", {"entry_id": p["entry_id"], "role": p["role"]}))
            elif action == "reassign":
                out.append(Directive(ev.ts, "reassign", {"phase_index": p["phase_index"]}))
    return out


class SimulationRunner:
    """Discrete-event driver for one engine.

    With ``auto_phases`` the runner acts as the scripted operator for phase
    flow: it advances out of setup after ``config.setup_ms``, advances out
    of a game session when its timer expires, out of the break after
    ``config.break_ms`` and ends the run after ``config.debrief_ms`` of
    debrief. Replay disables this: phase changes are replayed as inputs.
    """

    def __init__(
        self,
        engine: Engine,
        directives: list[Directive],
        compression: float = 0.0,
        auto_phases: bool = True,
        run_until: Optional[int] = None,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        self.engine = engine
        self.pending = sorted(directives, key=lambda d: d.dispatch_at)
        self.compression = compression
        self.auto_phases = auto_phases
        self.cap = run_until
        self.sleeper = sleeper
        self._scanned = 0
        self._now = 0
        if auto_phases:
            self._insert(Directive(engine.config.setup_ms, "advance", {}))

    def _insert(self, directive: Directive) -> None:
        self.pending.append(directive)
        self.pending.sort(key=lambda d: d.dispatch_at)

    def _pace(self, t: int) -> None:
        if self.compression and t > self._now:
            self.sleeper((t - self._now) / self.compression / 1000.0)

    def _scan_new_events(self) -> None:
        """React to engine events that drive the auto phase plan."""
        events = self.engine.events
        while self._scanned < len(events):
            ev = events[self._scanned]
            self._scanned += 1
            if not self.auto_phases:
                continue
            if ev.kind is EventKind.SYSTEM_NOTE and ev.payload.get("code") == "timer_expired":
                self._insert(Directive(ev.ts, "advance", {}))
            elif ev.kind is EventKind.PHASE_CHANGED:
                if ev.payload.get("to") == GamePhase.BREAK.value:
                    self._insert(Directive(ev.ts + self.engine.config.break_ms, "advance", {}))
                elif ev.payload.get("to") == GamePhase.DEBRIEF.value:
                    self.cap = ev.ts + self.engine.config.debrief_ms

    def run(self) -> None:
        while True:
            t_input = self.pending[0].dispatch_at if self.pending else None
            t_engine = self.engine.next_deadline()
            t: Optional[int] = None
            source = ""
            if t_input is not None:
                t, source = t_input, "input"
            if t_engine is not None and (t is None or t_engine <= t):
                t, source = t_engine, "engine"
            if t is None or (self.cap is not None and t > self.cap):
                if self.cap is not None and self._now < self.cap:
                    self._pace(self.cap)
                    self.engine.advance_to(self.cap)
                    self._now = self.cap
                    self._scan_new_events()
                break
            self._pace(t)
            if source == "engine":
                self.engine.advance_to(t)
            else:
                self._dispatch(self.pending.pop(0))
            self._now = t
            self._scan_new_events()

    def _dispatch(self, d: Directive) -> None:
        e, t, p = self.engine, d.dispatch_at, d.payload
        if d.action == "utterance":
            e.utterance_text(t, p["text"], declared_speaker=p["speaker"])
        elif d.action == "utterance_replay":
            declared = None if p["speaker"] == "unknown" else p["speaker"]
            e.utterance_text(t, p["text"], declared_speaker=declared, t_start=p["t_start"], t_end=p["t_end"])
        elif d.action == "audio":
            e.audio_utterance(t, p["samples"], declared_speaker=p.get("speaker"))
        elif d.action == "sensor":
            e.sensor_event(t, p["event"])
        elif d.action == "trigger":
            e.operator_trigger(t, p["command"])
        elif d.action == "end":
            e.operator_end(t)
        elif d.action == "advance":
            e.operator_advance_phase(t)
        elif d.action == "annotate":
            e.operator_annotate(t, p["entry_id"], p["role"])
        elif d.action == "reassign":
            e.operator_reassign_addressee(t, p["phase_index"])
        elif d.action == "note":
            e.operator_note(t, p["text"])
        else:
            raise ValueError(f"unknown directive action {d.action!r}")


def timer_accounting(events: list[SessionEvent]) -> dict[str, dict[str, int]]:
    """Per-game-session wall/paused/game time, reconstructed from the log."""
    out: dict[str, dict[str, int]] = {}
    session: Optional[str] = None
    session_start = 0
    paused_total = 0
    pause_start: Optional[int] = None
    for ev in events:
        if ev.kind is EventKind.PHASE_CHANGED:
            to = ev.payload.get("to", "")
            if session is not None:
                wall = ev.ts - session_start
                out[session] = {
                    "wall_ms": wall,
                    "paused_ms": paused_total,
                    "game_ms": wall - paused_total,
                }
            session = to if to in (GamePhase.SESSION1.value, GamePhase.SESSION2.value) else None
            session_start = ev.ts
            paused_total = 0
            pause_start = None
        elif ev.kind is EventKind.TIMER_PAUSED:
            pause_start = ev.ts
        elif ev.kind is EventKind.TIMER_RESUMED and pause_start is not None:
            paused_total += ev.ts - pause_start
            pause_start = None
    return out


@dataclass
class SimulationReport:
    events: list[SessionEvent]
    metrics: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(self.metrics, indent=2, sort_keys=True)


def run_simulation(
    config: SessionConfig,
    directives: list[Directive],
    compression: float = 0.0,
    sink: Optional[Any] = None,
    backends: Optional[BackendSet] = None,
) -> SimulationReport:
    engine = Engine(config, backends=backends or BackendSet.from_config(config.backends), sink=sink)
    runner = SimulationRunner(engine, directives, compression=compression, auto_phases=True)
    runner.run()
    validation = validate_event_log(engine.events)
    metrics = engine.metrics.summary()
    metrics["timer"] = timer_accounting(engine.events)
    metrics["final_phase"] = engine.phase.value
    metrics["events"] = len(engine.events)
    metrics["validation"] = {
        "ok": validation.ok,
        "violation": None if validation.ok else {
            "index": validation.violation.index, "reason": validation.violation.reason,
        },
    }
    return SimulationReport(events=list(engine.events), metrics=metrics)


def replay_events(
    events: list[SessionEvent],
    config: SessionConfig,
    sink: Optional[Any] = None,
    backends: Optional[BackendSet] = None,
) -> list[SessionEvent]:
    """Re-drive a fresh engine with the logged inputs; returns the new log."""
    directives = directives_from_events(events)
    engine = Engine(config, backends=backends or BackendSet.from_config(config.backends), sink=sink)
    run_until = events[-1].ts if events else 0
    runner = SimulationRunner(engine, directives, compression=0.0, auto_phases=False, run_until=run_until)
    runner.run()
    return list(engine.events)


def replay_log(log_path: str, config: SessionConfig, sink: Optional[Any] = None) -> list[SessionEvent]:
    return replay_events(read_event_log(log_path), config, sink=sink)


def mask_timestamps(events: list[SessionEvent]) -> list[dict[str, Any]]:
    """Events as dicts with volatile timing fields removed, for log diffing."""
    masked = []
    for ev in events:
        d = json.loads(ev.to_json())
        d.pop("ts", None)
        payload = d.get("payload", {})
        for key in ("t_start", "t_end", "ts", "remaining_ms"):
            payload.pop(key, None)
        entry = payload.get("entry")
        if isinstance(entry, dict):
            entry.pop("t_start", None)
            entry.pop("t_end", None)
        masked.append(d)
    return masked
