"""Timed robot expression scripts with sensor-reactive transitions.

A script is a small phase graph. Each phase holds keyframed actuator
commands and is one of three modes: ``loop`` (keyframes repeat with a fixed
period), ``hold`` (keyframes play once, posture persists), ``end`` (keyframes
play once, then the phase terminates after ``duration_ms`` and either chains
to ``next`` or ends the script). Sensor events drive phase transitions.

Actuator values are normalized and hardware-agnostic; head yaw and body
rotation are signed, everything else is [0, 1]. Amplitudes and speeds are
house defaults: the source material describes the motions only qualitatively.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Optional

from .core import StrategyKind

BREATHING_PERIOD_MS = 6000
#: Sampling step for turning the continuous breathing oscillation into keyframes.
BREATHING_STEP_MS = 500


class Channel(str, Enum):
    HEAD_PITCH = "head_pitch"
    HEAD_YAW = "head_yaw"
    EAR_ROTATE = "ear_rotate"
    EYELID_OPENNESS = "eyelid_openness"
    TAIL_WAG = "tail_wag"
    BODY_ROTATE = "body_rotate"
    BACK_LIGHT = "back_light"


#: (lo, hi) per channel; head yaw and body rotation are signed.
CHANNEL_RANGES = {
    Channel.HEAD_PITCH: (0.0, 1.0),
    Channel.HEAD_YAW: (-1.0, 1.0),
    Channel.EAR_ROTATE: (0.0, 1.0),
    Channel.EYELID_OPENNESS: (0.0, 1.0),
    Channel.TAIL_WAG: (0.0, 1.0),
    Channel.BODY_ROTATE: (-1.0, 1.0),
    Channel.BACK_LIGHT: (0.0, 1.0),
}


class SensorKind(str, Enum):
    TOUCH = "touch"
    FACE_FOUND = "face_found"
    FACE_LOST = "face_lost"


@dataclass(frozen=True)
class SensorEvent:
    kind: SensorKind
    ts: int
    region: Optional[str] = None  # touch: "back" | "head"
    bearing_deg: Optional[float] = None  # face: [-90, 90]

    def __post_init__(self) -> None:
        if self.kind is SensorKind.TOUCH and self.region not in ("back", "head"):
            raise ValueError(f"touch region must be back or head, got {self.region!r}")
        if self.kind is SensorKind.FACE_FOUND:
            if self.bearing_deg is None or not -90.0 <= self.bearing_deg <= 90.0:
                raise ValueError(f"face bearing must be in [-90, 90], got {self.bearing_deg!r}")

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"kind": self.kind.value, "ts": self.ts}
        if self.region is not None:
            d["region"] = self.region
        if self.bearing_deg is not None:
            d["bearing_deg"] = self.bearing_deg
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SensorEvent":
        return cls(
            kind=SensorKind(d["kind"]),
            ts=int(d.get("ts", 0)),
            region=d.get("region"),
            bearing_deg=d.get("bearing_deg"),
        )


class ScriptError(ValueError):
    """Malformed behavior script (bad values, unreachable phases, cycles)."""


def _check_value(channel: Channel, value: float) -> None:
    lo, hi = CHANNEL_RANGES[channel]
    if not lo <= value <= hi:
        raise ScriptError(f"{channel.value} value {value} outside [{lo}, {hi}]")


@dataclass(frozen=True)
class Keyframe:
    """One scripted actuator move, at a phase-relative offset."""

    at_ms: int
    channel: Channel
    value: float
    ramp_ms: int = 0

    def __post_init__(self) -> None:
        if self.at_ms < 0 or self.ramp_ms < 0:
            raise ScriptError("keyframe times must be non-negative")
        _check_value(self.channel, self.value)


@dataclass(frozen=True)
class ActuatorCommand:
    """A keyframe due for execution, stamped with its session time."""

    at_ms: int
    channel: Channel
    value: float
    ramp_ms: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {"at_ms": self.at_ms, "channel": self.channel.value, "value": self.value, "ramp_ms": self.ramp_ms}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ActuatorCommand":
        return cls(int(d["at_ms"]), Channel(d["channel"]), float(d["value"]), int(d.get("ramp_ms", 0)))


class PhaseMode(str, Enum):
    LOOP = "loop"
    HOLD = "hold"
    END = "end"


@dataclass(frozen=True)
class Phase:
    name: str
    mode: PhaseMode
    keyframes: tuple[Keyframe, ...] = ()
    period_ms: Optional[int] = None  # loop phases
    duration_ms: Optional[int] = None  # end phases
    next: Optional[str] = None  # end phases: chain target inside the script
    #: On a face-triggered entry, aim the head at the detected bearing.
    face_tracking: bool = False

    def __post_init__(self) -> None:
        if self.mode is PhaseMode.LOOP:
            period = self.period_ms
            if period is None or period <= 0:
                raise ScriptError(f"loop phase {self.name!r} needs a positive period_ms")
            if any(k.at_ms >= period for k in self.keyframes):
                raise ScriptError(f"phase {self.name!r} has keyframes at or beyond its period")
        if self.mode is PhaseMode.END and (self.duration_ms is None or self.duration_ms < 0):
            raise ScriptError(f"end phase {self.name!r} needs duration_ms")


@dataclass(frozen=True)
class BehaviorScript:
    id: str
    initial: str
    phases: dict[str, Phase]
    transitions: dict[tuple[str, SensorKind], str] = field(default_factory=dict)
    #: Script to chain to once a terminal phase finishes (engine-level).
    end_script: Optional[str] = None
    #: Extra phases the orchestrator may enter directly (besides initial).
    entry_points: tuple[str, ...] = ()

    def validate(self) -> None:
        if self.initial not in self.phases:
            raise ScriptError(f"initial phase {self.initial!r} not defined")
        for entry in self.entry_points:
            if entry not in self.phases:
                raise ScriptError(f"entry point {entry!r} not defined")
        for (src, _), dst in self.transitions.items():
            if src not in self.phases or dst not in self.phases:
                raise ScriptError(f"transition {src!r} -> {dst!r} references unknown phase")
        for phase in self.phases.values():
            if phase.next is not None and phase.next not in self.phases:
                raise ScriptError(f"phase {phase.name!r} chains to unknown phase {phase.next!r}")
        # auto-chain cycles would replay forever without sensor input
        for start in self.phases:
            seen = [start]
            cur = self.phases[start].next
            while cur is not None:
                if cur in seen:
                    raise ScriptError(f"cyclic phase chain: {' -> '.join(seen + [cur])}")
                seen.append(cur)
                cur = self.phases[cur].next
        reachable = {self.initial, *self.entry_points}
        frontier = list(reachable)
        while frontier:
            name = frontier.pop()
            nexts = [dst for (src, _), dst in self.transitions.items() if src == name]
            chained = self.phases[name].next
            if chained is not None:
                nexts.append(chained)
            for n in nexts:
                if n not in reachable:
                    reachable.add(n)
                    frontier.append(n)
        unreachable = sorted(set(self.phases) - reachable)
        if unreachable:
            raise ScriptError(f"unreachable phases: {', '.join(unreachable)}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "initial": self.initial,
            "end_script": self.end_script,
            "entry_points": list(self.entry_points),
            "phases": {
                p.name: {
                    "mode": p.mode.value,
                    "period_ms": p.period_ms,
                    "duration_ms": p.duration_ms,
                    "next": p.next,
                    "face_tracking": p.face_tracking,
                    "keyframes": [
                        {"at_ms": k.at_ms, "channel": k.channel.value, "value": k.value, "ramp_ms": k.ramp_ms}
                        for k in p.keyframes
                    ],
                }
                for p in self.phases.values()
            },
            "transitions": [
                {"from": src, "on": kind.value, "to": dst} for (src, kind), dst in self.transitions.items()
            ],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "BehaviorScript":
        phases = {}
        for name, pd in d["phases"].items():
            phases[name] = Phase(
                name=name,
                mode=PhaseMode(pd["mode"]),
                keyframes=tuple(
                    Keyframe(int(k["at_ms"]), Channel(k["channel"]), float(k["value"]), int(k.get("ramp_ms", 0)))
                    for k in pd.get("keyframes", [])
                ),
                period_ms=pd.get("period_ms"),
                duration_ms=pd.get("duration_ms"),
                next=pd.get("next"),
                face_tracking=bool(pd.get("face_tracking", False)),
            )
        transitions = {
            (t["from"], SensorKind(t["on"])): t["to"] for t in d.get("transitions", [])
        }
        script = cls(
            id=d["id"],
            initial=d["initial"],
            phases=phases,
            transitions=transitions,
            end_script=d.get("end_script"),
            entry_points=tuple(d.get("entry_points", ())),
        )
        script.validate()
        return script


def load_script(path: str) -> BehaviorScript:
    with open(path, "r", encoding="utf-8") as f:
        return BehaviorScript.from_dict(json.load(f))


def breathing_phase(t_ms: float, period_ms: int = BREATHING_PERIOD_MS) -> tuple[float, float]:
    """Head pitch and back-light intensity of the breathing oscillation.

    Both outputs use the identical phase argument, so they are phase-locked
    by construction.
    """
    if period_ms <= 0:
        raise ValueError("period_ms must be positive")
    v = 0.5 + 0.5 * math.sin(2.0 * math.pi * t_ms / period_ms)
    return v, v


def _breathing_keyframes(period_ms: int = BREATHING_PERIOD_MS) -> tuple[Keyframe, ...]:
    frames = []
    for t in range(0, period_ms, BREATHING_STEP_MS):
        pitch, light = breathing_phase(t, period_ms)
        frames.append(Keyframe(t, Channel.HEAD_PITCH, pitch, ramp_ms=BREATHING_STEP_MS))
        frames.append(Keyframe(t, Channel.BACK_LIGHT, light, ramp_ms=BREATHING_STEP_MS))
    return tuple(frames)


def _builtin_scripts() -> dict[str, BehaviorScript]:
    kf = Keyframe
    ch = Channel

    breathing = BehaviorScript(
        id=StrategyKind.BREATHING_EXERCISE.value,
        initial="breathe",
        phases={
            "breathe": Phase(
                "breathe", PhaseMode.LOOP, _breathing_keyframes(), period_ms=BREATHING_PERIOD_MS
            )
        },
    )

    physical_touch = BehaviorScript(
        id=StrategyKind.PHYSICAL_TOUCH.value,
        initial="sad",
        phases={
            "sad": Phase(
                "sad",
                PhaseMode.HOLD,
                (
                    kf(0, ch.EYELID_OPENNESS, 0.5, 800),
                    kf(0, ch.HEAD_PITCH, 0.15, 800),
                    kf(0, ch.TAIL_WAG, 0.0, 400),
                ),
            ),
            "enjoyment": Phase(
                "enjoyment",
                PhaseMode.LOOP,
                (
                    kf(0, ch.EYELID_OPENNESS, 1.0, 200),
                    kf(500, ch.EYELID_OPENNESS, 0.1, 150),
                    kf(800, ch.EYELID_OPENNESS, 1.0, 200),
                    kf(0, ch.HEAD_YAW, -0.4, 2000),
                    kf(2000, ch.HEAD_YAW, 0.4, 2000),
                    kf(0, ch.EAR_ROTATE, 0.2, 2000),
                    kf(2000, ch.EAR_ROTATE, 0.8, 2000),
                    kf(0, ch.BODY_ROTATE, -0.2, 2000),
                    kf(2000, ch.BODY_ROTATE, 0.2, 2000),
                ),
                period_ms=4000,
            ),
        },
        transitions={("sad", SensorKind.TOUCH): "enjoyment"},
    )

    positive_reinforcement = BehaviorScript(
        id=StrategyKind.POSITIVE_REINFORCEMENT.value,
        initial="attend",
        phases={
            "attend": Phase(
                "attend",
                PhaseMode.HOLD,
                (
                    kf(0, ch.HEAD_PITCH, 0.6, 600),
                    kf(0, ch.EYELID_OPENNESS, 1.0, 300),
                ),
            ),
            # End-of-conversation flourish; the orchestrator enters this phase
            # when the episode completes.
            "flourish": Phase(
                "flourish",
                PhaseMode.END,
                (
                    kf(0, ch.HEAD_PITCH, 0.9, 600),
                    kf(0, ch.BACK_LIGHT, 1.0, 300),
                    kf(0, ch.EAR_ROTATE, 0.1, 800),
                    kf(800, ch.EAR_ROTATE, 0.9, 800),
                    kf(1600, ch.EAR_ROTATE, 0.5, 800),
                    kf(0, ch.BODY_ROTATE, -0.3, 1200),
                    kf(1200, ch.BODY_ROTATE, 0.3, 1200),
                    kf(2400, ch.BODY_ROTATE, 0.0, 800),
                ),
                duration_ms=3600,
            ),
        },
        end_script="standby",
        entry_points=("flourish",),
    )

    emotion_validation = BehaviorScript(
        id=StrategyKind.EMOTION_VALIDATION.value,
        initial="scan",
        phases={
            "scan": Phase(
                "scan",
                PhaseMode.LOOP,
                (
                    kf(0, ch.HEAD_YAW, -0.7, 2000),
                    kf(2000, ch.HEAD_YAW, 0.7, 2000),
                ),
                period_ms=4000,
            ),
            "gaze": Phase(
                "gaze",
                PhaseMode.LOOP,
                (
                    kf(0, ch.EYELID_OPENNESS, 1.0, 200),
                    kf(600, ch.EYELID_OPENNESS, 0.2, 150),
                    kf(900, ch.EYELID_OPENNESS, 1.0, 200),
                    kf(0, ch.TAIL_WAG, 0.2, 1500),
                    kf(1500, ch.TAIL_WAG, 0.8, 1500),
                ),
                period_ms=3000,
                face_tracking=True,
            ),
        },
        transitions={
            ("scan", SensorKind.FACE_FOUND): "gaze",
            ("gaze", SensorKind.FACE_LOST): "scan",
        },
    )

    refocus = BehaviorScript(
        id=StrategyKind.REFOCUS.value,
        initial="attentive",
        phases={
            "attentive": Phase(
                "attentive",
                PhaseMode.LOOP,
                (
                    kf(0, ch.HEAD_PITCH, 0.8, 600),
                    kf(0, ch.EYELID_OPENNESS, 1.0, 800),
                    kf(1500, ch.EYELID_OPENNESS, 0.3, 800),
                ),
                period_ms=3000,
            )
        },
    )

    standby = BehaviorScript(
        id=StrategyKind.STANDBY.value,
        initial="doze",
        phases={
            "doze": Phase(
                "doze",
                PhaseMode.END,
                (
                    kf(0, ch.HEAD_PITCH, 0.0, 2000),
                    kf(0, ch.EYELID_OPENNESS, 0.0, 1500),
                    kf(0, ch.BACK_LIGHT, 0.0, 500),
                    kf(0, ch.TAIL_WAG, 0.0, 500),
                ),
                duration_ms=2500,
            )
        },
    )

    scripts = {
        s.id: s
        for s in (breathing, physical_touch, positive_reinforcement, emotion_validation, refocus, standby)
    }
    for s in scripts.values():
        s.validate()
    return scripts


_BUILTINS = _builtin_scripts()


def builtin_scripts() -> dict[str, BehaviorScript]:
    return dict(_BUILTINS)


def compile_script(kind: StrategyKind) -> BehaviorScript:
    """The canonical expression script for a strategy. Total over StrategyKind."""
    return _BUILTINS[kind.value]


@dataclass(frozen=True)
class PhaseState:
    """Interpreter position inside one script."""

    phase: str
    phase_started_ms: int
    last_tick_ms: int
    done: bool = False


@dataclass(frozen=True)
class TickResult:
    commands: tuple[ActuatorCommand, ...]
    state: PhaseState
    #: Phases entered during this tick, in order.
    entered: tuple[str, ...]
    #: Sensor events not consumed this tick (at most one transition per tick).
    leftover: tuple[SensorEvent, ...]
    #: True when a terminal phase finished and the script is over.
    script_ended: bool = False


def start_script(script: BehaviorScript, now_ms: int, phase: Optional[str] = None) -> tuple[PhaseState, tuple[ActuatorCommand, ...]]:
    """Enter a script (or a specific phase of it), emitting its entry keyframes."""
    name = phase or script.initial
    if name not in script.phases:
        raise ScriptError(f"script {script.id!r} has no phase {name!r}")
    state = PhaseState(phase=name, phase_started_ms=now_ms, last_tick_ms=now_ms)
    return state, _entry_commands(script.phases[name], now_ms)


def _entry_commands(phase: Phase, now_ms: int) -> tuple[ActuatorCommand, ...]:
    return tuple(
        ActuatorCommand(now_ms, k.channel, k.value, k.ramp_ms) for k in phase.keyframes if k.at_ms == 0
    )


def _due_commands(phase: Phase, state: PhaseState, now_ms: int) -> list[ActuatorCommand]:
    """Commands with due times in the half-open interval (last_tick, now]."""
    lo = state.last_tick_ms
    out: list[ActuatorCommand] = []
    if now_ms <= lo:
        return out
    if phase.mode is PhaseMode.LOOP:
        period = phase.period_ms or 1
        for k in phase.keyframes:
            first = state.phase_started_ms + k.at_ms
            # smallest n with first + n*period > lo
            n = max(0, -(-(lo + 1 - first) // period))
            t = first + n * period
            while t <= now_ms:
                if t > lo:
                    out.append(ActuatorCommand(t, k.channel, k.value, k.ramp_ms))
                t += period
    else:
        limit = now_ms
        if phase.mode is PhaseMode.END and phase.duration_ms is not None:
            limit = min(limit, state.phase_started_ms + phase.duration_ms)
        for k in phase.keyframes:
            t = state.phase_started_ms + k.at_ms
            if lo < t <= limit:
                out.append(ActuatorCommand(t, k.channel, k.value, k.ramp_ms))
    out.sort(key=lambda c: (c.at_ms, c.channel.value))
    return out


def tick(
    script: BehaviorScript,
    state: PhaseState,
    now_ms: int,
    events: tuple[SensorEvent, ...] = (),
) -> TickResult:
    """Advance the interpreter to ``now_ms``.

    Emits exactly the commands due in (last tick, now]; applies at most one
    sensor transition, resetting the phase clock; unconsumed events carry
    over. ``now_ms`` must be non-decreasing across calls.
    """
    if now_ms < state.last_tick_ms:
        raise ValueError(f"tick time went backwards: {now_ms} < {state.last_tick_ms}")
    commands: list[ActuatorCommand] = []
    entered: list[str] = []
    script_ended = False

    phase = script.phases[state.phase]
    if not state.done:
        commands.extend(_due_commands(phase, state, now_ms))
    state = replace(state, last_tick_ms=now_ms)

    # terminal-phase expiry, possibly chaining inside the script
    if (
        not state.done
        and phase.mode is PhaseMode.END
        and phase.duration_ms is not None
        and now_ms >= state.phase_started_ms + phase.duration_ms
    ):
        if phase.next is not None:
            state = PhaseState(phase=phase.next, phase_started_ms=now_ms, last_tick_ms=now_ms)
            phase = script.phases[phase.next]
            entered.append(phase.name)
            commands.extend(_entry_commands(phase, now_ms))
        else:
            state = replace(state, done=True)
            script_ended = True

    # at most one sensor transition per tick; extras carry to the next tick
    leftover: list[SensorEvent] = []
    transitioned = False
    for i, ev in enumerate(events):
        if transitioned or state.done:
            leftover.append(ev)
            continue
        target = script.transitions.get((state.phase, ev.kind))
        if target is None:
            continue  # irrelevant event, dropped
        transitioned = True
        state = PhaseState(phase=target, phase_started_ms=now_ms, last_tick_ms=now_ms)
        phase = script.phases[target]
        entered.append(target)
        commands.extend(_entry_commands(phase, now_ms))
        if phase.face_tracking and ev.kind is SensorKind.FACE_FOUND and ev.bearing_deg is not None:
            commands.append(ActuatorCommand(now_ms, Channel.HEAD_YAW, ev.bearing_deg / 90.0, 400))

    return TickResult(tuple(commands), state, tuple(entered), tuple(leftover), script_ended)


def next_command_at(script: BehaviorScript, state: PhaseState) -> Optional[int]:
    """Earliest future instant at which tick() would emit or change phase."""
    if state.done:
        return None
    phase = script.phases[state.phase]
    lo = state.last_tick_ms
    candidates: list[int] = []
    if phase.mode is PhaseMode.LOOP:
        period = phase.period_ms or 1
        for k in phase.keyframes:
            first = state.phase_started_ms + k.at_ms
            n = max(0, -(-(lo + 1 - first) // period))
            candidates.append(first + n * period)
    else:
        for k in phase.keyframes:
            t = state.phase_started_ms + k.at_ms
            if t > lo:
                candidates.append(t)
        if phase.mode is PhaseMode.END and phase.duration_ms is not None:
            end = state.phase_started_ms + phase.duration_ms
            if end > lo:
                candidates.append(end)
    return min(candidates) if candidates else None


class BehaviorEngine:
    """Single-owner script runner for one session.

    Holds the script table, the live interpreter state and the pending
    sensor queue; chains to a follow-up script (e.g. the standby doze) when
    a terminal phase finishes.
    """

    def __init__(self, scripts: Optional[dict[str, BehaviorScript]] = None):
        self.scripts = scripts if scripts is not None else builtin_scripts()
        self.script: Optional[BehaviorScript] = None
        self.state: Optional[PhaseState] = None
        self._pending: list[SensorEvent] = []

    @property
    def active_phase(self) -> Optional[str]:
        if self.script is None or self.state is None or self.state.done:
            return None
        return self.state.phase

    def start(self, script_id: str, now_ms: int, phase: Optional[str] = None) -> tuple[list[ActuatorCommand], list[tuple[str, str]]]:
        """Switch to a script; returns (commands, [(script_id, phase), ...] entered)."""
        script = self.scripts[script_id]
        self.script = script
        self.state, commands = start_script(script, now_ms, phase)
        return list(commands), [(script.id, self.state.phase)]

    def stop(self) -> None:
        self.script = None
        self.state = None
        self._pending.clear()

    def on_sensor(self, event: SensorEvent) -> None:
        self._pending.append(event)

    def tick(self, now_ms: int) -> tuple[list[ActuatorCommand], list[tuple[str, str]]]:
        if self.script is None or self.state is None:
            self._pending.clear()
            return [], []
        result = tick(self.script, self.state, now_ms, tuple(self._pending))
        self.state = result.state
        self._pending = list(result.leftover)
        commands = list(result.commands)
        entered = [(self.script.id, name) for name in result.entered]
        if result.script_ended:
            follow = self.script.end_script
            self.script = None
            self.state = None
            if follow is not None:
                more_cmds, more_entered = self.start(follow, now_ms)
                commands.extend(more_cmds)
                entered.extend(more_entered)
        return commands, entered

    def next_deadline(self) -> Optional[int]:
        if self.script is None or self.state is None:
            return None
        if self._pending:
            return self.state.last_tick_ms
        return next_command_at(self.script, self.state)
