"""The orchestration core: one deterministic, clock-agnostic session engine.

Every input (operator command, utterance, audio, sensor event) arrives with
an explicit session time in milliseconds; internal deadlines (robot speech
ending, behavior keyframes, the idle watchdog, timer expiry) are exposed via
``next_deadline`` and fired by ``advance_to``. The engine never reads a wall
clock for session logic, so a live gateway, a compressed simulation and a
log replay all drive the identical code and produce identical event logs.

The engine is a single-writer actor: callers must serialize all inputs
through one ordered queue. Handlers return wire effects for the gateway to
fan out; session events are appended to the log as a side effect.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional, Union

import numpy as np

from . import behavior as bhv
from .backends import BackendError, BackendSet, pcm_to_b64, segment_fingerprint
from .core import (
    BehaviorCode,
    EventKind,
    ParticipantRole,
    SessionEvent,
    StrategyKind,
    TranscriptEntry,
    TranscriptSource,
    UNKNOWN_SPEAKER,
)
from .intervention import CompletionPolicy, CompletionReason, InterventionMachine, MachineResult, render_prompt
from .pipeline import (
    ConversationHistory,
    SpeakerAttributor,
    TurnAborted,
    TurnExecutor,
    TurnResult,
    TurnSkipped,
    gate_input,
)
from .session import GAME_PHASES, GamePhase, RoleAssignment, SessionConfig, next_phase
from .timer import GameTimer, TimerProtocolError
from .vad import AudioFrame, FRAME_MS, SAMPLE_RATE, SpeechSegment, StreamSegmenter, VadConfig


def parse_command(value: Union[str, StrategyKind, BehaviorCode]) -> Union[StrategyKind, BehaviorCode]:
    """Accept a strategy or behavior-code identifier, string or enum."""
    if isinstance(value, (StrategyKind, BehaviorCode)):
        return value
    try:
        return StrategyKind(value)
    except ValueError:
        pass
    try:
        return BehaviorCode(value)
    except ValueError:
        raise ValueError(f"unknown strategy or behavior code: {value!r}") from None


@dataclass(frozen=True)
class Effect:
    """An outbound wire message for the gateway to deliver.

    ``sender`` targets the connection whose command produced the effect
    (used for warnings that replace the ack).
    """

    target: str  # "robot" | "operators" | "all" | "sender"
    kind: str
    payload: dict[str, Any]


class AudioIngest:
    """Continuous PCM intake for one microphone channel.

    Buffers to whole 20 ms frames, runs the streaming VAD and maps closed
    segments back to session time via the stream anchor (set at first push).
    """

    def __init__(self, cfg: Optional[VadConfig] = None, anchor_ms: Optional[int] = None):
        self._segmenter = StreamSegmenter(cfg)
        self._anchor = anchor_ms
        self._rem = np.zeros(0, dtype=np.int16)
        self._frames_fed = 0

    def push(self, now: int, samples: np.ndarray) -> list[tuple[int, int, SpeechSegment]]:
        samples = np.asarray(samples, dtype=np.int16)
        if self._anchor is None:
            total = len(self._rem) + len(samples)
            self._anchor = now - total * 1000 // SAMPLE_RATE
        data = np.concatenate([self._rem, samples]) if len(self._rem) else samples
        n_whole = len(data) // (SAMPLE_RATE * FRAME_MS // 1000)
        frame_len = SAMPLE_RATE * FRAME_MS // 1000
        usable, self._rem = data[: n_whole * frame_len], data[n_whole * frame_len:]
        out = []
        for i in range(n_whole):
            frame = AudioFrame(usable[i * frame_len:(i + 1) * frame_len], index=self._frames_fed)
            self._frames_fed += 1
            closed = self._segmenter.push(frame)
            if closed:
                out.append(self._stamp(closed))
        return out

    def flush(self) -> list[tuple[int, int, SpeechSegment]]:
        closed = self._segmenter.flush()
        return [self._stamp(closed)] if closed else []

    def _stamp(self, seg: SpeechSegment) -> tuple[int, int, SpeechSegment]:
        anchor = self._anchor or 0
        return anchor + seg.start_ms, anchor + seg.end_ms, seg


@dataclass
class EngineMetrics:
    episodes_by_strategy: dict[str, int] = field(default_factory=dict)
    turns_by_strategy: dict[str, int] = field(default_factory=dict)
    suppressed_segments: int = 0
    barge_ins: int = 0
    behavior_commands: int = 0
    latencies_ms: list[float] = field(default_factory=list)

    def summary(self) -> dict[str, Any]:
        lat = sorted(self.latencies_ms)

        def pct(p: float) -> Optional[float]:
            if not lat:
                return None
            return lat[min(len(lat) - 1, int(p * len(lat)))]

        return {
            "episodes": dict(self.episodes_by_strategy),
            "turns": dict(self.turns_by_strategy),
            "suppressed_segments": self.suppressed_segments,
            "barge_ins": self.barge_ins,
            "behavior_commands": self.behavior_commands,
            "latency_ms": {
                "count": len(lat),
                "p50": pct(0.50),
                "p95": pct(0.95),
                "max": lat[-1] if lat else None,
            },
        }


class Engine:
    """One session's orchestrator; see module docstring for the contract."""

    def __init__(
        self,
        config: SessionConfig,
        backends: Optional[BackendSet] = None,
        sink: Optional[Any] = None,
        vad_config: Optional[VadConfig] = None,
    ):
        self.config = config
        self.backends = backends or BackendSet.from_config(config.backends)
        self.sink = sink
        self.vad_config = vad_config or VadConfig()

        self.machine = InterventionMachine(
            CompletionPolicy(max_turns=config.max_turns, idle_timeout_ms=config.idle_timeout_ms)
        )
        self.behavior = bhv.BehaviorEngine()
        self.history = ConversationHistory()
        self.executor = TurnExecutor(self.backends, stage_timeout_ms=config.stage_timeout_ms)
        self.attributor = SpeakerAttributor(
            channel_roles={int(k): v for k, v in config.channel_roles.items()}
        )

        self.phase = GamePhase.SETUP
        self.roles = RoleAssignment(guide=ParticipantRole.PARENT, builder=ParticipantRole.CHILD)
        self.timer: Optional[GameTimer] = None
        self._timer_expired_noted = False

        self.events: list[SessionEvent] = []
        self.transcript: dict[int, TranscriptEntry] = {}
        self.metrics = EngineMetrics()

        self._seq = 0
        self._entry_id = 0
        self._now = 0
        self._speaking_until: Optional[int] = None
        self._effects: list[Effect] = []
        self._ingests: dict[int, AudioIngest] = {}

    # ---------------------------------------------------------------- time

    @property
    def now(self) -> int:
        return self._now

    def speaking(self, now: Optional[int] = None) -> bool:
        t = self._now if now is None else now
        return self._speaking_until is not None and t < self._speaking_until

    def next_deadline(self) -> Optional[int]:
        """Earliest instant at which internal state changes on its own."""
        candidates: list[int] = []
        if self._speaking_until is not None:
            candidates.append(self._speaking_until)
        b = self.behavior.next_deadline()
        if b is not None:
            candidates.append(b)
        if self.machine.episode is not None:
            base = self.machine.episode.idle_anchor_ms
            if self._speaking_until is not None:
                base = max(base, self._speaking_until)
            candidates.append(base + self.machine.specs[self.machine.episode.kind].completion.idle_timeout_ms)
        if (
            self.timer is not None
            and not self.timer.paused
            and not self._timer_expired_noted
            and self.phase in GAME_PHASES
        ):
            expiry = self.timer.expiry_at(self._now)
            if expiry is not None:
                candidates.append(expiry)
        return min(candidates) if candidates else None

    def advance_to(self, now: int) -> None:
        """Fire all internal deadlines due at or before ``now``, in order."""
        if now < self._now:
            raise ValueError(f"time went backwards: {now} < {self._now}")
        while True:
            deadline = self.next_deadline()
            if deadline is None or deadline > now:
                break
            self._fire_deadlines_at(deadline)
        self._now = now

    def _fire_deadlines_at(self, t: int) -> None:
        self._now = t
        # 1. robot speech ends: reopen the gate, restart the idle countdown
        if self._speaking_until is not None and t >= self._speaking_until:
            self._speaking_until = None
            self.machine.bump_idle_anchor(t)
            self._push_state()
        # 2. behavior keyframes due
        if self.behavior.next_deadline() is not None and self.behavior.next_deadline() <= t:
            self._tick_behavior(t)
        # 3. idle watchdog
        if self.machine.episode is not None and not self.speaking(t):
            res = self.machine.idle_watchdog(t)
            if res.completed is not None:
                self._finish_episode(t, res)
        # 4. game-timer expiry
        if (
            self.timer is not None
            and not self.timer.paused
            and not self._timer_expired_noted
            and self.timer.expired(t)
        ):
            self._timer_expired_noted = True
            self._note(t, "timer_expired", {"phase": self.phase.value})
            self._push_timer(t)

    # ------------------------------------------------------------- helpers

    def _emit(self, now: int, kind: EventKind, payload: dict[str, Any]) -> SessionEvent:
        self._seq += 1
        ev = SessionEvent(seq=self._seq, ts=now, kind=kind, payload=payload)
        self.events.append(ev)
        if self.sink is not None:
            self.sink.append(ev)
        return ev

    def _note(self, now: int, code: str, extra: Optional[dict[str, Any]] = None) -> None:
        payload: dict[str, Any] = {"code": code}
        if extra:
            payload.update(extra)
        self._emit(now, EventKind.SYSTEM_NOTE, payload)

    def _warn_sender(self, now: int, code: str, detail: str, extra: Optional[dict[str, Any]] = None) -> None:
        """Log a rejected/no-op operator command and answer the sender with a
        warning (the gateway turns it into an error frame in place of the ack)."""
        self._note(now, code, extra)
        self._effect("sender", "error", {"code": "rejected", "detail": detail})

    def _effect(self, target: str, kind: str, payload: dict[str, Any]) -> None:
        self._effects.append(Effect(target, kind, payload))

    def drain_effects(self) -> list[Effect]:
        out, self._effects = self._effects, []
        return out

    def state_payload(self) -> dict[str, Any]:
        ep = self.machine.episode
        episode = None
        if ep is not None:
            episode = {
                "strategy": ep.kind.value,
                "episode_id": ep.episode_id,
                "phase_index": ep.phase_index,
                "addressees": [r.value for r in self.machine.current_addressees()],
                "turns_taken": ep.turns_taken,
            }
        timer = None
        if self.timer is not None:
            timer = {"remaining_ms": self.timer.remaining(self._now), "paused": self.timer.paused}
        return {
            "episode": episode,
            "game_phase": self.phase.value,
            "roles": self.roles.to_dict(),
            "timer": timer,
            "speaking": self.speaking(),
            "behavior": {
                "script": self.behavior.script.id if self.behavior.script else None,
                "phase": self.behavior.active_phase,
            },
        }

    def _push_state(self) -> None:
        self._effect("all", "state_update", self.state_payload())

    def _push_timer(self, now: int) -> None:
        if self.timer is not None:
            self._effect(
                "all", "timer_update",
                {"remaining_ms": self.timer.remaining(now), "paused": self.timer.paused},
            )

    def _pause_timer(self, now: int) -> None:
        assert self.timer is not None
        try:
            self.timer.pause(now)
        except TimerProtocolError as e:
            self._note(now, "timer_protocol_violation", {"detail": str(e)})
            return
        self._emit(now, EventKind.TIMER_PAUSED, {"remaining_ms": self.timer.remaining(now)})
        self._push_timer(now)

    def _resume_timer(self, now: int) -> None:
        assert self.timer is not None
        try:
            self.timer.resume(now)
        except TimerProtocolError as e:
            self._note(now, "timer_protocol_violation", {"detail": str(e)})
            return
        self._emit(now, EventKind.TIMER_RESUMED, {"remaining_ms": self.timer.remaining(now)})
        self._push_timer(now)

    def _add_entry(
        self, now: int, speaker: str, text: str, t_start: int, t_end: int, source: TranscriptSource
    ) -> TranscriptEntry:
        self._entry_id += 1
        entry = TranscriptEntry(self._entry_id, speaker, text, t_start, t_end, source)
        self.transcript[entry.id] = entry
        self._emit(now, EventKind.TRANSCRIPT_ADDED, {"entry": entry.to_dict()})
        self._effect("operators", "transcript_update", {"entry": entry.to_dict()})
        return entry

    def _tick_behavior(self, now: int) -> None:
        commands, entered = self.behavior.tick(now)
        self._dispatch_behavior(now, commands, entered)

    def _dispatch_behavior(self, now, commands, entered) -> None:
        for script_id, phase_name in entered:
            self._emit(now, EventKind.BEHAVIOR_STARTED, {"script": script_id, "phase": phase_name})
        if commands:
            self.metrics.behavior_commands += len(commands)
            self._effect("robot", "behavior_command_batch", {"commands": [c.to_dict() for c in commands]})

    def _start_behavior(self, now: int, script_id: str, phase: Optional[str] = None) -> None:
        commands, entered = self.behavior.start(script_id, now, phase)
        self._dispatch_behavior(now, commands, entered)

    def _cancel_speaking(self, now: int) -> None:
        if self.speaking(now):
            self._speaking_until = now
            self.machine.bump_idle_anchor(now)
            self._effect("robot", "audio_chunk", {"cancel": True})

    # ------------------------------------------------------- operator input

    def operator_trigger(self, now: int, command: Union[str, StrategyKind, BehaviorCode]) -> list[Effect]:
        self.advance_to(now)
        cmd = parse_command(command)
        cmd_value = cmd.value
        if cmd is StrategyKind.STANDBY or (
            isinstance(cmd, BehaviorCode) and cmd is BehaviorCode.NO_STRESS
        ):
            return self._operator_end(now, cmd_value)
        if self.phase not in GAME_PHASES:
            self._warn_sender(
                now, "trigger_outside_session",
                f"cannot trigger during {self.phase.value}",
                {"command": cmd_value, "game_phase": self.phase.value},
            )
            return self.drain_effects()
        res = self.machine.trigger(cmd, now)
        assert res.episode is not None
        if res.preempted is not None:
            # preemption keeps the timer paused: the episode interval continues
            self._cancel_speaking(now)
            self._emit(now, EventKind.INTERVENTION_PREEMPTED, {
                "strategy": res.preempted.kind.value,
                "episode_id": res.preempted.episode_id,
                "turns_taken": res.preempted.turns_taken,
                "by": res.episode.kind.value,
            })
            self.history.clear()
        elif self.timer is not None:
            self._pause_timer(now)
        payload = {"command": cmd_value, "strategy": res.episode.kind.value, "episode_id": res.episode.episode_id}
        if isinstance(cmd, BehaviorCode):
            payload["trigger_code"] = cmd.value
        self._emit(now, EventKind.INTERVENTION_TRIGGERED, payload)
        self.metrics.episodes_by_strategy[res.episode.kind.value] = (
            self.metrics.episodes_by_strategy.get(res.episode.kind.value, 0) + 1
        )
        self.history.begin_episode(res.episode.episode_id)
        self._start_behavior(now, self.machine.specs[res.episode.kind].behavior_script_id)
        self._push_state()
        return self.drain_effects()

    def operator_end(self, now: int) -> list[Effect]:
        self.advance_to(now)
        return self._operator_end(now, "end")

    def _operator_end(self, now: int, command: str) -> list[Effect]:
        if self.machine.episode is None:
            self._warn_sender(now, "end_ignored", "no active episode", {"command": command})
            return self.drain_effects()
        self._cancel_speaking(now)
        res = self.machine.end(now, CompletionReason.OPERATOR_END)
        self._finish_episode(now, res)
        return self.drain_effects()

    def _finish_episode(self, now: int, res: MachineResult) -> None:
        assert res.completed is not None and res.completion_reason is not None
        episode = res.completed
        self._emit(now, EventKind.INTERVENTION_COMPLETED, {
            "strategy": episode.kind.value,
            "episode_id": episode.episode_id,
            "turns_taken": episode.turns_taken,
            "reason": res.completion_reason.value,
        })
        self.history.clear()
        if self.timer is not None and self.timer.paused:
            self._resume_timer(now)
        if episode.kind is StrategyKind.POSITIVE_REINFORCEMENT:
            # end-of-conversation flourish, which chains into the standby doze
            self._start_behavior(now, episode.kind.value, phase="flourish")
        else:
            self._start_behavior(now, StrategyKind.STANDBY.value)
        self._push_state()

    def operator_advance_phase(self, now: int) -> list[Effect]:
        self.advance_to(now)
        new = next_phase(self.phase)
        if new is None:
            self._warn_sender(now, "advance_ignored", "already in debrief", {"game_phase": self.phase.value})
            return self.drain_effects()
        if self.machine.episode is not None:
            self._cancel_speaking(now)
            res = self.machine.end(now, CompletionReason.PHASE_FORCED)
            self._finish_episode(now, res)
        old = self.phase
        self.phase = new
        if new is GamePhase.SESSION2:
            self.roles = self.roles.swapped()
        if new in GAME_PHASES:
            self.timer = GameTimer(budget_ms=self.config.budget_ms, started_at=now)
            self._timer_expired_noted = False
        else:
            self.timer = None
        self._emit(now, EventKind.PHASE_CHANGED, {
            "from": old.value, "to": new.value, "roles": self.roles.to_dict(),
        })
        self._push_timer(now)
        self._push_state()
        return self.drain_effects()

    def operator_annotate(self, now: int, entry_id: int, role: str) -> list[Effect]:
        self.advance_to(now)
        entry = self.transcript.get(entry_id)
        if entry is None or entry.speaker != UNKNOWN_SPEAKER or role not in (
            ParticipantRole.PARENT.value, ParticipantRole.CHILD.value,
        ):
            self._warn_sender(
                now, "annotate_rejected",
                f"entry {entry_id} missing, already attributed, or bad role",
                {"entry_id": entry_id, "role": role},
            )
            return self.drain_effects()
        updated = entry.with_speaker(role)
        self.transcript[entry_id] = updated
        self._emit(now, EventKind.OPERATOR_NOTE, {"code": "annotate_speaker", "entry_id": entry_id, "role": role})
        self._effect("operators", "transcript_update", {"entry": updated.to_dict()})
        return self.drain_effects()

    def operator_reassign_addressee(self, now: int, phase_index: int) -> list[Effect]:
        self.advance_to(now)
        res = self.machine.set_phase_index(phase_index)
        if res.warning:
            self._warn_sender(
                now, "reassign_rejected", res.warning or "rejected",
                {"phase_index": phase_index, "detail": res.warning},
            )
        else:
            self._emit(now, EventKind.OPERATOR_NOTE, {"code": "reassign_addressee", "phase_index": phase_index})
            self._push_state()
        return self.drain_effects()

    def operator_note(self, now: int, text: str) -> list[Effect]:
        self.advance_to(now)
        self._emit(now, EventKind.OPERATOR_NOTE, {"code": "note", "text": text})
        return self.drain_effects()

    # ------------------------------------------------------------ utterances

    def utterance_text(
        self,
        now: int,
        text: str,
        declared_speaker: Optional[str] = None,
        t_start: Optional[int] = None,
        t_end: Optional[int] = None,
        channel: Optional[int] = None,
    ) -> list[Effect]:
        """Scripted or replayed human utterance; bypasses audio and ASR."""
        self.advance_to(now)
        self._handle_human_input(
            now,
            segment=None,
            text_override=text,
            declared_speaker=declared_speaker,
            channel=channel,
            t_start=t_start if t_start is not None else now,
            t_end=t_end if t_end is not None else now,
        )
        return self.drain_effects()

    def audio_chunk(self, now: int, samples: np.ndarray, channel: int = 0) -> list[Effect]:
        """Live microphone PCM; closed VAD segments become turns."""
        self.advance_to(now)
        ingest = self._ingests.get(channel)
        if ingest is None:
            ingest = self._ingests[channel] = AudioIngest(self.vad_config)
        for t_start, t_end, segment in ingest.push(now, samples):
            self._handle_human_input(now, segment, None, None, channel, t_start, t_end)
        return self.drain_effects()

    def audio_utterance(
        self,
        now: int,
        samples: np.ndarray,
        declared_speaker: Optional[str] = None,
        channel: Optional[int] = None,
    ) -> list[Effect]:
        """A self-contained audio utterance (simulation WAV path).

        ``now`` is the instant the utterance finished; the stream anchor is
        back-dated so segment times line up with when speech actually started.
        """
        self.advance_to(now)
        duration = len(samples) * 1000 // SAMPLE_RATE
        ingest = AudioIngest(self.vad_config, anchor_ms=now - duration)
        found = ingest.push(now, samples)
        found.extend(ingest.flush())
        for t_start, t_end, segment in found:
            self._handle_human_input(now, segment, None, declared_speaker, channel, t_start, t_end)
        return self.drain_effects()

    def speak_done(self, now: int) -> list[Effect]:
        """Robot reports playback finished (may be earlier than estimated)."""
        self.advance_to(now)
        if self._speaking_until is not None:
            self._speaking_until = None
            self.machine.bump_idle_anchor(now)
            self._push_state()
        return self.drain_effects()

    def _handle_human_input(
        self,
        now: int,
        segment: Optional[SpeechSegment],
        text_override: Optional[str],
        declared_speaker: Optional[str],
        channel: Optional[int],
        t_start: int,
        t_end: int,
    ) -> None:
        gate = gate_input(self.speaking(now), self.config.barge_in_enabled)
        if not gate.accept:
            self.metrics.suppressed_segments += 1
            return
        if gate.cancel_tts:
            self.metrics.barge_ins += 1
            self._cancel_speaking(now)
            self._note(now, "barge_in", {})
        speaker = self.attributor.attribute(declared=declared_speaker, channel=channel)

        if self.machine.episode is None:
            # standby: transcription continues, the LLM stays off
            text = text_override
            if text is None and segment is not None:
                try:
                    text = self.backends.asr.transcribe(segment).text
                except BackendError as e:
                    self._note(now, "turn_aborted", {"stage": "asr", "detail": str(e)})
                    return
            if text and text.strip():
                self._add_entry(now, speaker, text, t_start, t_end, TranscriptSource.ASR)
            return

        episode = self.machine.episode
        prompt = render_prompt(episode.kind)
        try:
            outcome = self.executor.run_turn(
                segment, prompt, self.history, speaker=speaker, text_override=text_override
            )
        except TurnAborted as e:
            self._note(now, "turn_aborted", {"stage": e.stage, "detail": str(e)})
            return
        if isinstance(outcome, TurnSkipped):
            self._note(now, "turn_skipped", {"reason": outcome.reason})
            return
        assert isinstance(outcome, TurnResult)

        self.machine.bump_idle_anchor(now)
        addressees = self.machine.current_addressees()
        if speaker != UNKNOWN_SPEAKER and addressees and all(speaker != r.value for r in addressees):
            self._note(now, "addressee_mismatch", {
                "speaker": speaker, "addressees": [r.value for r in addressees],
            })

        self._add_entry(now, speaker, outcome.human_text, t_start, t_end, TranscriptSource.ASR)
        audio_ms = outcome.audio_ms
        self._add_entry(
            now, ParticipantRole.ROBOT.value, outcome.robot_text, now, now + audio_ms,
            TranscriptSource.LLM_RESPONSE,
        )
        for chunk in outcome.audio:
            self._effect("robot", "audio_chunk", {
                "idx": chunk.idx,
                "pcm_b64": _b64(chunk.samples),
            })
        if audio_ms > 0:
            self._speaking_until = now + audio_ms
        self.metrics.latencies_ms.append(outcome.latency.response_gap)
        strategy = episode.kind.value
        self.metrics.turns_by_strategy[strategy] = self.metrics.turns_by_strategy.get(strategy, 0) + 1

        res = self.machine.on_turn_completed(now)
        if res.completed is not None:
            self._finish_episode(now, res)
        else:
            self._push_state()

    # --------------------------------------------------------------- sensors

    def sensor_event(self, now: int, event: bhv.SensorEvent) -> list[Effect]:
        self.advance_to(now)
        self._emit(now, EventKind.SENSOR_FIRED, event.to_dict())
        self.behavior.on_sensor(event)
        self._tick_behavior(now)
        return self.drain_effects()

    # ----------------------------------------------------------------- misc

    def segment_fingerprint(self, segment: SpeechSegment) -> str:
        return segment_fingerprint(segment)


def _b64(samples: np.ndarray) -> str:
    return pcm_to_b64(samples)
