"""The speech cascade: segment -> ASR -> LLM (with history) -> TTS.

One turn runs end to end under the active intervention's system prompt. LLM
output is streamed sentence-by-sentence into TTS so audio starts before the
full reply exists; per-stage wall timestamps feed the latency report. The
turn-taking target is a sub-300 ms response gap, of which this engine may
spend at most ~50 ms itself.
"""

from __future__ import annotations

import re
import time
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Union

import numpy as np

from .backends import BackendError, BackendSet, BackendTimeout, Transcription
from .core import UNKNOWN_SPEAKER, ParticipantRole
from .vad import SAMPLE_RATE, SpeechSegment

DEFAULT_STAGE_TIMEOUT_MS = 10_000

_SENTENCE_RE = re.compile(r"[^.!?\n]*[.!?\n]\s*")


def now_wall_ms() -> float:
    return time.perf_counter() * 1000.0


class TurnAborted(RuntimeError):
    """A backend failed or timed out; history is unchanged."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class ConversationHistory:
    """Per-episode dialogue record passed to the LLM in full each call.

    Grows by exactly one human and one robot entry per completed turn;
    cleared when the episode ends (the LLM is deactivated at standby).
    """

    episode_id: Optional[int] = None
    entries: list[tuple[str, str]] = field(default_factory=list)

    def begin_episode(self, episode_id: int) -> None:
        self.episode_id = episode_id
        self.entries = []

    def clear(self) -> None:
        self.episode_id = None
        self.entries = []

    def commit_turn(self, human_role: str, human_text: str, robot_text: str) -> None:
        self.entries.append((human_role, human_text))
        self.entries.append((ParticipantRole.ROBOT.value, robot_text))


@dataclass(frozen=True)
class TurnLatencyReport:
    """Wall-clock stage timestamps (ms); non-decreasing in field order."""

    t_speech_end: float
    t_asr_done: float
    t_llm_first_token: float
    t_tts_first_audio: float

    @property
    def response_gap(self) -> float:
        return self.t_tts_first_audio - self.t_speech_end

    def as_dict(self) -> dict[str, float]:
        return {
            "t_speech_end": self.t_speech_end,
            "t_asr_done": self.t_asr_done,
            "t_llm_first_token": self.t_llm_first_token,
            "t_tts_first_audio": self.t_tts_first_audio,
            "response_gap": self.response_gap,
        }


@dataclass(frozen=True)
class AudioOut:
    idx: int
    samples: np.ndarray  # int16 PCM, 16 kHz mono

    @property
    def duration_ms(self) -> int:
        return len(self.samples) * 1000 // SAMPLE_RATE


@dataclass(frozen=True)
class TurnResult:
    human_text: str
    robot_text: str
    audio: tuple[AudioOut, ...]
    latency: TurnLatencyReport

    @property
    def audio_ms(self) -> int:
        return sum(a.duration_ms for a in self.audio)


@dataclass(frozen=True)
class TurnSkipped:
    """Empty ASR result; nothing was added to the history."""

    reason: str = "empty_transcription"


def split_sentences(chunks: Iterator[str]) -> Iterator[str]:
    """Re-segment an irregular token stream into sentence-sized pieces."""
    buf = ""
    for chunk in chunks:
        buf += chunk
        while True:
            m = _SENTENCE_RE.match(buf)
            if not m or m.end() == 0:
                break
            yield buf[: m.end()]
            buf = buf[m.end():]
    if buf.strip():
        yield buf


class TurnExecutor:
    """Runs one cascade turn at a time; the caller owns the half-duplex gate."""

    def __init__(
        self,
        backends: BackendSet,
        stage_timeout_ms: int = DEFAULT_STAGE_TIMEOUT_MS,
        wall_clock: Callable[[], float] = now_wall_ms,
    ):
        self.backends = backends
        self.stage_timeout_ms = stage_timeout_ms
        self.wall = wall_clock

    def run_turn(
        self,
        segment: Optional[SpeechSegment],
        system_prompt: str,
        history: ConversationHistory,
        speaker: str = UNKNOWN_SPEAKER,
        text_override: Optional[str] = None,
    ) -> Union[TurnResult, TurnSkipped]:
        """Execute ASR -> LLM -> TTS for one human utterance.

        ``text_override`` bypasses ASR (scripted utterances). History is
        committed only on success: an aborted turn leaves it byte-identical.
        """
        t_speech_end = self.wall()

        if text_override is not None:
            human_text = text_override
        else:
            if segment is None:
                raise ValueError("need a speech segment or a text override")
            try:
                tx: Transcription = self.backends.asr.transcribe(segment)
            except BackendTimeout as e:
                raise TurnAborted("asr", e) from e
            except BackendError as e:
                raise TurnAborted("asr", e) from e
            human_text = tx.text
        t_asr_done = self.wall()

        if not human_text.strip():
            return TurnSkipped()

        pending = history.entries + [(speaker, human_text)]

        audio: list[AudioOut] = []
        tokens: list[str] = []
        t_llm_first: Optional[float] = None
        t_tts_first: Optional[float] = None
        idx = 0
        try:
            stream = self.backends.llm.generate(system_prompt, pending)

            def timed_tokens() -> Iterator[str]:
                nonlocal t_llm_first
                for tok in stream:
                    if t_llm_first is None and tok:
                        t_llm_first = self.wall()
                    tokens.append(tok)
                    yield tok

            for sentence in split_sentences(timed_tokens()):
                for samples in self.backends.tts.synthesize(sentence):
                    if t_tts_first is None:
                        t_tts_first = self.wall()
                    audio.append(AudioOut(idx, samples))
                    idx += 1
        except BackendTimeout as e:
            raise TurnAborted("llm/tts", e) from e
        except BackendError as e:
            raise TurnAborted("llm/tts", e) from e

        robot_text = "".join(tokens).strip()
        done = self.wall()
        latency = TurnLatencyReport(
            t_speech_end=t_speech_end,
            t_asr_done=t_asr_done,
            t_llm_first_token=t_llm_first if t_llm_first is not None else t_asr_done,
            t_tts_first_audio=t_tts_first if t_tts_first is not None else done,
        )

        history.commit_turn(speaker, human_text, robot_text)
        return TurnResult(human_text, robot_text, tuple(audio), latency)


@dataclass(frozen=True)
class GateDecision:
    accept: bool
    cancel_tts: bool = False


def gate_input(speaking: bool, barge_in_enabled: bool, segment: object = None) -> GateDecision:
    """Half-duplex turn gate.

    While the robot is speaking, incoming speech is suppressed unless
    barge-in is enabled, in which case it is accepted and current playback
    must be cancelled.
    """
    if not speaking:
        return GateDecision(accept=True)
    if barge_in_enabled:
        return GateDecision(accept=True, cancel_tts=True)
    return GateDecision(accept=False)


@dataclass
class SpeakerAttributor:
    """Attribution hook. Default: everyone is unknown (no diarization).

    Pluggable signals: a declared speaker (scripted utterances), or a
    microphone-channel map when per-speaker channels are configured.
    Operator re-tagging of stored entries happens upstream.
    """

    channel_roles: dict[int, str] = field(default_factory=dict)

    def attribute(self, declared: Optional[str] = None, channel: Optional[int] = None) -> str:
        if declared is not None:
            return declared
        if channel is not None and channel in self.channel_roles:
            return self.channel_roles[channel]
        return UNKNOWN_SPEAKER
