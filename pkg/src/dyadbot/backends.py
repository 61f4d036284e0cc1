"""Speech-stage backends: ASR, LLM and TTS behind small pluggable contracts.

No model inference lives in this repo. Deterministic mocks cover tests and
simulation; the ``External*`` adapters speak a one-request-per-call JSON
contract so real model servers can be attached without code changes.
"""

from __future__ import annotations

import base64
import hashlib
import time
from dataclasses import dataclass, field
from typing import Iterator, Optional, Protocol

import numpy as np

from .vad import SAMPLE_RATE, SpeechSegment

#: Synthetic speech pacing for the mock TTS.
MOCK_TTS_MS_PER_CHAR = 60
TTS_CHUNK_MS = 200


class BackendError(RuntimeError):
    pass


class BackendTimeout(BackendError):
    """A stage exceeded its response deadline; the turn must abort."""


@dataclass(frozen=True)
class Transcription:
    text: str
    confidence: float = 1.0


class AsrBackend(Protocol):
    def transcribe(self, segment: SpeechSegment) -> Transcription: ...


class LlmBackend(Protocol):
    def generate(self, system_prompt: str, history: list[tuple[str, str]]) -> Iterator[str]: ...


class TtsBackend(Protocol):
    def synthesize(self, text: str) -> Iterator[np.ndarray]: ...


def segment_fingerprint(segment: SpeechSegment) -> str:
    """Stable identity of a speech segment's audio content."""
    return hashlib.sha1(segment.samples.tobytes()).hexdigest()


@dataclass
class ScriptedAsr:
    """Deterministic ASR: fingerprint lookup, then scripted queue, then a
    duration-based placeholder."""

    by_fingerprint: dict[str, str] = field(default_factory=dict)
    queue: list[str] = field(default_factory=list)

    def transcribe(self, segment: SpeechSegment) -> Transcription:
        fp = segment_fingerprint(segment)
        if fp in self.by_fingerprint:
            return Transcription(self.by_fingerprint[fp])
        if self.queue:
            return Transcription(self.queue.pop(0))
        return Transcription(f"[speech {segment.duration_ms} ms]", confidence=0.5)


class EchoLlm:
    """Returns the latest human utterance verbatim, streamed word by word."""

    def __init__(self):
        self.calls = 0

    def generate(self, system_prompt: str, history: list[tuple[str, str]]) -> Iterator[str]:
        self.calls += 1
        text = history[-1][1] if history else ""
        words = text.split(" ")
        for i, w in enumerate(words):
            yield w if i == len(words) - 1 else w + " "


class ScriptedLlm:
    """Cycles through canned reply lines; counts calls for instrumentation."""

    def __init__(self, lines: Optional[list[str]] = None):
        self.lines = lines or ["I hear you. Let's take this one step at a time."]
        self.calls = 0
        self.calls_history: list[tuple[str, int]] = []

    def generate(self, system_prompt: str, history: list[tuple[str, str]]) -> Iterator[str]:
        line = self.lines[self.calls % len(self.lines)]
        self.calls += 1
        self.calls_history.append((system_prompt, len(history)))
        # stream in word-sized tokens
        words = line.split(" ")
        for i, w in enumerate(words):
            yield w if i == len(words) - 1 else w + " "


class JitterLlm:
    """Streams a fixed text in irregular chunk sizes; for ordering tests."""

    def __init__(self, text: str, seed: int = 7):
        self.text = text
        self.seed = seed

    def generate(self, system_prompt: str, history: list[tuple[str, str]]) -> Iterator[str]:
        rng = np.random.RandomState(self.seed)
        i = 0
        while i < len(self.text):
            size = int(rng.randint(1, 9))
            yield self.text[i:i + size]
            i += size


class SilenceTts:
    """Synthetic TTS: silence lasting MOCK_TTS_MS_PER_CHAR per character."""

    def __init__(self, ms_per_char: int = MOCK_TTS_MS_PER_CHAR, chunk_ms: int = TTS_CHUNK_MS):
        self.ms_per_char = ms_per_char
        self.chunk_ms = chunk_ms

    def synthesize(self, text: str) -> Iterator[np.ndarray]:
        total_ms = self.ms_per_char * len(text)
        if total_ms <= 0:
            return
        chunk_samples = SAMPLE_RATE * self.chunk_ms // 1000
        remaining = SAMPLE_RATE * total_ms // 1000
        while remaining > 0:
            n = min(chunk_samples, remaining)
            remaining -= n
            yield np.zeros(n, dtype=np.int16)


@dataclass
class DelayedAsr:
    """Wraps an ASR backend with a fixed real-time delay (bench harness)."""

    inner: AsrBackend
    delay_ms: float

    def transcribe(self, segment: SpeechSegment) -> Transcription:
        time.sleep(self.delay_ms / 1000.0)
        return self.inner.transcribe(segment)


class FailingBackend:
    """Raises BackendTimeout on any call; for abort-path tests."""

    def transcribe(self, segment):
        raise BackendTimeout("asr timed out")

    def generate(self, system_prompt, history):
        raise BackendTimeout("llm timed out")
        yield  # pragma: no cover

    def synthesize(self, text):
        raise BackendTimeout("tts timed out")


def pcm_to_b64(samples: np.ndarray) -> str:
    return base64.b64encode(np.asarray(samples, dtype="<i2").tobytes()).decode("ascii")


def b64_to_pcm(data: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(data), dtype="<i2").astype(np.int16)


class ExternalAsr:
    """POST {"pcm_b64", "sample_rate"} -> {"text", "confidence"?}."""

    def __init__(self, url: str, timeout_ms: int = 10_000):
        self.url = url
        self.timeout_ms = timeout_ms

    def transcribe(self, segment: SpeechSegment) -> Transcription:
        import httpx

        try:
            resp = httpx.post(
                self.url,
                json={"pcm_b64": pcm_to_b64(segment.samples), "sample_rate": SAMPLE_RATE},
                timeout=self.timeout_ms / 1000.0,
            )
            resp.raise_for_status()
            body = resp.json()
        except httpx.TimeoutException as e:
            raise BackendTimeout(f"asr: {e}") from e
        except Exception as e:
            raise BackendError(f"asr: {e}") from e
        return Transcription(str(body["text"]), float(body.get("confidence", 1.0)))


class ExternalLlm:
    """POST {"system_prompt", "history"} -> {"text"}; non-streaming servers
    are adapted to the streaming contract by yielding the whole reply once."""

    def __init__(self, url: str, timeout_ms: int = 10_000):
        self.url = url
        self.timeout_ms = timeout_ms

    def generate(self, system_prompt: str, history: list[tuple[str, str]]) -> Iterator[str]:
        import httpx

        try:
            resp = httpx.post(
                self.url,
                json={"system_prompt": system_prompt, "history": [[r, t] for r, t in history]},
                timeout=self.timeout_ms / 1000.0,
            )
            resp.raise_for_status()
            body = resp.json()
        except httpx.TimeoutException as e:
            raise BackendTimeout(f"llm: {e}") from e
        except Exception as e:
            raise BackendError(f"llm: {e}") from e
        yield str(body["text"])


class ExternalTts:
    """POST {"text"} -> {"pcm_b64"}; the blob is re-chunked locally."""

    def __init__(self, url: str, timeout_ms: int = 10_000, chunk_ms: int = TTS_CHUNK_MS):
        self.url = url
        self.timeout_ms = timeout_ms
        self.chunk_ms = chunk_ms

    def synthesize(self, text: str) -> Iterator[np.ndarray]:
        import httpx

        try:
            resp = httpx.post(self.url, json={"text": text}, timeout=self.timeout_ms / 1000.0)
            resp.raise_for_status()
            pcm = b64_to_pcm(resp.json()["pcm_b64"])
        except httpx.TimeoutException as e:
            raise BackendTimeout(f"tts: {e}") from e
        except Exception as e:
            raise BackendError(f"tts: {e}") from e
        step = SAMPLE_RATE * self.chunk_ms // 1000
        for i in range(0, len(pcm), step):
            yield pcm[i:i + step]


@dataclass
class BackendSet:
    asr: AsrBackend
    llm: LlmBackend
    tts: TtsBackend

    @classmethod
    def mocks(
        cls,
        asr: Optional[AsrBackend] = None,
        llm: Optional[LlmBackend] = None,
        tts: Optional[TtsBackend] = None,
    ) -> "BackendSet":
        return cls(asr=asr or ScriptedAsr(), llm=llm or ScriptedLlm(), tts=tts or SilenceTts())

    @classmethod
    def from_config(cls, cfg: dict) -> "BackendSet":
        """Build from config: {"kind": "mock"|"external", per-stage urls...}."""
        kind = cfg.get("kind", "mock")
        if kind == "mock":
            lines = cfg.get("llm_lines")
            return cls.mocks(llm=ScriptedLlm(lines) if lines else None)
        if kind == "external":
            timeout_ms = int(cfg.get("timeout_ms", 10_000))
            return cls(
                asr=ExternalAsr(cfg["asr_url"], timeout_ms),
                llm=ExternalLlm(cfg["llm_url"], timeout_ms),
                tts=ExternalTts(cfg["tts_url"], timeout_ms),
            )
        raise ValueError(f"unknown backend kind {kind!r}")
