"""Energy-hysteresis voice activity detection.

Audio is fixed at 16 kHz signed 16-bit mono, cut into 20 ms frames
(320 samples), so all frame math is exact. A frame is speech when its RMS
level exceeds an adaptive noise floor by a configurable margin; a hangover
window keeps trailing frames active so word endings are not chopped off.
"""

from __future__ import annotations

import math
import wave
from dataclasses import dataclass, replace
from typing import Iterable, Iterator, Optional

import numpy as np

SAMPLE_RATE = 16_000
FRAME_MS = 20
FRAME_SAMPLES = SAMPLE_RATE * FRAME_MS // 1000  # 320
FULL_SCALE = 32768.0
#: Floor for level measurements; roughly the 16-bit noise floor.
MIN_DBFS = -96.0


class FrameFormatError(ValueError):
    """Frame is not 320 samples of 16-bit mono PCM."""


@dataclass(frozen=True)
class AudioFrame:
    samples: np.ndarray  # int16, shape (320,)
    index: int

    def __post_init__(self) -> None:
        if self.samples.dtype != np.int16 or self.samples.shape != (FRAME_SAMPLES,):
            raise FrameFormatError(
                f"expected {FRAME_SAMPLES} int16 samples, got {self.samples.dtype} {self.samples.shape}"
            )

    @property
    def start_ms(self) -> int:
        return self.index * FRAME_MS

    def rms_dbfs(self) -> float:
        x = self.samples.astype(np.float64) / FULL_SCALE
        rms = math.sqrt(float(np.mean(x * x)))
        if rms <= 0.0:
            return MIN_DBFS
        return max(MIN_DBFS, 20.0 * math.log10(rms))


@dataclass(frozen=True)
class VadConfig:
    energy_threshold_db: float = 12.0
    noise_floor_adaptation: float = 0.05
    hangover_ms: int = 300
    min_speech_ms: int = 200
    initial_floor_dbfs: float = -60.0

    def __post_init__(self) -> None:
        if not 0.0 < self.noise_floor_adaptation < 1.0:
            raise ValueError("noise_floor_adaptation must be in (0,1)")
        if self.energy_threshold_db < 0:
            raise ValueError("energy_threshold_db must be non-negative")
        for name in ("hangover_ms", "min_speech_ms"):
            v = getattr(self, name)
            if v < 0 or v % FRAME_MS != 0:
                raise ValueError(f"{name} must be a non-negative multiple of {FRAME_MS} ms")

    @property
    def hangover_frames(self) -> int:
        return self.hangover_ms // FRAME_MS

    @property
    def min_speech_frames(self) -> int:
        return self.min_speech_ms // FRAME_MS


@dataclass(frozen=True)
class VadState:
    noise_floor_db: float
    hangover_left: int = 0

    @classmethod
    def fresh(cls, cfg: VadConfig) -> "VadState":
        return cls(noise_floor_db=cfg.initial_floor_dbfs)


@dataclass(frozen=True)
class SpeechSegment:
    """A contiguous run of speech frames, hangover extension included."""

    start_ms: int
    end_ms: int
    samples: np.ndarray  # int16, concatenated frames

    @property
    def duration_ms(self) -> int:
        return self.end_ms - self.start_ms


def classify_frame(frame: AudioFrame, state: VadState, cfg: VadConfig) -> tuple[VadState, bool]:
    """Classify one frame as speech-active and advance the detector state.

    Active when the frame level exceeds floor + threshold, or when a prior
    active frame occurred within the hangover window. The noise floor adapts
    (exponential smoothing) on non-speech frames only.
    """
    level = frame.rms_dbfs()
    raw_active = level > state.noise_floor_db + cfg.energy_threshold_db
    if raw_active:
        return replace(state, hangover_left=cfg.hangover_frames), True
    floor = state.noise_floor_db + cfg.noise_floor_adaptation * (level - state.noise_floor_db)
    if state.hangover_left > 0:
        return VadState(noise_floor_db=floor, hangover_left=state.hangover_left - 1), True
    return VadState(noise_floor_db=floor, hangover_left=0), False


class StreamSegmenter:
    """Incremental segmenter: push frames, collect closed SpeechSegments.

    Segments are maximal runs of active frames (hangover included); runs
    shorter than min_speech_ms are dropped. A single consumer owns this
    object; parallel streams need separate instances.
    """

    def __init__(self, cfg: Optional[VadConfig] = None):
        self.cfg = cfg or VadConfig()
        self.state = VadState.fresh(self.cfg)
        self._run: list[AudioFrame] = []
        self._next_index = 0

    def push(self, frame: AudioFrame) -> Optional[SpeechSegment]:
        """Feed the next frame; returns a segment when one just closed."""
        if frame.index != self._next_index:
            raise FrameFormatError(f"frames not contiguous: expected index {self._next_index}, got {frame.index}")
        self._next_index += 1
        self.state, active = classify_frame(frame, self.state, self.cfg)
        if active:
            self._run.append(frame)
            return None
        return self._close_run()

    def flush(self) -> Optional[SpeechSegment]:
        """Close any run still open at end of stream."""
        return self._close_run()

    def _close_run(self) -> Optional[SpeechSegment]:
        if not self._run:
            return None
        run, self._run = self._run, []
        if len(run) < self.cfg.min_speech_frames:
            return None
        return SpeechSegment(
            start_ms=run[0].start_ms,
            end_ms=run[-1].start_ms + FRAME_MS,
            samples=np.concatenate([f.samples for f in run]),
        )


def segment_stream(frames: Iterable[AudioFrame], cfg: Optional[VadConfig] = None) -> list[SpeechSegment]:
    """Segment a complete frame sequence. Disjoint, ordered segments."""
    seg = StreamSegmenter(cfg)
    out = []
    for frame in frames:
        closed = seg.push(frame)
        if closed:
            out.append(closed)
    tail = seg.flush()
    if tail:
        out.append(tail)
    return out


def frames_from_pcm(samples: np.ndarray, start_index: int = 0) -> Iterator[AudioFrame]:
    """Cut int16 PCM into frames; a trailing partial frame is zero-padded."""
    samples = np.asarray(samples, dtype=np.int16)
    n_frames = (len(samples) + FRAME_SAMPLES - 1) // FRAME_SAMPLES
    for i in range(n_frames):
        chunk = samples[i * FRAME_SAMPLES:(i + 1) * FRAME_SAMPLES]
        if len(chunk) < FRAME_SAMPLES:
            chunk = np.concatenate([chunk, np.zeros(FRAME_SAMPLES - len(chunk), dtype=np.int16)])
        yield AudioFrame(samples=chunk, index=start_index + i)


def read_wav(path: str) -> np.ndarray:
    """Load a 16 kHz mono PCM-16 WAV file as int16 samples."""
    with wave.open(path, "rb") as w:
        if w.getsampwidth() != 2 or w.getnchannels() != 1 or w.getframerate() != SAMPLE_RATE:
            raise FrameFormatError(
                f"{path}: need {SAMPLE_RATE} Hz mono 16-bit PCM, got "
                f"{w.getframerate()} Hz x{w.getnchannels()} width {w.getsampwidth()}"
            )
        data = w.readframes(w.getnframes())
    return np.frombuffer(data, dtype="<i2").astype(np.int16)
