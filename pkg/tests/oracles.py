"""Independent brute-force oracles, written before the streaming code paths.

The VAD oracle applies the threshold/adaptation/hangover/min-length rules
frame by frame in plain Python over the whole signal at once. It shares no
code with dyadbot.vad; tests assert frame-exact agreement.
"""

from __future__ import annotations

import math

FRAME = 320
FRAME_MS = 20
MIN_DBFS = -96.0


def frame_level_dbfs(samples: list[int]) -> float:
    acc = 0
    for s in samples:
        acc += s * s
    mean_sq = acc / len(samples) / (32768.0 * 32768.0)
    if mean_sq <= 0.0:
        return MIN_DBFS
    return max(MIN_DBFS, 20.0 * math.log10(math.sqrt(mean_sq)))


def vad_oracle_segments(
    samples: list[int],
    energy_threshold_db: float = 12.0,
    noise_floor_adaptation: float = 0.05,
    hangover_ms: int = 300,
    min_speech_ms: int = 200,
    initial_floor_dbfs: float = -60.0,
) -> list[tuple[int, int]]:
    """(start_ms, end_ms) speech segments of a complete int16 stream."""
    samples = list(samples)
    if len(samples) % FRAME:
        samples.extend([0] * (FRAME - len(samples) % FRAME))

    hangover_frames = hangover_ms // FRAME_MS
    min_frames = min_speech_ms // FRAME_MS

    floor = initial_floor_dbfs
    hang_left = 0
    flags: list[bool] = []
    for i in range(0, len(samples), FRAME):
        level = frame_level_dbfs(samples[i:i + FRAME])
        raw = level > floor + energy_threshold_db
        if raw:
            hang_left = hangover_frames
            flags.append(True)
        else:
            floor = floor + noise_floor_adaptation * (level - floor)
            if hang_left > 0:
                hang_left -= 1
                flags.append(True)
            else:
                flags.append(False)

    segments: list[tuple[int, int]] = []
    run_start = None
    for idx, active in enumerate(flags + [False]):
        if active and run_start is None:
            run_start = idx
        elif not active and run_start is not None:
            if idx - run_start >= min_frames:
                segments.append((run_start * FRAME_MS, idx * FRAME_MS))
            run_start = None
    return segments
