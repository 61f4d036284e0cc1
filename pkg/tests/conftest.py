import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dyadbot.vad import SAMPLE_RATE


def silence(ms: int) -> np.ndarray:
    return np.zeros(SAMPLE_RATE * ms // 1000, dtype=np.int16)


def tone(ms: int, amplitude: float = 0.8, freq: float = 440.0) -> np.ndarray:
    n = SAMPLE_RATE * ms // 1000
    t = np.arange(n, dtype=np.float64) / SAMPLE_RATE
    return (amplitude * 32767 * np.sin(2 * np.pi * freq * t)).astype(np.int16)


def noise(ms: int, amplitude: float, rng: np.random.RandomState) -> np.ndarray:
    n = SAMPLE_RATE * ms // 1000
    return (amplitude * 32767 * rng.uniform(-1, 1, n)).astype(np.int16)


def random_stream(rng: np.random.RandomState, max_blocks: int = 8) -> np.ndarray:
    """Synthetic stream of silence / tone / noise blocks, frame-aligned."""
    blocks = []
    for _ in range(rng.randint(1, max_blocks + 1)):
        kind = rng.randint(0, 3)
        ms = int(rng.randint(1, 40)) * 20  # 20..780 ms, frame-aligned
        if kind == 0:
            blocks.append(silence(ms))
        elif kind == 1:
            blocks.append(tone(ms, amplitude=float(rng.uniform(0.2, 0.95))))
        else:
            blocks.append(noise(ms, amplitude=float(rng.uniform(0.0005, 0.9)), rng=rng))
    return np.concatenate(blocks)


@pytest.fixture
def rng() -> np.random.RandomState:
    return np.random.RandomState(20240811)
