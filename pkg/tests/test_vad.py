import numpy as np
import pytest

from conftest import random_stream, silence, tone
from oracles import vad_oracle_segments

from dyadbot.vad import (
    AudioFrame,
    FRAME_SAMPLES,
    FrameFormatError,
    SpeechSegment,
    VadConfig,
    VadState,
    classify_frame,
    frames_from_pcm,
    read_wav,
    segment_stream,
)


def frames(samples):
    return list(frames_from_pcm(samples))


def seg_bounds(segments):
    return [(s.start_ms, s.end_ms) for s in segments]


class TestClassifyFrame:
    def test_zero_frame_inactive(self):
        cfg = VadConfig()
        frame = AudioFrame(np.zeros(FRAME_SAMPLES, dtype=np.int16), index=0)
        _, active = classify_frame(frame, VadState.fresh(cfg), cfg)
        assert active is False

    def test_full_scale_square_wave_active(self):
        cfg = VadConfig(energy_threshold_db=12.0, initial_floor_dbfs=-60.0)
        square = np.full(FRAME_SAMPLES, 32767, dtype=np.int16)
        square[::2] = -32768
        _, active = classify_frame(AudioFrame(square, index=0), VadState.fresh(cfg), cfg)
        assert active is True

    def test_silence_within_hangover_stays_active(self):
        cfg = VadConfig(hangover_ms=300)
        state = VadState.fresh(cfg)
        stream = np.concatenate([tone(100), silence(120)])
        actives = []
        for frame in frames(stream):
            state, active = classify_frame(frame, state, cfg)
            actives.append(active)
        # silence frame 100 ms after the last active frame: inside hangover
        assert actives[frames_index_at_ms(200)] is True

    def test_malformed_frame_rejected(self):
        with pytest.raises(FrameFormatError):
            AudioFrame(np.zeros(100, dtype=np.int16), index=0)
        with pytest.raises(FrameFormatError):
            AudioFrame(np.zeros(FRAME_SAMPLES, dtype=np.float32), index=0)

    def test_noise_floor_adapts_on_silence_only(self):
        cfg = VadConfig(noise_floor_adaptation=0.1)
        state = VadState.fresh(cfg)
        state2, active = classify_frame(frames(tone(20))[0], state, cfg)
        assert active and state2.noise_floor_db == state.noise_floor_db
        state3, active = classify_frame(frames(silence(20))[0], VadState.fresh(cfg), cfg)
        assert not active and state3.noise_floor_db < VadState.fresh(cfg).noise_floor_db


def frames_index_at_ms(ms):
    return ms // 20


class TestSegmentStream:
    def test_digital_silence_yields_nothing(self):
        assert segment_stream(frames(silence(2000))) == []

    def test_fixture_tone_segment(self):
        # 500 ms silence, 1000 ms tone, 1000 ms silence -> [500, 1800] with
        # the 300 ms hangover extension
        cfg = VadConfig(hangover_ms=300, min_speech_ms=200)
        stream = np.concatenate([silence(500), tone(1000, amplitude=0.9), silence(1000)])
        assert seg_bounds(segment_stream(frames(stream), cfg)) == [(500, 1800)]

    def test_fixture_min_speech_filters_segment(self):
        cfg = VadConfig(hangover_ms=300, min_speech_ms=1500)
        stream = np.concatenate([silence(500), tone(1000, amplitude=0.9), silence(1000)])
        assert segment_stream(frames(stream), cfg) == []

    def test_empty_input(self):
        assert segment_stream([]) == []

    def test_non_contiguous_frames_rejected(self):
        fs = frames(tone(100))
        with pytest.raises(FrameFormatError):
            segment_stream([fs[0], fs[2]])

    def test_segment_carries_concatenated_samples(self):
        cfg = VadConfig()
        stream = np.concatenate([tone(400, amplitude=0.9), silence(600)])
        (seg,) = segment_stream(frames(stream), cfg)
        assert seg.duration_ms == seg.end_ms - seg.start_ms
        assert len(seg.samples) == seg.duration_ms * 16


class TestOracleEquivalence:
    def test_fixture_matches_oracle(self):
        stream = np.concatenate([silence(500), tone(1000, amplitude=0.9), silence(1000)])
        expected = vad_oracle_segments(stream.tolist())
        assert seg_bounds(segment_stream(frames(stream))) == expected

    def test_random_streams_frame_exact(self, rng):
        for _ in range(40):
            stream = random_stream(rng)
            expected = vad_oracle_segments(stream.tolist())
            got = seg_bounds(segment_stream(frames(stream)))
            assert got == expected

    def test_determinism(self, rng):
        stream = random_stream(rng)
        a = seg_bounds(segment_stream(frames(stream)))
        b = seg_bounds(segment_stream(frames(stream)))
        assert a == b

    def test_lower_threshold_never_shrinks_coverage(self, rng):
        for _ in range(15):
            stream = random_stream(rng)
            hi = VadConfig(energy_threshold_db=18.0)
            lo = VadConfig(energy_threshold_db=6.0)
            covered_hi = coverage(segment_stream(frames(stream), hi))
            covered_lo = coverage(segment_stream(frames(stream), lo))
            assert covered_hi <= covered_lo


def coverage(segments):
    out = set()
    for seg in segments:
        out.update(range(seg.start_ms, seg.end_ms, 20))
    return out


class TestWav:
    def test_wav_round_trip(self, tmp_path):
        import wave

        path = tmp_path / "t.wav"
        data = tone(300)
        with wave.open(str(path), "wb") as w:
            w.setnchannels(1)
            w.setsampwidth(2)
            w.setframerate(16000)
            w.writeframes(data.tobytes())
        loaded = read_wav(str(path))
        assert np.array_equal(loaded, data)

    def test_wrong_rate_rejected(self, tmp_path):
        import wave

        path = tmp_path / "t.wav"
        with wave.open(str(path), "wb") as w:
            w.setnchannels(1)
            w.setsampwidth(2)
            w.setframerate(8000)
            w.writeframes(b"\x00\x00" * 100)
        with pytest.raises(FrameFormatError):
            read_wav(str(path))


class TestConfigValidation:
    def test_hangover_must_be_frame_multiple(self):
        with pytest.raises(ValueError):
            VadConfig(hangover_ms=250)

    def test_adaptation_in_open_interval(self):
        with pytest.raises(ValueError):
            VadConfig(noise_floor_adaptation=0.0)
        with pytest.raises(ValueError):
            VadConfig(noise_floor_adaptation=1.0)
