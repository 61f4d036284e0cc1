import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dyadbot.timer import GameTimer, TimerProtocolError


class TestWorkedExamples:
    def test_single_intervention_arithmetic(self):
        # 900 s budget, 130 s of wall time, one 30 s intervention -> 800 s left
        t = GameTimer(budget_ms=900_000, started_at=0)
        t.pause(50_000)
        t.resume(80_000)
        assert t.remaining(130_000) == 800_000

    def test_zero_length_pause_changes_nothing(self):
        t = GameTimer(budget_ms=900_000, started_at=0)
        before = t.remaining(60_000)
        t.pause(60_000)
        t.resume(60_000)
        assert t.remaining(60_000) == before

    def test_two_interventions_ledger_sum(self):
        t = GameTimer(budget_ms=900_000, started_at=0)
        t.pause(10_000)
        t.resume(40_000)  # 30 s
        t.pause(100_000)
        t.resume(145_000)  # 45 s
        assert t.game_elapsed(300_000) == 225_000

    def test_open_interval_counts(self):
        t = GameTimer(budget_ms=900_000, started_at=0)
        t.pause(100_000)
        assert t.game_elapsed(150_000) == 100_000
        assert t.paused

    def test_remaining_clamps_at_zero(self):
        t = GameTimer(budget_ms=10_000, started_at=0)
        assert t.remaining(25_000) == 0
        assert t.expired(25_000)


class TestProtocol:
    def test_double_pause_rejected(self):
        t = GameTimer()
        t.pause(10)
        with pytest.raises(TimerProtocolError):
            t.pause(20)

    def test_resume_without_pause_rejected(self):
        with pytest.raises(TimerProtocolError):
            GameTimer().resume(10)

    def test_resume_before_pause_start_rejected(self):
        t = GameTimer()
        t.pause(100)
        with pytest.raises(TimerProtocolError):
            t.resume(50)


@st.composite
def pause_ledgers(draw):
    """Random alternating pause/resume instants plus a query time after all."""
    n = draw(st.integers(min_value=0, max_value=12))
    instants = sorted(draw(st.lists(st.integers(0, 10_000_000), min_size=2 * n, max_size=2 * n)))
    tail = draw(st.integers(0, 1_000_000))
    return instants, instants[-1] + tail if instants else tail


class TestConservation:
    @settings(max_examples=300, deadline=None)
    @given(pause_ledgers())
    def test_game_plus_pauses_equals_wall(self, ledger):
        instants, now = ledger
        t = GameTimer(budget_ms=900_000, started_at=0)
        for i in range(0, len(instants), 2):
            t.pause(instants[i])
            t.resume(instants[i + 1])
        assert t.game_elapsed(now) + t.paused_ms(now) == now

    @settings(max_examples=100, deadline=None)
    @given(pause_ledgers())
    def test_expiry_at_consistent(self, ledger):
        instants, now = ledger
        t = GameTimer(budget_ms=900_000, started_at=0)
        for i in range(0, len(instants), 2):
            t.pause(instants[i])
            t.resume(instants[i + 1])
        expiry = t.expiry_at(now)
        assert expiry is not None
        assert t.game_elapsed(expiry) == t.budget_ms
