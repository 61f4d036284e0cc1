"""Game timer with an explicit pause ledger.

The session budget only burns while the dyad is working; any interval spent
in a robot intervention is recorded as a pause and excluded from game time.
All arithmetic is exact integer milliseconds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

DEFAULT_BUDGET_MS = 900_000  # 15 minutes


class TimerProtocolError(Exception):
    """Double pause or resume without pause."""


@dataclass
class GameTimer:
    budget_ms: int = DEFAULT_BUDGET_MS
    started_at: int = 0
    #: Closed intervals [pause_start, pause_end]; at most one open interval.
    pause_ledger: list[list[Optional[int]]] = field(default_factory=list)

    @property
    def paused(self) -> bool:
        return bool(self.pause_ledger) and self.pause_ledger[-1][1] is None

    def pause(self, now: int) -> None:
        if self.paused:
            raise TimerProtocolError("pause while already paused")
        self.pause_ledger.append([now, None])

    def resume(self, now: int) -> None:
        if not self.paused:
            raise TimerProtocolError("resume without open pause")
        start = self.pause_ledger[-1][0]
        if now < start:
            raise TimerProtocolError(f"resume at {now} before pause start {start}")
        self.pause_ledger[-1][1] = now

    def paused_ms(self, now: int) -> int:
        """Total paused time up to ``now``, open interval included."""
        total = 0
        for start, end in self.pause_ledger:
            total += (end if end is not None else now) - start
        return total

    def game_elapsed(self, now: int) -> int:
        return (now - self.started_at) - self.paused_ms(now)

    def remaining(self, now: int) -> int:
        return max(0, self.budget_ms - self.game_elapsed(now))

    def expired(self, now: int) -> bool:
        return self.game_elapsed(now) >= self.budget_ms

    def expiry_at(self, now: int) -> Optional[int]:
        """Wall instant when the budget runs out, given no further pauses.

        None while paused (game time is frozen, expiry indefinitely deferred).
        """
        if self.paused:
            return None
        return self.started_at + self.budget_ms + self.paused_ms(now)
