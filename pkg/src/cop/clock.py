from __future__ import annotations

import time


class VirtualClock:
    """Millisecond clock that only moves when told to."""

    virtual = True

    def __init__(self, start_ms: int = 0):
        self._now = start_ms

    def now(self) -> int:
        return self._now

    def advance_to(self, t_ms: int) -> None:
        if t_ms < self._now:
            raise ValueError(f"virtual clock cannot go back ({t_ms} < {self._now})")
        self._now = t_ms

    def advance(self, dt_ms: int) -> None:
        self.advance_to(self._now + dt_ms)


class WallClock:
    """Milliseconds since construction, from the monotonic clock."""

    virtual = False

    def __init__(self):
        self._origin = time.monotonic()

    def now(self) -> int:
        return int((time.monotonic() - self._origin) * 1000)

    def advance_to(self, t_ms: int) -> None:
        delay = (t_ms - self.now()) / 1000
        if delay > 0:
            time.sleep(delay)
