from __future__ import annotations

import threading
from collections import deque
from typing import Optional


class SubscriptionQueue:
    """Keep-last history: holds at most ``depth`` envelopes, evicting the oldest.

    ``high_water`` and ``evicted`` are kept so tests can assert the bound
    directly; ``newest_seq`` is the seq of the most recent push.
    """

    def __init__(self, depth: int = 1):
        if depth < 1:
            raise ValueError("depth must be >= 1")
        self.depth = depth
        self._entries: deque = deque()
        self._lock = threading.Lock()
        self.pushed = 0
        self.evicted = 0
        self.high_water = 0
        self.newest_seq = 0

    def __len__(self) -> int:
        return len(self._entries)

    def push(self, envelope) -> Optional[object]:
        """Insert ``envelope``; returns the evicted envelope, if any."""
        with self._lock:
            dropped = None
            if len(self._entries) >= self.depth:
                dropped = self._entries.popleft()
                self.evicted += 1
            self._entries.append(envelope)
            self.pushed += 1
            self.newest_seq = envelope.seq
            if len(self._entries) > self.high_water:
                self.high_water = len(self._entries)
            return dropped

    def pop(self):
        with self._lock:
            return self._entries.popleft() if self._entries else None

    def pop_checked(self):
        """Pop the oldest entry together with the seq newest at that moment."""
        with self._lock:
            if not self._entries:
                return None, self.newest_seq
            return self._entries.popleft(), self.newest_seq

    def clear(self) -> None:
        with self._lock:
            self._entries.clear()
