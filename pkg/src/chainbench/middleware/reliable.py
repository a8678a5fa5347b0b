"""Acknowledged delivery on top of an unreliable datagram path.

`ReliableSender` keeps a bounded window of unacknowledged messages and
retransmits each one until it is acknowledged or its retry budget runs out.
`ReliableReceiver` delivers messages exactly once and in sequence order.
Both take explicit timestamps so they can be driven by a fake clock.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Optional

DEFAULT_ACK_TIMEOUT_NS = 10_000_000
DEFAULT_MAX_RETRIES = 100
PER_FRAGMENT_ALLOWANCE_NS = 1_000_000
GAP_TIMEOUT_NS = 2_000_000_000


class DeliveryFailed(RuntimeError):
    def __init__(self, seqs):
        self.seqs = sorted(seqs)
        super().__init__(f"delivery failed after retries for seq {self.seqs[:10]}")


@dataclass
class _Pending:
    datagrams: list
    size: int
    deadline: int
    retries: int = 0


class ReliableSender:
    def __init__(self, send: Callable[[bytes], None], ack_timeout_ns: int = DEFAULT_ACK_TIMEOUT_NS,
                 max_retries: int = DEFAULT_MAX_RETRIES, window: int = 256,
                 window_bytes: int = 16 << 20):
        if ack_timeout_ns <= 0 or max_retries < 0:
            raise ValueError("ack_timeout must be > 0 and max_retries >= 0")
        self._send = send
        self.ack_timeout_ns = ack_timeout_ns
        self.max_retries = max_retries
        self.window = window
        self.window_bytes = window_bytes
        self._pending: dict[int, _Pending] = {}
        self._bytes = 0
        self._cond = threading.Condition()
        self.failed: list[int] = []
        self.retransmissions = 0
        self.acked = 0

    def _timeout(self, n_fragments: int) -> int:
        return self.ack_timeout_ns + (n_fragments - 1) * PER_FRAGMENT_ALLOWANCE_NS

    def submit(self, seq: int, datagrams: list, now: Callable[[], int],
               block_timeout: Optional[float] = None) -> None:
        """Queue ``seq`` for delivery, blocking while the window is full."""
        size = sum(len(d) for d in datagrams)
        with self._cond:
            ok = self._cond.wait_for(
                lambda: not self._pending
                or (len(self._pending) < self.window and self._bytes + size <= self.window_bytes),
                timeout=block_timeout,
            )
            if not ok:
                raise TimeoutError("reliable send window stayed full")
            self._pending[seq] = _Pending(datagrams, size, 0)
            self._bytes += size
        for d in datagrams:
            self._send(d)
        with self._cond:
            p = self._pending.get(seq)
            if p is not None:
                p.deadline = now() + self._timeout(len(datagrams))

    def on_ack(self, seq: int) -> bool:
        with self._cond:
            p = self._pending.pop(seq, None)
            if p is None:
                return False
            self._bytes -= p.size
            self.acked += 1
            self._cond.notify_all()
            return True

    def poll(self, now: int) -> Optional[int]:
        """Retransmit overdue messages; return the next deadline (or None)."""
        resend = []
        with self._cond:
            for seq, p in list(self._pending.items()):
                if p.deadline == 0 or p.deadline > now:
                    continue
                if p.retries >= self.max_retries:
                    del self._pending[seq]
                    self._bytes -= p.size
                    self.failed.append(seq)
                    self._cond.notify_all()
                    continue
                p.retries += 1
                p.deadline = now + self._timeout(len(p.datagrams))
                resend.append(p.datagrams)
            self.retransmissions += len(resend)
        for datagrams in resend:
            for d in datagrams:
                self._send(d)
        with self._cond:
            deadlines = [p.deadline for p in self._pending.values() if p.deadline]
        return min(deadlines) if deadlines else None

    @property
    def in_flight(self) -> int:
        return len(self._pending)

    def wait_idle(self, timeout: Optional[float] = None) -> bool:
        with self._cond:
            return self._cond.wait_for(lambda: not self._pending, timeout=timeout)


class ReliableReceiver:
    """In-order, exactly-once delivery for one (sender, topic) stream."""

    def __init__(self, deliver: Callable[[int, object], None], gap_timeout_ns: int = GAP_TIMEOUT_NS,
                 first_seq: int = 1):
        self._deliver = deliver
        self.gap_timeout_ns = gap_timeout_ns
        self.next_seq = first_seq
        self._buffer: dict[int, object] = {}
        self._gap_since: Optional[int] = None
        self.duplicates = 0
        self.skipped = 0

    def on_message(self, seq: int, message: object, now: int) -> None:
        if seq < self.next_seq or seq in self._buffer:
            self.duplicates += 1
            return
        self._buffer[seq] = message
        self._drain(now)

    def _drain(self, now: int) -> None:
        while self.next_seq in self._buffer:
            msg = self._buffer.pop(self.next_seq)
            self._deliver(self.next_seq, msg)
            self.next_seq += 1
        self._gap_since = (self._gap_since or now) if self._buffer else None

    @property
    def pending(self) -> int:
        return len(self._buffer)

    def poll(self, now: int) -> None:
        """Give up on a gap that stayed open longer than the gap timeout."""
        if self._gap_since is not None and now - self._gap_since > self.gap_timeout_ns:
            first = min(self._buffer)
            self.skipped += first - self.next_seq
            self.next_seq = first
            self._gap_since = None
            self._drain(now)
