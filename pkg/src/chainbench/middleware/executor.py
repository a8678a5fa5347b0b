"""Callback dispatch: a shared worker pool with one serial strand per node,
and a timer service that fires on a fixed grid.
"""
from __future__ import annotations

import heapq
import itertools
import logging
import queue
import threading
import time
from collections import deque
from typing import Callable, Optional

log = logging.getLogger(__name__)

_STOP = object()


class Strand:
    """Serial task queue; tasks of one strand never run concurrently.

    A task already waiting in the strand is not queued twice (posts coalesce).
    """

    def __init__(self, executor: "Executor", key: str):
        self.executor = executor
        self.key = key
        self._tasks: deque = deque()
        self._pending: set = set()
        self._scheduled = False
        self._lock = threading.Lock()
        self.coalesced = 0

    def post(self, task) -> bool:
        with self._lock:
            if task in self._pending:
                self.coalesced += 1
                return False
            self._pending.add(task)
            self._tasks.append(task)
            if self._scheduled:
                return True
            self._scheduled = True
        self.executor._ready.put(self)
        return True

    def _run_one(self) -> None:
        with self._lock:
            task = self._tasks.popleft()
            self._pending.discard(task)
        try:
            task.run()
        except Exception:  # task code is expected to contain its own errors
            log.exception("task %r on strand %s raised", task, self.key)
        with self._lock:
            again = bool(self._tasks)
            if not again:
                self._scheduled = False
        if again:
            self.executor._ready.put(self)


class Executor:
    def __init__(self, workers: int = 4, name: str = "chainbench"):
        self.workers = max(1, workers)
        self.name = name
        self._ready: queue.SimpleQueue = queue.SimpleQueue()
        self._strands: dict[str, Strand] = {}
        self._threads: list[threading.Thread] = []
        self._lock = threading.Lock()

    def strand(self, key: str) -> Strand:
        with self._lock:
            s = self._strands.get(key)
            if s is None:
                s = self._strands[key] = Strand(self, key)
            return s

    @property
    def running(self) -> bool:
        return bool(self._threads)

    def start(self) -> "Executor":
        if self._threads:
            return self
        for i in range(self.workers):
            t = threading.Thread(target=self._work, name=f"{self.name}-w{i}", daemon=True)
            t.start()
            self._threads.append(t)
        return self

    def _work(self) -> None:
        while True:
            item = self._ready.get()
            if item is _STOP:
                return
            item._run_one()

    def stop(self, timeout: float = 5.0) -> None:
        threads, self._threads = self._threads, []
        for _ in threads:
            self._ready.put(_STOP)
        for t in threads:
            t.join(timeout)


class TimerHandle:
    def __init__(self, period_ns: int, fire: Callable[[int], None], t0: int):
        self.period_ns = period_ns
        self.fire = fire
        self.t0 = t0
        self.k = 1
        self.cancelled = False
        self.skipped = 0

    @property
    def target(self) -> int:
        return self.t0 + self.k * self.period_ns

    def cancel(self) -> None:
        self.cancelled = True


class TimerService:
    """Fires each timer at ``t0 + k * period`` (k = 1, 2, ...).

    The callback receives the target time. When the service falls behind by
    more than a period, missed targets are skipped rather than replayed.
    """

    def __init__(self, clock: Callable[[], int] = time.monotonic_ns, name: str = "timers"):
        self._clock = clock
        self._heap: list = []
        self._cond = threading.Condition()
        self._counter = itertools.count()
        self._thread: Optional[threading.Thread] = None
        self._stopped = False
        self.name = name

    def add(self, period_ns: int, fire: Callable[[int], None], t0: Optional[int] = None) -> TimerHandle:
        if period_ns <= 0:
            raise ValueError("period must be > 0")
        handle = TimerHandle(period_ns, fire, self._clock() if t0 is None else t0)
        with self._cond:
            heapq.heappush(self._heap, (handle.target, next(self._counter), handle))
            self._cond.notify()
        return handle

    def start(self) -> "TimerService":
        if self._thread is None:
            self._stopped = False
            self._thread = threading.Thread(target=self._loop, name=self.name, daemon=True)
            self._thread.start()
        return self

    def stop(self) -> None:
        with self._cond:
            self._stopped = True
            self._cond.notify()
        if self._thread is not None:
            self._thread.join(5.0)
            self._thread = None

    def _loop(self) -> None:
        while True:
            with self._cond:
                while not self._stopped:
                    if not self._heap:
                        self._cond.wait()
                        continue
                    target = self._heap[0][0]
                    delay = target - self._clock()
                    if delay <= 0:
                        break
                    self._cond.wait(delay / 1e9)
                if self._stopped:
                    return
                _, _, handle = heapq.heappop(self._heap)
            if handle.cancelled:
                continue
            target = handle.target
            try:
                handle.fire(target)
            except Exception:
                log.exception("timer callback raised")
            now = self._clock()
            handle.k += 1
            if handle.target <= now:
                behind = (now - handle.t0) // handle.period_ns + 1
                handle.skipped += behind - handle.k
                handle.k = behind
            with self._cond:
                heapq.heappush(self._heap, (handle.target, next(self._counter), handle))
