"""Shared-read/exclusive-write locking and background task execution.

The store runs in two modes: inline (threads=0), where every background
task executes synchronously at its submission point for deterministic
replay, and threaded, where tasks go to role-named worker pools.
"""

from __future__ import annotations

import threading
from concurrent.futures import Future, ThreadPoolExecutor


class RWLock:
    """Writer-preferring shared-read/exclusive-write lock."""

    def __init__(self):
        self._cond = threading.Condition()
        self._readers = 0
        self._writer = False
        self._writers_waiting = 0

    def acquire_read(self):
        with self._cond:
            while self._writer or self._writers_waiting:
                self._cond.wait()
            self._readers += 1

    def release_read(self):
        with self._cond:
            self._readers -= 1
            if self._readers == 0:
                self._cond.notify_all()

    def acquire_write(self):
        with self._cond:
            self._writers_waiting += 1
            while self._writer or self._readers:
                self._cond.wait()
            self._writers_waiting -= 1
            self._writer = True

    def release_write(self):
        with self._cond:
            self._writer = False
            self._cond.notify_all()

    class _ReadGuard:
        def __init__(self, lock):
            self.lock = lock

        def __enter__(self):
            self.lock.acquire_read()

        def __exit__(self, *exc):
            self.lock.release_read()

    class _WriteGuard:
        def __init__(self, lock):
            self.lock = lock

        def __enter__(self):
            self.lock.acquire_write()

        def __exit__(self, *exc):
            self.lock.release_write()

    def read(self):
        return RWLock._ReadGuard(self)

    def write(self):
        return RWLock._WriteGuard(self)


class TaskRunner:
    """Role-named task submission with an inline deterministic mode.

    Roles mirror the serving thread pool split: search, update, cache,
    device. With threads=0 every submit runs the task before returning.
    """

    ROLES = ("search", "update", "cache", "device")

    def __init__(self, threads: int = 0):
        self.inline = threads <= 0
        self._pools: dict[str, ThreadPoolExecutor] = {}
        if not self.inline:
            per_role = max(1, threads // len(self.ROLES))
            for role in self.ROLES:
                self._pools[role] = ThreadPoolExecutor(
                    max_workers=per_role, thread_name_prefix=f"agentmem-{role}"
                )

    def submit(self, role: str, fn, *args, **kwargs) -> Future:
        fut: Future = Future()
        if self.inline:
            try:
                fut.set_result(fn(*args, **kwargs))
            except BaseException as exc:  # noqa: BLE001 - future carries it
                fut.set_exception(exc)
            return fut
        return self._pools[role].submit(fn, *args, **kwargs)

    def shutdown(self):
        for pool in self._pools.values():
            pool.shutdown(wait=True, cancel_futures=True)
        self._pools.clear()
