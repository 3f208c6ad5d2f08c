"""Worker-count policy shared by the parallel code paths."""

from __future__ import annotations

import os

from .errors import InputError

THREADS_ENV = "QEKIT_THREADS"


def thread_cap(default: int | None = None) -> int:
    """Worker count: ``QEKIT_THREADS`` if set, else ``default`` or the CPU count."""
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise InputError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
        return max(1, n)
    return default or os.cpu_count() or 1
