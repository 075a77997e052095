"""Deterministic block-parallel helpers."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

T = TypeVar("T")

THREADS_ENV = "TRUDINGER_LAB_THREADS"


def resolve_threads(threads: int | None) -> int:
    """Explicit value, else the environment fallback, else 1."""
    if threads is None:
        raw = os.environ.get(THREADS_ENV, "").strip()
        threads = int(raw) if raw else 1
    if threads < 1:
        raise ValueError(f"thread count must be positive, got {threads}")
    return threads


def blocks(n: int, parts: int) -> list[tuple[int, int]]:
    """Split range(n) into at most ``parts`` contiguous half-open blocks."""
    parts = max(1, min(parts, n))
    edges = [n * k // parts for k in range(parts + 1)]
    return [(edges[k], edges[k + 1]) for k in range(parts) if edges[k + 1] > edges[k]]


def map_blocks(fn: Callable[[int, int], T], n: int, threads: int | None = 1) -> list[T]:
    """Apply ``fn(start, stop)`` over blocks of range(n); results keep block order."""
    threads = resolve_threads(threads)
    spans = blocks(n, threads)
    if threads == 1 or len(spans) == 1:
        return [fn(a, b) for a, b in spans]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda ab: fn(*ab), spans))
