"""Seed handling and replicate-parallel helpers.

Every random stream in the package is derived from a 64-bit master seed plus a
tuple of integer keys (replicate index, batch index, stream tag, ...), fed to a
counter-based Philox generator.  Results therefore depend only on the keys and
never on how work is split between processes.
"""
from __future__ import annotations

import zlib
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")

SEED_MAX = 2**64 - 1


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed <= SEED_MAX:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def _key(k) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode("utf-8"))
    k = int(k)
    if k < 0:
        raise ValueError("stream keys must be non-negative")
    return k


def derive_rng(seed: int, *keys) -> np.random.Generator:
    """Generator for the stream ``(seed, *keys)``.

    String keys are hashed with CRC32, so ``derive_rng(s, "bridge", 3)`` and
    ``derive_rng(s, "field", 3)`` are independent streams.
    """
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *keys) -> int:
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(_key(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def parallel_map(fn: Callable[[T], R], items: Sequence[T] | Iterable[T], workers: int = 1) -> list[R]:
    """Ordered map, optionally over a process pool.

    ``fn`` must be picklable (module level) when ``workers > 1``.  Output order
    always follows input order, so reductions done by the caller are
    deterministic.
    """
    items = list(items)
    if workers is None or workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
