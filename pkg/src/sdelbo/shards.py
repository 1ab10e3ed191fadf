"""
shards.py — Deterministic fan-out of Monte-Carlo work.

Paths and chains are split into fixed-size shards. Each shard owns a child
``SeedSequence`` spawned from the caller's generator, so the numbers a shard
sees depend only on its index, never on how many threads run it. Results are
concatenated in shard order.
"""

from __future__ import annotations

import logging
import typing as ty
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from sdelbo.errors import DomainError

logger = logging.getLogger(__name__)

SHARD_SIZE = 512

T = ty.TypeVar("T")


def spawn_seeds(rng: np.random.Generator, n_shards: int) -> list[np.random.SeedSequence]:
    """Derive *n_shards* independent child seeds from *rng*.

    Consumes exactly one draw from *rng*, so callers that spawn twice get
    different families.
    """
    root = np.random.SeedSequence(int(rng.integers(0, 2**63 - 1)))
    return root.spawn(n_shards)


def shard_bounds(n_items: int, shard_size: int = SHARD_SIZE) -> list[tuple[int, int]]:
    """Split ``range(n_items)`` into consecutive ``(start, stop)`` pairs."""
    if n_items < 0:
        raise DomainError(f"n_items must be >= 0, got {n_items}")
    return [(lo, min(lo + shard_size, n_items)) for lo in range(0, n_items, shard_size)]


def run_sharded(
    fn: ty.Callable[[int, int, np.random.Generator], T],
    n_items: int,
    rng: np.random.Generator,
    *,
    threads: int = 1,
    shard_size: int = SHARD_SIZE,
) -> list[T]:
    """Evaluate ``fn(start, stop, shard_rng)`` over every shard of ``range(n_items)``.

    Args:
        fn: Work function for one shard. Receives the half-open item range and
            a generator seeded for that shard alone.
        n_items: Total number of items (paths, chains, rows).
        rng: Parent generator; one draw is consumed to seed the shard family.
        threads: Maximum worker threads. Changing it never changes results.
        shard_size: Items per shard. Part of the result's identity: the same
            seed with a different shard size gives different numbers.

    Returns:
        The per-shard results, in shard order.
    """
    if threads < 1:
        raise DomainError(f"threads must be >= 1, got {threads}")
    bounds = shard_bounds(n_items, shard_size)
    seeds = spawn_seeds(rng, len(bounds))
    jobs = [(lo, hi, np.random.default_rng(seed)) for (lo, hi), seed in zip(bounds, seeds)]
    logger.debug("running %d shards of <= %d items on %d threads", len(jobs), shard_size, threads)
    if threads == 1 or len(jobs) <= 1:
        return [fn(lo, hi, shard_rng) for lo, hi, shard_rng in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))
