import asyncio
import hashlib
from pathlib import Path
from typing import Callable, List, Optional, Sequence, TypeVar

import numpy as np
import pandas as pd

T = TypeVar("T")
R = TypeVar("R")

CSV_FLOAT_FORMAT = "%.17g"


class PowerGameError(Exception):
    """Base class for all errors raised by the package."""


class ConfigError(PowerGameError, ValueError):
    """Invalid run configuration; the message names the offending key."""


class DomainError(PowerGameError, ValueError):
    """Argument outside the domain of an operation."""


class NumericalError(PowerGameError, RuntimeError):
    """A numerical procedure failed (bracketing, NaN, negative density)."""


class InfeasibleGameError(NumericalError):
    """The static game has no finite equilibrium."""


def write_csv(frame: pd.DataFrame, out_path: Path, log_fn=None) -> Path:
    """Write a table with the package CSV dialect (17 digits, LF, header)."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(
        out_path,
        index=False,
        float_format=CSV_FLOAT_FORMAT,
        lineterminator="\n",
    )
    if log_fn:
        log_fn(f"Saved: {out_path} ({len(frame)} rows)")
    return out_path


def text_digest(text: str) -> str:
    """SHA-256 hex digest of a text blob (used for config hashes)."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def player_streams(seed: int, n: int) -> List[np.random.SeedSequence]:
    """Independent per-player seed sequences derived from one run seed.

    A fresh root is built on every call, so the returned list does not
    depend on any earlier call.
    """
    return np.random.SeedSequence(seed).spawn(n)


def counter_rng(stream: np.random.SeedSequence) -> np.random.Generator:
    """Counter-based generator (Philox) bound to one seed sequence."""
    return np.random.Generator(np.random.Philox(stream))


def keyed_stream(seed: int, *key: int) -> np.random.SeedSequence:
    """Seed sequence for a (seed, key...) pair, e.g. one replication of one K."""
    return np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))


async def _gather_bounded(
    fn: Callable[[T], R],
    items: Sequence[T],
    concurrency: int,
    progress_fn: Optional[Callable[[int, int], None]],
) -> List[R]:
    sem = asyncio.Semaphore(concurrency)
    results: List[Optional[R]] = [None] * len(items)
    done = 0

    async def worker(i: int, item: T) -> None:
        nonlocal done
        async with sem:
            results[i] = await asyncio.to_thread(fn, item)
            done += 1
            if progress_fn:
                progress_fn(done, len(items))

    await asyncio.gather(*(worker(i, it) for i, it in enumerate(items)))
    return results  # type: ignore[return-value]


def map_concurrently(
    fn: Callable[[T], R],
    items: Sequence[T],
    threads: int = 1,
    progress_fn: Optional[Callable[[int, int], None]] = None,
) -> List[R]:
    """Apply ``fn`` to every item with at most ``threads`` workers.

    Results come back in item order whatever the thread count.
    """
    if threads <= 1 or len(items) <= 1:
        out = []
        for i, item in enumerate(items):
            out.append(fn(item))
            if progress_fn:
                progress_fn(i + 1, len(items))
        return out
    return asyncio.run(_gather_bounded(fn, items, threads, progress_fn))
