# helpers/worker_pool.py
import asyncio
import logging
import time
from contextlib import contextmanager
from typing import Callable, List, Sequence

# Get a logger for this specific module
log = logging.getLogger(__name__)


async def run_blocking(func: Callable, *args, **kwargs):
    """Run a synchronous numerical core in a worker thread."""
    return await asyncio.to_thread(func, *args, **kwargs)


async def gather_in_order(jobs: Sequence[Callable[[], object]], threads: int = 1) -> List:
    """
    Run zero-argument callables in worker threads, at most `threads` at a time.
    Results come back in submission order whatever order the jobs finish in.
    """
    limit = asyncio.Semaphore(max(1, int(threads)))

    async def _one(i, job):
        async with limit:
            log.debug(f"Job {i + 1}/{len(jobs)} started")
            return await asyncio.to_thread(job)

    return list(await asyncio.gather(*(_one(i, job) for i, job in enumerate(jobs))))


class StageTimer:
    """Wall-clock seconds per named stage, for the run manifest."""

    def __init__(self):
        self.timings = {}

    @contextmanager
    def stage(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - start
            self.timings[name] = self.timings.get(name, 0.0) + elapsed
            log.info(f"Stage '{name}' took {elapsed:.2f}s")
