"""
Concurrent execution of independent jobs (simulations, certificate chunks).

Jobs are pushed onto an asyncio queue and drained by a fixed number of
workers, each handing the blocking numpy work to a thread pool. Results
are merged by job key, so the output never depends on completion order.
"""

import asyncio
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Hashable, Sequence

from sdforward.config import config

logger = logging.getLogger(__name__)


@dataclass
class JobOutcome:
    """Result of one job; exactly one of ``value`` and ``error`` is set."""

    key: Hashable
    value: Any = None
    error: BaseException | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


class BatchRunner:
    def __init__(self, threads: int | None = None):
        self.threads = max(1, threads or config.BATCH_THREADS)
        self.outcomes: dict = {}

    async def worker(self, queue: asyncio.Queue, pool: ThreadPoolExecutor):
        loop = asyncio.get_running_loop()
        while True:
            key, job = await queue.get()
            try:
                value = await loop.run_in_executor(pool, job)
                self.outcomes[key] = JobOutcome(key, value=value)
            except Exception as e:
                logger.debug(f"job {key!r} failed: {type(e).__name__}: {e}")
                self.outcomes[key] = JobOutcome(key, error=e)
            finally:
                queue.task_done()

    async def run(self, jobs: Sequence[tuple[Hashable, Callable[[], Any]]]) -> list[JobOutcome]:
        queue: asyncio.Queue = asyncio.Queue()
        for key, job in jobs:
            await queue.put((key, job))

        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            workers = [
                asyncio.create_task(self.worker(queue, pool))
                for _ in range(min(self.threads, max(1, len(jobs))))
            ]
            await queue.join()
            for w in workers:
                w.cancel()
            await asyncio.gather(*workers, return_exceptions=True)

        return [self.outcomes[key] for key, _ in jobs]


def run_batch(
    jobs: Sequence[tuple[Hashable, Callable[[], Any]]],
    threads: int | None = None,
) -> list[JobOutcome]:
    """
    Run ``jobs`` concurrently and return outcomes in submission order.

    Keys must be unique. A failing job is reported in its outcome instead
    of cancelling the rest of the batch.
    """
    keys = [key for key, _ in jobs]
    if len(set(keys)) != len(keys):
        raise ValueError("batch job keys must be unique")
    if not jobs:
        return []
    runner = BatchRunner(threads)
    outcomes = asyncio.run(runner.run(jobs))
    failed = sum(1 for o in outcomes if not o.ok)
    logger.debug(f"batch of {len(jobs)} jobs finished on {runner.threads} threads ({failed} failed)")
    return outcomes
