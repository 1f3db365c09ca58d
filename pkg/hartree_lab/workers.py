"""Bounded worker pool for parameter scans.

Jobs run as threads behind a semaphore; results come back in submission order
whatever order they finish in.
"""
import asyncio
import logging
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from tqdm.asyncio import tqdm_asyncio

from hartree_lab.config import worker_count

logger = logging.getLogger(__name__)


async def _run_single_job(job_id: int, fn: Callable, args: Tuple, semaphore: asyncio.Semaphore):
    async with semaphore:
        result = await asyncio.to_thread(fn, *args)
        return job_id, result


async def run_jobs(
    fn: Callable,
    arg_list: Sequence[Tuple],
    max_workers: int,
    desc: Optional[str] = None,
    show_progress: bool = False,
) -> Dict[int, Any]:
    semaphore = asyncio.Semaphore(max_workers)
    results = {}

    tasks = [
        _run_single_job(job_id, fn, tuple(args), semaphore)
        for job_id, args in enumerate(arg_list)
    ]

    for future in tqdm_asyncio(asyncio.as_completed(tasks), total=len(tasks), desc=desc,
                               disable=not show_progress):
        job_id, result = await future
        results[job_id] = result

    return results


def run_parallel(
    fn: Callable,
    arg_list: Sequence[Tuple],
    max_workers: Optional[int] = None,
    desc: Optional[str] = None,
    show_progress: bool = False,
) -> List[Any]:
    """Call fn(*args) for every args tuple using at most max_workers threads."""
    if not arg_list:
        return []
    workers = worker_count(max_workers)
    logger.debug("running %d jobs on %d workers (%s)", len(arg_list), workers, desc or fn.__name__)
    results = asyncio.run(run_jobs(fn, arg_list, workers, desc, show_progress))
    return [results[job_id] for job_id in range(len(arg_list))]
