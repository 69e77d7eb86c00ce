"""
Seeded replicate blocks.

Every block draws from its own generator seeded by (master seed, block
index), so results do not depend on execution order or pool width.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, List, Sequence, TypeVar

import numpy as np

logger = logging.getLogger("nof1.montecarlo")

T = TypeVar("T")


def derive_rng(master_seed: int, *index: int) -> np.random.Generator:
    """Generator for one work unit; stateless in (master_seed, index)."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), *[int(i) for i in index]]))


def block_sizes(total: int, block_size: int) -> List[int]:
    if total < 1:
        return []
    full, rest = divmod(total, block_size)
    return [block_size] * full + ([rest] if rest else [])


def run_blocks(
    work: Callable[[int, int], T],
    total: int,
    block_size: int,
    workers: int = 1,
) -> List[T]:
    """
    Run `work(block_index, size)` over consecutive blocks covering `total` items.

    `work` must be picklable when workers > 1. Results come back in block order.
    """
    sizes = block_sizes(total, block_size)
    if workers <= 1 or len(sizes) <= 1:
        return [work(i, size) for i, size in enumerate(sizes)]
    logger.debug("Running %d blocks on %d workers", len(sizes), workers)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(work, range(len(sizes)), sizes))


def column_means(samples: np.ndarray) -> np.ndarray:
    """Per-column mean with compensated summation, stable across block layouts."""
    n = samples.shape[0]
    return np.array([math.fsum(samples[:, j]) / n for j in range(samples.shape[1])])


def column_sds(samples: np.ndarray, means: Sequence[float]) -> np.ndarray:
    """Per-column sample standard deviation (denominator n - 1)."""
    n = samples.shape[0]
    if n < 2:
        return np.zeros(samples.shape[1])
    return np.array([
        math.sqrt(math.fsum((samples[:, j] - means[j]) ** 2) / (n - 1))
        for j in range(samples.shape[1])
    ])
