"""
Seeded Gaussian sampling and Monte Carlo reduction.

Reproducibility contract: the stream for (seed, n) is cut into fixed chunks of
`chunk_size` rows; chunk i draws from PCG64 seeded by SeedSequence(seed,
spawn_key=(i,)). Chunks are assembled and reduced in chunk-index order, so
serial and threaded evaluation agree bit for bit.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Iterator, List, Sequence

import numpy as np

from boundary_engine.errors import InvalidArgumentError
from boundary_engine.schemas.sampling import GaussianLaw, McEstimate, SampleBatch

logger = logging.getLogger(__name__)

DEFAULT_CHUNK_SIZE = 1 << 18


def chunk_generator(seed: int, chunk_index: int) -> np.random.Generator:
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(chunk_index),))
    return np.random.Generator(np.random.PCG64(sequence))


def _chunk_bounds(n: int, chunk_size: int) -> List[range]:
    return [range(start, min(start + chunk_size, n)) for start in range(0, n, chunk_size)]


def _draw_chunk(law: GaussianLaw, seed: int, chunk_index: int, size: int) -> np.ndarray:
    rng = chunk_generator(seed, chunk_index)
    z = rng.standard_normal((size, law.dim))
    return law.mean + z @ law.chol.T


def _check_request(n: int, seed: int, chunk_size: int) -> None:
    if n < 1:
        raise InvalidArgumentError(f"sample count must be >= 1, got {n}")
    if chunk_size < 1:
        raise InvalidArgumentError(f"chunk size must be >= 1, got {chunk_size}")
    if not 0 <= int(seed) < 2 ** 64:
        raise InvalidArgumentError(f"seed must be an unsigned 64-bit integer, got {seed}")


def iter_gaussian_chunks(
    law: GaussianLaw,
    n: int,
    seed: int,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> Iterator[np.ndarray]:
    """Yield the rows of gaussian_sample(law, n, seed) chunk by chunk."""
    _check_request(n, seed, chunk_size)
    for index, bounds in enumerate(_chunk_bounds(n, chunk_size)):
        yield _draw_chunk(law, seed, index, len(bounds))


def gaussian_sample(
    law: GaussianLaw,
    n: int,
    seed: int,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    workers: int = 1,
) -> SampleBatch:
    _check_request(n, seed, chunk_size)
    bounds = _chunk_bounds(n, chunk_size)
    logger.debug("sampling n=%d d=%d in %d chunks (workers=%d)", n, law.dim, len(bounds), workers)
    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(lambda item: _draw_chunk(law, seed, item[0], len(item[1])), enumerate(bounds)))
    else:
        chunks = [_draw_chunk(law, seed, index, len(rows)) for index, rows in enumerate(bounds)]
    return SampleBatch(points=np.concatenate(chunks, axis=0), seed=int(seed))


def mc_mean(values: Sequence[float]) -> McEstimate:
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.shape[0] < 2:
        raise InvalidArgumentError(f"need at least 2 values for a Monte Carlo estimate, got {values.shape[0]}")
    n = values.shape[0]
    return McEstimate(
        value=float(np.mean(values)),
        std_error=float(np.std(values, ddof=1) / math.sqrt(n)),
        n=n,
    )


class McAccumulator:
    """
    Streaming mean/variance (count, mean, M2) with ordered chunk merging.
    Feed chunks in chunk-index order for reproducible results.
    """

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0

    def add(self, values: Sequence[float]) -> "McAccumulator":
        values = np.asarray(values, dtype=np.float64).ravel()
        if values.shape[0] == 0:
            return self
        chunk = McAccumulator()
        chunk.count = values.shape[0]
        chunk.mean = float(np.mean(values))
        chunk.m2 = float(np.sum((values - chunk.mean) ** 2))
        return self.merge(chunk)

    def merge(self, other: "McAccumulator") -> "McAccumulator":
        if other.count == 0:
            return self
        total = self.count + other.count
        delta = other.mean - self.mean
        self.mean += delta * other.count / total
        self.m2 += other.m2 + delta ** 2 * self.count * other.count / total
        self.count = total
        return self

    def result(self) -> McEstimate:
        if self.count < 2:
            raise InvalidArgumentError(f"need at least 2 values for a Monte Carlo estimate, got {self.count}")
        variance = self.m2 / (self.count - 1)
        return McEstimate(value=self.mean, std_error=math.sqrt(variance / self.count), n=self.count)
