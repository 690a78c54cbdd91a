"""Per-replica random streams and chunked replica execution.

Replica ``k`` of a run with master seed ``s`` always draws from the
counter-based Philox stream keyed by ``(s, k)``, so a replica's path does not
depend on how replicas are batched or on the number of worker threads.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Sequence, TypeVar

import numpy as np

logger = logging.getLogger(__name__)

T = TypeVar("T")


def replica_generator(seed: int, replica: int) -> np.random.Generator:
    """Counter-based generator for one replica of a seeded run"""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, replica])))


class ReplicaStreams:
    """Buffered draws for a batch of replicas.

    Each row owns its generator; ``draw(rows)`` hands every requested row the
    next ``width`` values of its own stream, refilling a row's block only
    when it runs out.
    """

    def __init__(self, seed: int, replicas: Sequence[int], width: int,
                 kind: str = "uniform", block: int = 1024):
        self.replicas = np.asarray(replicas, dtype=np.int64)
        self.generators = [replica_generator(seed, int(r)) for r in self.replicas]
        self.width = width
        self.kind = kind
        self.block = block
        self.buffer = np.empty((len(self.generators), block, width))
        self.position = np.full(len(self.generators), block, dtype=np.int64)

    def _fill(self, row: int) -> None:
        gen = self.generators[row]
        if self.kind == "uniform":
            # (0, 1]: safe under log and as a strictly positive target
            values = 1.0 - gen.random((self.block, self.width))
        elif self.kind == "normal":
            values = gen.standard_normal((self.block, self.width))
        else:
            raise ValueError(f"unknown stream kind {self.kind!r}")
        self.buffer[row] = values
        self.position[row] = 0

    def draw(self, rows: np.ndarray) -> np.ndarray:
        for row in rows[self.position[rows] >= self.block]:
            self._fill(int(row))
        values = self.buffer[rows, self.position[rows]]
        self.position[rows] += 1
        return values


def split_replicas(replicas: int, chunks: int) -> List[np.ndarray]:
    chunks = max(1, min(chunks, replicas))
    return [c for c in np.array_split(np.arange(replicas), chunks) if c.size]


def run_chunks(fn: Callable[[np.ndarray], T], replicas: int, threads: int) -> List[T]:
    """Run ``fn`` over replica index chunks, results in replica order"""
    parts = split_replicas(replicas, threads)
    if len(parts) == 1:
        return [fn(parts[0])]
    logger.debug("running %d replicas in %d chunks", replicas, len(parts))
    with ThreadPoolExecutor(max_workers=len(parts)) as pool:
        return list(pool.map(fn, parts))
