"""Per-replica random streams.

Every replica owns one Philox (counter-based) generator per channel, keyed by
``(master_seed, replica_index, channel)``. Draws are buffered in fixed-size
blocks, so a replica's numbers do not depend on which other replicas are
simulated alongside it.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

CHANNELS = {"noise": 0, "martingale": 1, "estimator": 2, "init": 3}
BLOCK = 4096


def replica_generator(master_seed: int, replica: int, channel: str = "noise") -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(replica), CHANNELS[channel]))
    return np.random.Generator(np.random.Philox(ss))


class BlockStream:
    """Row-by-row access to buffered draws for a batch of replicas.

    ``next()`` returns an array of shape ``(n_replicas, *shape)``.
    """

    def __init__(self, generators: Sequence[np.random.Generator], shape=(), kind="uniform", block=BLOCK):
        self._gens = list(generators)
        self._shape = tuple(shape)
        self._kind = kind
        self._block = block
        self._buf = None
        self._pos = block

    def _refill(self):
        size = (self._block,) + self._shape
        if self._kind == "uniform":
            draws = [g.random(size) for g in self._gens]
        elif self._kind == "normal":
            draws = [g.standard_normal(size) for g in self._gens]
        else:
            raise ValueError(f"unknown draw kind {self._kind!r}")
        # (block, replicas, *shape)
        self._buf = np.stack(draws, axis=1) if draws else np.empty((self._block, 0) + self._shape)
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._pos >= self._block:
            self._refill()
        row = self._buf[self._pos]
        self._pos += 1
        return row


def replica_streams(master_seed: int, replicas: Sequence[int], channel: str, shape=(), kind="uniform") -> BlockStream:
    gens = [replica_generator(master_seed, r, channel) for r in replicas]
    return BlockStream(gens, shape=shape, kind=kind)
