"""Seeded random streams with one isolated sub-stream per consumer.

Each consumer (an agent's quantity strategy, the control-state draw, the
imbalance price sampler) pulls from its own generator, so the number of
draws made by one consumer never shifts the sequence seen by another.
Stream identity is derived from the scenario seed plus the stream name,
which keeps runs bit-reproducible for a given seed.
"""
from __future__ import annotations

import numpy as np


class RandomStreams:
    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: dict[str, np.random.Generator] = {}

    def stream(self, name: str) -> np.random.Generator:
        """Generator dedicated to ``name``, created on first use."""
        gen = self._streams.get(name)
        if gen is None:
            # spawn_key from the name bytes: stable across processes,
            # unlike hash()
            seq = np.random.SeedSequence(self.seed, spawn_key=tuple(name.encode("utf-8")))
            gen = np.random.default_rng(seq)
            self._streams[name] = gen
        return gen
