"""Seed bookkeeping: every random draw in the package comes from one of these streams."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class Seeds:
    """Four independent seeds: hidden-variable source, Alice's switch, Bob's switch, reserved."""

    source: int
    alice: int
    bob: int
    reserved: int = 0

    @classmethod
    def from_master(cls, seed: int) -> "Seeds":
        s = np.random.SeedSequence(seed).generate_state(4, dtype=np.uint64)
        return cls(*(int(x) for x in s))

    @classmethod
    def derive(cls, seed: int, *key: int) -> "Seeds":
        """Seeds for sub-run ``key`` (e.g. a sweep grid point) of master ``seed``."""
        s = np.random.SeedSequence(seed, spawn_key=key).generate_state(4, dtype=np.uint64)
        return cls(*(int(x) for x in s))

    def as_dict(self) -> dict:
        return asdict(self)


def stream(seed: int, *key: int) -> np.random.Generator:
    """Generator for ``seed``; ``key`` selects a disjoint child stream."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


class LambdaStreams:
    """Hidden-variable draws, split so chunked sampling equals one-shot sampling.

    Cell choice and the two in-cell offsets each get their own child stream and
    consume exactly one double per trial.
    """

    def __init__(self, seed: int):
        self.cell = stream(seed, 0)
        self.a = stream(seed, 1)
        self.b = stream(seed, 2)
