"""Counter-based random streams.

Every chain (or ensemble of chains advanced together) owns a
:class:`ChainStreams` bundle of independent Philox generators, one per kind of
randomness.  Seeds for experiment cells are derived from the master seed and a
cell key, never from execution order, so results do not depend on scheduling.
"""

from __future__ import annotations

import hashlib

import numpy as np

SUBSTREAMS = ("batch", "xi1", "xi2", "noise", "init", "aux")


def _key_words(key) -> tuple[int, ...]:
    digest = hashlib.sha256(repr(key).encode("utf-8")).digest()
    return tuple(int(w) for w in np.frombuffer(digest[:16], dtype=np.uint32))


def cell_seed(master: int, *key) -> np.random.SeedSequence:
    """Seed sequence for the cell identified by ``key`` under ``master``."""
    return np.random.SeedSequence(entropy=int(master), spawn_key=_key_words(key))


def _child(seq: np.random.SeedSequence, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=seq.entropy, spawn_key=tuple(seq.spawn_key) + (index,))


def generator(seed) -> np.random.Generator:
    """A Philox generator from an int or a SeedSequence."""
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.Philox(seed))


class ChainStreams:
    """Independent substreams for one chain ensemble.

    ``batch`` drives minibatch selection, ``xi1``/``xi2`` the two Gaussian
    families of the Ornstein-Uhlenbeck half-steps (``xi1`` alone for the Euler
    schemes), ``noise`` any injected gradient noise, ``init`` initial
    velocities.  Two ensembles built from the same seed are synchronously
    coupled.  Passing ``batch_seed`` decouples minibatch selection while keeping
    the Brownian increments shared.
    """

    def __init__(self, seed, batch_seed=None):
        if isinstance(seed, (int, np.integer)):
            seed = np.random.SeedSequence(int(seed))
        self.seed = seed
        for i, name in enumerate(SUBSTREAMS):
            setattr(self, name, np.random.Generator(np.random.Philox(_child(seed, i))))
        if batch_seed is not None:
            if isinstance(batch_seed, (int, np.integer)):
                batch_seed = np.random.SeedSequence(int(batch_seed))
            self.batch = np.random.Generator(np.random.Philox(_child(batch_seed, 0)))
