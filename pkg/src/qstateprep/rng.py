"""Reproducible random streams keyed by (master seed, index...).

Every trajectory, restart and sweep cell draws from its own Philox stream whose
key is derived from the master seed and a spawn key, so results do not depend
on how work is split across workers.
"""
from __future__ import annotations

import numpy as np


def stream(master_seed: int, *keys: int) -> np.random.Generator:
    seq = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(master_seed: int, *keys: int) -> int:
    seq = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in keys))
    return int(seq.generate_state(1, np.uint32)[0])
