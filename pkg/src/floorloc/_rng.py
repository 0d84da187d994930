import zlib

import numpy as np


def subseed(seed: int, *names) -> int:
    """Derive a named child seed, stable across runs and platforms."""
    key = [int(seed) & 0xFFFFFFFF]
    for name in names:
        if isinstance(name, str):
            key.append(zlib.crc32(name.encode()))
        else:
            key.append(int(name) & 0xFFFFFFFF)
    return int(np.random.SeedSequence(key).generate_state(1)[0])


def rng_for(seed: int, *names) -> np.random.Generator:
    return np.random.default_rng(subseed(seed, *names))
