import zlib

import numpy as np


def sub_seed(seed, name):
    """Independent 64-bit seed for the named consumer of a master seed."""
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(zlib.crc32(name.encode()),))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def rng_for(seed, name):
    return np.random.default_rng(sub_seed(seed, name))
