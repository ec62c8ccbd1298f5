"""Seedable counter-based random streams.

Every stream is a Philox-4x64 generator keyed by ``SeedSequence([seed, *path])``
where each string component of ``path`` is folded to a 32-bit word with CRC32.
Two streams with different paths never share a counter sequence, so adding a
parameter to a model does not perturb the initial values of the others.
"""
import zlib

import numpy as np


def _word(key):
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    return int(key) & 0xFFFFFFFF


def stream(seed, *path):
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_word(k) for k in path]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
