"""Named random substreams derived from one root seed."""

import zlib

import numpy as np


def substream(root_seed: int, name: str, *extra: int) -> np.random.Generator:
    """Generator for stage ``name`` that does not depend on any other stage's draws."""
    key = [int(root_seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode("utf-8"))]
    key.extend(int(e) for e in extra)
    return np.random.default_rng(key)
