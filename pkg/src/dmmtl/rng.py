"""Named random substreams derived from a single top-level seed."""

import zlib

import numpy as np


def substream(seed, name, *extra):
    """Return a Generator for the stream ``name`` of ``seed``.

    Streams with different names (or different ``extra`` integers) are
    statistically independent, and each one is reproducible on its own.
    """
    key = [int(seed), zlib.crc32(name.encode("utf-8"))] + [int(e) for e in extra]
    return np.random.default_rng(np.random.SeedSequence(key))
