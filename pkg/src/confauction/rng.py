"""Seeded random streams.

Every random draw in the package goes through :func:`stream`, which returns a
numpy ``Generator`` backed by the counter-based Philox bit generator. The seed
becomes the Philox key and the remaining path components are written into the
upper words of the 256-bit counter, so streams for different
``(seed, *path)`` tuples never overlap and do not depend on the order in which
they are created. Missing trailing components count as zero, so
``stream(s, 3)`` and ``stream(s, 3, 0)`` are the same stream.
"""

import numpy as np

# Path tags for the top-level purposes a stream can serve.
VALUATIONS = 0
INIT = 1
SHUFFLE = 2
MISREPORT = 3
ESTIMATOR = 4

_WORD = 2**64


def stream(seed, *path):
    """Return a Philox-backed generator for ``seed`` and up to three path ints."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    if len(path) > 3:
        raise ValueError("at most three path components are supported")
    words = [0, 0, 0, 0]
    for k, p in enumerate(path):
        p = int(p)
        if not 0 <= p < _WORD:
            raise ValueError(f"path component out of range: {p}")
        words[k + 1] = p
    return np.random.Generator(np.random.Philox(key=int(seed) % 2**128, counter=words))
