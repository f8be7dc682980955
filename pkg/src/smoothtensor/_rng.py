"""Named, order-independent random streams derived from one integer seed."""
import zlib

import numpy as np


def _key(part):
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def derive_rng(seed, *names):
    """Return a Generator for the stream ``(seed, *names)``.

    Streams with different names are statistically independent, and the
    stream for a given name does not depend on which other streams were drawn
    first, so trials can run in any order.
    """
    seq = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(_key(p) for p in names))
    return np.random.Generator(np.random.PCG64(seq))


def as_generator(random_state):
    """Coerce ``None``/int/Generator into a Generator."""
    if isinstance(random_state, np.random.Generator):
        return random_state
    return np.random.default_rng(random_state)
