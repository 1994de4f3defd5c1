"""Named, order-independent random sub-streams derived from one master seed."""

import zlib

import numpy as np


def _key(name):
    if isinstance(name, (int, np.integer)):
        return int(name)
    return zlib.crc32(str(name).encode("utf-8"))


def seed_sequence(seed, *names):
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(n) for n in names))


def substream(seed, *names):
    """Generator keyed by ``(seed, *names)``.

    The same key always yields the same stream, independent of how many other
    streams were drawn before it.
    """
    return np.random.default_rng(seed_sequence(seed, *names))


def derive_seed(seed, *names):
    """32-bit integer seed for libraries that want a plain int."""
    return int(seed_sequence(seed, *names).generate_state(1, dtype=np.uint32)[0])
