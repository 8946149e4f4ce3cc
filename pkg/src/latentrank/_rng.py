"""Seed handling: one master seed, many independent named streams."""

import zlib

import numpy as np


def stream(seed, name, *keys):
    """Return a Generator for the named substream ``name`` of ``seed``.

    Extra integer ``keys`` select further sub-substreams (per user, per
    projection block, ...). The same arguments always give the same stream.
    """
    spawn_key = (zlib.crc32(name.encode("utf8")),) + tuple(int(k) for k in keys)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=spawn_key))


def fresh_seed():
    """Draw a new master seed from OS entropy."""
    return int(np.random.SeedSequence().entropy % (2**63))
