"""Named random sub-streams derived from a single user seed."""

import numpy as np

STREAMS = {"init": 0, "shuffle": 1, "corruption": 2, "cv-split": 3, "classifier": 4, "data": 5}


def substream(seed, name):
    """Independent generator for the stream ``name`` under ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(STREAMS[name],)))


def subseed(seed, name):
    """Integer seed for APIs that take one instead of a generator."""
    return int(substream(seed, name).integers(2**63 - 1))
