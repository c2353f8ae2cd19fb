"""Seed derivation.

Every random draw in the package goes through a numpy Generator built here,
keyed by a run seed plus a stable key (a qid, a sequence index), so results
do not depend on iteration order or on the number of workers.
"""
import hashlib

import numpy as np


def stable_key(key):
    """Maps a string or int to a non-negative 64-bit int, identical across runs and platforms."""
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.sha256(str(key).encode('utf-8')).digest()
    return int.from_bytes(digest[:8], 'big')


def derive_seed(base_seed, index):
    """The seed of the index-th perturbed test set of a run started with base_seed."""
    sequence = np.random.SeedSequence([stable_key(base_seed), stable_key(index)])
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def keyed_rng(seed, key):
    """Generator for one unit of work (an instance, a sequence) under a given seed."""
    return np.random.default_rng([stable_key(seed), stable_key(key)])
