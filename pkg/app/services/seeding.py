"""
Seed derivation for Monte Carlo streams.

Every replication gets child streams keyed by (master_seed, n, replication,
role). Keys are folded with the SplitMix64 finalizer:

    h = mix(master_seed)
    h = mix(h XOR component)   for component in (n, replication, role)

where mix(x) adds 0x9E3779B97F4A7C15 and applies the xor-shift-multiply
rounds (30, 0xBF58476D1CE4E5B9), (27, 0x94D049BB133111EB), (31). The result
seeds a PCG64 generator. The function is part of the output contract:
changing it changes every results file.
"""

from enum import IntEnum

import numpy as np

MASK64 = (1 << 64) - 1


class StreamRole(IntEnum):
    """Independent uses of randomness inside one replication."""

    NOISE = 1
    CHAIN = 2
    LIMIT = 3
    LARGE_DEVIATION = 4
    PAIR_POINTS = 5


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def child_seed(master_seed: int, *components: int) -> int:
    """64-bit seed for the stream named by ``components``."""
    h = splitmix64(master_seed & MASK64)
    for component in components:
        h = splitmix64(h ^ (int(component) & MASK64))
    return h


def child_rng(master_seed: int, n: int, replication: int, role: StreamRole) -> np.random.Generator:
    """Generator for one (n, replication, role) stream."""
    return np.random.default_rng(child_seed(master_seed, n, replication, int(role)))
