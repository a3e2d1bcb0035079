"""Per-path random streams.

Each path owns independent generators keyed by ``(master_seed, path_index,
stream)`` through numpy's ``SeedSequence``, so the draws of a path never depend
on which worker produces it or in what order.
"""

import numpy as np

# stream identifiers
BROWNIAN = 1
NEWS = 2
DEFAULT = 3
RECOVERY = 4


def seed_sequence(master_seed: int, path_index: int, stream: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed), int(path_index), int(stream)])


def derive_seed(master_seed: int, path_index: int, stream: int) -> int:
    """64-bit summary of a stream key, recorded with each path."""
    return int(seed_sequence(master_seed, path_index, stream).generate_state(1, np.uint64)[0])


def path_generator(master_seed: int, path_index: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(master_seed, path_index, stream)))
