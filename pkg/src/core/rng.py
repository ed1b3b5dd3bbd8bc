"""Counter-based random streams.

Every random quantity in an experiment is drawn from a stream keyed by
(root seed, *key), so results do not depend on scheduling or thread count.
"""

import numpy as np

__all__ = ["stream", "derive_seed"]


def stream(seed: int, *key: int) -> np.random.Generator:
    """Return an independent Philox generator for the given key path."""
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(seed: int, *key: int) -> int:
    """Derive a 63-bit child seed (usable as a new root) from a key path."""
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
