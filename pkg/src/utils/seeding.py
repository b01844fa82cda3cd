import hashlib

import numpy as np

SEED_BITS = 63


def derive_seed(global_seed: int, stage: str) -> int:
    """
    Derive a stage-local seed from the global seed.

    The stage name is hashed together with the global seed, so each stage can
    be re-run on its own and still draw the same random numbers.
    """
    digest = hashlib.blake2b(f"{int(global_seed)}:{stage}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") & ((1 << SEED_BITS) - 1)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(int(seed))
