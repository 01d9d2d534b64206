"""Deterministic seed derivation; no randomness ever comes from the clock."""
import hashlib

import numpy as np


def stable_id(text: str) -> int:
    """A 32-bit integer for a string, identical across processes and runs."""
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:4], "big")


def derive_seed(*parts: int | str) -> int:
    """Child seed for a (parent seed, tag, index, ...) path."""
    entropy = [stable_id(p) if isinstance(p, str) else int(p) for p in parts]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint32)[0])
