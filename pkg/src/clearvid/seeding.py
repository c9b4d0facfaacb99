"""Deterministic seed derivation.

Every stochastic site in the package takes an integer seed derived from the
run seed plus a structural key (stage name, iteration, clip index, ...), so
results never depend on execution order or parallelism.
"""

import hashlib

import numpy as np
import torch


def derive_seed(*parts) -> int:
    """Map a tuple of ints/strings to a stable 63-bit seed."""
    key = "\x1f".join(str(p) for p in parts).encode()
    digest = hashlib.sha256(key).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


def torch_generator(seed: int) -> torch.Generator:
    gen = torch.Generator(device="cpu")
    gen.manual_seed(int(seed))
    return gen


def numpy_generator(seed: int) -> np.random.Generator:
    return np.random.default_rng(int(seed))
