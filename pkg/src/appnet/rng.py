"""Deterministic seeding utilities.

All stochastic choices in the package (anchor sampling, shape generation,
weight init, shuffling, dropout masks, augmentation) flow through a single
seed-mixing function so that a run is fully determined by one integer seed.
Seeds are folded with splitmix64 and drive numpy's PCG64, both of which have
fixed, platform-independent output streams.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def mix_seed(*parts) -> int:
    """Fold integers and strings into a 64-bit sub-seed.

    Strings are folded byte-wise (independent of PYTHONHASHSEED), so the same
    tag sequence yields the same seed in every process on every platform.
    """
    h = 0x243F6A8885A308D3
    for part in parts:
        if isinstance(part, str):
            h = _splitmix64(h ^ 0xFF)
            for b in part.encode("utf-8"):
                h = _splitmix64(h ^ b)
        else:
            h = _splitmix64(h ^ (int(part) & _MASK64))
    return h


def generator(*parts) -> np.random.Generator:
    """A PCG64 generator keyed by the mixed seed of ``parts``."""
    return np.random.Generator(np.random.PCG64(mix_seed(*parts)))


def sample_indices(n: int, m: int, *seed_parts) -> np.ndarray:
    """Choose ``m`` distinct indices from ``range(n)`` by partial Fisher-Yates.

    Deterministic per (n, m, seed); the first ``m`` slots of a seeded partial
    shuffle, so supersets of the same draw share a prefix.
    """
    if not 1 <= m <= n:
        raise ValueError(f"cannot sample {m} distinct indices from {n}")
    rng = generator(*seed_parts)
    idx = np.arange(n, dtype=np.int64)
    for i in range(m):
        j = i + int(rng.integers(n - i))
        idx[i], idx[j] = idx[j], idx[i]
    return idx[:m].copy()
