"""Counter-based random substreams.

Every random quantity in the package is drawn from a Philox generator whose
key is derived from ``(master_seed, level, path_index, purpose)`` through
:class:`numpy.random.SeedSequence`.  Paths can therefore be simulated in any
order, in any batch size and on any worker without changing a single bit of
the output.
"""

from __future__ import annotations

import numpy as np

# Purpose tags, last coordinate of the spawn key.  Part of the
# reproducibility contract: never renumber.
SKELETON = 0
SIGNS = 1
INNER_MC = 2
FINE_GRID = 3
CONTROL = 4

_TWO_POW_52 = float(2**52)


def substream(master_seed: int, *key: int) -> np.random.Generator:
    """Return the generator keyed by ``(master_seed, *key)``.

    The derivation is ``Philox(SeedSequence(master_seed, spawn_key=key))``.
    """
    if master_seed < 0:
        raise ValueError(f"master_seed must be non-negative, got {master_seed}")
    seq = np.random.SeedSequence(entropy=int(master_seed),
                                 spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(seq))


def path_stream(master_seed: int, level: int, path_index: int,
                purpose: int) -> np.random.Generator:
    """Substream for one purpose of one skeleton path at one level."""
    return substream(master_seed, level, path_index, purpose)


def open_uniforms(rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw ``size`` uniforms strictly inside (0, 1).

    Each value is ``(m + 1/2) 2^-52`` for a uniform 52-bit integer ``m``.
    Every such midpoint is exact in double precision, so 0 and 1 never
    occur; exactly one 64-bit word is consumed per draw.
    """
    m = rng.integers(0, 2**52, size=size, dtype=np.int64)
    return (m.astype(np.float64) + 0.5) / _TWO_POW_52


def split_words(words: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split 53-bit words into (uniform on (0,1), sign in {-1,+1}).

    The low bit gives the sign and the remaining 52 bits the uniform, mapped
    as in :func:`open_uniforms`; one word is consumed per skeleton step.
    """
    u = ((words >> 1).astype(np.float64) + 0.5) / _TWO_POW_52
    signs = (2 * (words & 1) - 1).astype(np.int8)
    return u, signs


def skeleton_words(rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw ``size`` 53-bit words; chunked draws concatenate identically."""
    return rng.integers(0, 2**53, size=size, dtype=np.int64)


def random_signs(rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw ``size`` symmetric signs in {-1, +1} as int8."""
    bits = rng.integers(0, 2, size=size, dtype=np.int8)
    return (2 * bits - 1).astype(np.int8)
