"""Counter-based Philox4x32-10 generator, vectorised over counters.

Every random number is a pure function of ``(seed, counter)``, so paths can
be generated in any order or in parallel and still reproduce bit-for-bit.
The counter of a draw is the word quadruple ``(path, step, block, stream)``.
"""

from __future__ import annotations

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint32(0x9E3779B9)
_W1 = np.uint32(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)
ROUNDS = 10

STREAM_NOISE = 0
STREAM_INITIAL = 1


def philox4x32(counter, key, rounds: int = ROUNDS) -> np.ndarray:
    """Philox4x32 block function.

    Parameters
    ----------
    counter : array_like of uint32, shape ``(..., 4)``
    key : array_like of uint32, shape ``(2,)``

    Returns
    -------
    ndarray of uint32, shape ``(..., 4)``
    """
    c = np.asarray(counter, dtype=np.uint32)
    k = np.asarray(key, dtype=np.uint32)
    c0, c1, c2, c3 = (c[..., i].astype(np.uint64) for i in range(4))
    k0, k1 = np.uint32(k[0]), np.uint32(k[1])
    with np.errstate(over="ignore"):
        for r in range(rounds):
            p0 = _M0 * c0
            p1 = _M1 * c2
            hi0, lo0 = p0 >> _SHIFT, p0 & _MASK
            hi1, lo1 = p1 >> _SHIFT, p1 & _MASK
            c0 = hi1 ^ c1 ^ np.uint64(k0)
            c1 = lo1
            c2 = hi0 ^ c3 ^ np.uint64(k1)
            c3 = lo0
            if r < rounds - 1:
                k0 = np.uint32(k0 + _W0)
                k1 = np.uint32(k1 + _W1)
    return np.stack([c0, c1, c2, c3], axis=-1).astype(np.uint32)


def seed_key(seed: int) -> np.ndarray:
    """Split a 64-bit seed into the two key words (low word first)."""
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return np.array([seed & 0xFFFFFFFF, seed >> 32], dtype=np.uint32)


def _counters(paths, steps, blocks, stream):
    P, S, B = np.meshgrid(paths, steps, blocks, indexing="ij")
    ctr = np.empty(P.shape + (4,), dtype=np.uint32)
    ctr[..., 0] = P
    ctr[..., 1] = S
    ctr[..., 2] = B
    ctr[..., 3] = stream
    return ctr


def uniforms52(words: np.ndarray) -> np.ndarray:
    """Two doubles in ``(0, 1)`` per 4-word block, 52 random bits each."""
    w = words.astype(np.uint64)
    a = (w[..., 0::2] >> np.uint64(6)).astype(np.float64)
    b = (w[..., 1::2] >> np.uint64(6)).astype(np.float64)
    # (k + 1/2) / 2^52 is exact for every k < 2^52, so neither end is reached;
    # with 53 bits the top value would round to 1
    return (a * 67108864.0 + b + 0.5) / 4503599627370496.0


def box_muller(u: np.ndarray) -> np.ndarray:
    """Pairs of uniforms ``(..., 2)`` to pairs of independent standard normals."""
    r = np.sqrt(-2.0 * np.log(u[..., 0]))
    phi = 2.0 * np.pi * u[..., 1]
    return np.stack([r * np.cos(phi), r * np.sin(phi)], axis=-1)


def standard_normals(seed: int, paths, steps, m: int, stream: int = STREAM_NOISE) -> np.ndarray:
    """Normals indexed by ``(path, step, component)``, shape ``(len(paths), len(steps), m)``."""
    blocks = np.arange((m + 1) // 2)
    words = philox4x32(_counters(paths, steps, blocks, stream), seed_key(seed))
    z = box_muller(uniforms52(words))  # (P, S, B, 2)
    return z.reshape(z.shape[:2] + (-1,))[..., :m]


def uniform_points(seed: int, paths, n: int, stream: int = STREAM_INITIAL) -> np.ndarray:
    """Uniform points of ``[0, 1)^n`` indexed by path, shape ``(len(paths), n)``."""
    blocks = np.arange((n + 1) // 2)
    words = philox4x32(_counters(paths, [0], blocks, stream), seed_key(seed))
    u = uniforms52(words)[:, 0]  # (P, B, 2)
    return u.reshape(u.shape[0], -1)[:, :n]
