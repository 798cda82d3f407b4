"""Stateless counter-based normal variates.

Every variate is a pure function of ``(seed, sample, node, role, dim)``. The
bits come from Philox4x32-10 (Salmon et al., "Parallel random numbers: as easy
as 1, 2, 3"), evaluated elementwise over numpy arrays of counters, and are
turned into normals with the Box-Muller transform. Because nothing is carried
between draws, any partition of the work across threads reproduces the same
numbers.

Counter layout (four 32-bit words)::

    c0 = node & 0xffffffff
    c1 = (role << 24) | (dim >> 1)
    c2 = sample & 0xffffffff
    c3 = sample >> 32

The key is the 64-bit seed split into two words. One Philox block yields two
uniforms and hence two normals; even dims take the cosine branch and odd dims
the sine branch.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

_MASK32 = np.uint64(0xFFFFFFFF)
_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_ROUNDS = 10


class Role(enum.IntEnum):
    """Stream tags keeping unrelated consumers of a seed apart."""

    BRIDGE = 1
    EULER = 2
    OBS_NOISE = 3
    INITIAL_STATE = 4
    DATA = 5
    REPEAT = 6


@dataclass(frozen=True)
class RngKey:
    seed: int
    sample: int = 0
    node: int = 0
    role: int = Role.BRIDGE
    dim: int = 0


def philox4x32(c0, c1, c2, c3, k0, k1):
    """Philox4x32-10 on broadcastable arrays of 32-bit words (held as uint64)."""
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK32 for c in (c0, c1, c2, c3))
    k0 = int(k0) & 0xFFFFFFFF
    k1 = int(k1) & 0xFFFFFFFF
    for r in range(_ROUNDS):
        if r:
            k0 = (k0 + _W0) & 0xFFFFFFFF
            k1 = (k1 + _W1) & 0xFFFFFFFF
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (
            (p1 >> np.uint64(32)) ^ c1 ^ np.uint64(k0),
            p1 & _MASK32,
            (p0 >> np.uint64(32)) ^ c3 ^ np.uint64(k1),
            p0 & _MASK32,
        )
    return c0, c1, c2, c3


def _to_open_unit(hi, lo):
    # 53 bits, shifted half an ulp off zero so log() is always finite
    bits = ((hi >> np.uint64(5)) << np.uint64(26)) | (lo >> np.uint64(6))
    return (bits.astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def _split_seed(seed: int) -> tuple[int, int]:
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
    return seed & 0xFFFFFFFF, seed >> 32


def normal_pairs(seed: int, samples, nodes, role: int, pairs):
    """Both Box-Muller outputs for every broadcast (sample, node, pair) triple."""
    k0, k1 = _split_seed(seed)
    samples = np.asarray(samples, dtype=np.uint64)
    nodes = np.asarray(nodes, dtype=np.uint64)
    pairs = np.asarray(pairs, dtype=np.uint64)
    c1 = (np.uint64(int(role) & 0xFF) << np.uint64(24)) | pairs
    x0, x1, x2, x3 = philox4x32(nodes, c1, samples & _MASK32, samples >> np.uint64(32), k0, k1)
    u1 = _to_open_unit(x0, x1)
    u2 = _to_open_unit(x2, x3)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = (2.0 * np.pi) * u2
    return radius * np.cos(angle), radius * np.sin(angle)


def normal_block(seed: int, samples, nodes, role: int, dim: int) -> np.ndarray:
    """Normals of shape ``(len(samples), len(nodes), dim)``.

    Entry ``[a, b, i]`` equals ``normal_draw(RngKey(seed, samples[a], nodes[b], role, i))``.
    """
    samples = np.asarray(samples, dtype=np.uint64)
    nodes = np.asarray(nodes, dtype=np.uint64)
    n_pairs = (dim + 1) // 2
    z_even, z_odd = normal_pairs(
        seed,
        samples[:, None, None],
        nodes[None, :, None],
        role,
        np.arange(n_pairs, dtype=np.uint64)[None, None, :],
    )
    out = np.empty((len(samples), len(nodes), 2 * n_pairs))
    out[..., 0::2] = z_even
    out[..., 1::2] = z_odd
    return out[..., :dim]


def normal_draw(key: RngKey) -> float:
    z_even, z_odd = normal_pairs(key.seed, key.sample, key.node, key.role, key.dim >> 1)
    return float(z_odd if key.dim & 1 else z_even)


def derive_seed(seed: int, *path: int) -> int:
    """Child seed for ``path`` (e.g. a repeat index), drawn from the parent's bit stream."""
    k0, k1 = _split_seed(seed)
    words = [int(p) & 0xFFFFFFFF for p in path[:3]] + [0] * (3 - len(path[:3]))
    hi, lo, _, _ = philox4x32(words[0], words[1] | (Role.REPEAT << 24), words[2], len(path), k0, k1)
    return (int(hi) << 32) | int(lo)
