"""Seedable 64-bit generator used by the simulation kernels.

Both the pure-Python and the compiled kernel implement the same generator,
xoshiro256** seeded through splitmix64, so a seed fully determines a
trajectory no matter which lane executes it. Bounded integers come from a
single multiply-shift (one word per draw, bias O(k/2^64), negligible for the
ranges used here); this keeps the two lanes consuming randomness in lockstep.
"""

from __future__ import annotations

_MASK = (1 << 64) - 1


def _splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state, returning (new_state, output word)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


def seed_to_state(seed: int) -> tuple[int, int, int, int]:
    """Expand an integer seed into a nonzero xoshiro256 state (4 words)."""
    s = seed & _MASK
    words = []
    for _ in range(4):
        s, w = _splitmix64(s)
        words.append(w)
    if not any(words):
        words[0] = 0x9E3779B97F4A7C15
    return words[0], words[1], words[2], words[3]


def spawn_seeds(master_seed: int, count: int) -> list[int]:
    """Derive `count` per-replica seeds from one master seed, reproducibly."""
    if count < 0:
        raise ValueError("count must be nonnegative")
    s = master_seed & _MASK
    out = []
    for _ in range(count):
        s, w = _splitmix64(s)
        out.append(w)
    return out


class Xoshiro256:
    """xoshiro256** with helpers for uniform doubles and bounded integers."""

    __slots__ = ("s0", "s1", "s2", "s3")

    def __init__(self, seed: int = 0):
        self.s0, self.s1, self.s2, self.s3 = seed_to_state(seed)

    def next_u64(self) -> int:
        s1 = self.s1
        result = (_rotl((s1 * 5) & _MASK, 7) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 = self.s2 ^ self.s0
        s3 = self.s3 ^ s1
        self.s1 = s1 ^ s2
        self.s0 = self.s0 ^ s3
        self.s2 = s2 ^ t
        self.s3 = _rotl(s3, 45)
        return result

    def u01(self) -> float:
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0 ** -53

    def randbelow(self, k: int) -> int:
        """Uniform integer in [0, k) via multiply-shift; requires 0 < k < 2^31."""
        return (self.next_u64() * k) >> 64

    def get_state(self) -> tuple[int, int, int, int]:
        return self.s0, self.s1, self.s2, self.s3

    def set_state(self, state) -> None:
        s0, s1, s2, s3 = (int(w) & _MASK for w in state)
        if not (s0 or s1 or s2 or s3):
            raise ValueError("all-zero state is invalid for xoshiro256")
        self.s0, self.s1, self.s2, self.s3 = s0, s1, s2, s3
