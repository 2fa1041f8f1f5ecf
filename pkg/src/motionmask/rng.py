"""Counter-based deterministic random numbers.

Every stochastic choice in this package (mask sampling, ego selection,
weight init, synthetic scenes, batch draws) goes through :class:`SeedStream`
so that results are bit-reproducible across runs, platforms, and thread
counts.  The generator is fully specified here so an independent
reimplementation can reproduce any draw sequence:

* ``mix64`` is the splitmix64 finalizer (Steele, Lea & Flood 2014).
* Draw ``i`` (1-based) of a stream with seed ``s`` is
  ``mix64((s + i * GOLDEN) mod 2^64)`` where ``GOLDEN = 0x9E3779B97F4A7C15``.
* ``uniform()`` maps a 64-bit draw ``u`` to the double ``(u >> 11) * 2^-53``.
* ``below(n)`` is ``floor(uniform() * n)``.
* ``shuffle`` is the Fisher-Yates walk from the last index down, swapping
  index ``i`` with ``below(i + 1)``.
* Child seeds come from :func:`derive`, which folds integer labels into the
  parent seed with ``mix64``.
"""

from __future__ import annotations

import math

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """splitmix64 finalizer: a 64-bit bijective mixing function."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive(seed: int, *labels: int) -> int:
    """Derive an independent child seed from ``seed`` and integer labels.

    ``derive(s, a, b)`` folds each label in turn:
    ``s' = mix64(s ^ mix64(label))``.  Used to split one experiment seed
    into per-step / per-scenario / per-array streams.
    """
    s = mix64(seed & MASK64)
    for label in labels:
        s = mix64(s ^ mix64(label & MASK64))
    return s


class SeedStream:
    """Deterministic stream of draws from a 64-bit seed.

    The stream is counter-based: draw ``i`` depends only on ``(seed, i)``,
    never on python or numpy global RNG state.
    """

    def __init__(self, seed: int):
        self.seed = seed & MASK64
        self.counter = 0

    def next_u64(self) -> int:
        self.counter += 1
        return mix64((self.seed + self.counter * GOLDEN) & MASK64)

    def uniform(self) -> float:
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform_range(self, lo: float, hi: float) -> float:
        return lo + self.uniform() * (hi - lo)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n): ``floor(uniform() * n)``."""
        if n <= 0:
            raise ValueError(f"below() needs n >= 1, got {n}")
        return min(int(self.uniform() * n), n - 1)

    def int_range(self, lo: int, hi: int) -> int:
        """Uniform integer in the inclusive range [lo, hi]."""
        return lo + self.below(hi - lo + 1)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle (last index downward)."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> list[int]:
        items = list(range(n))
        self.shuffle(items)
        return items

    def normal(self, std: float = 1.0) -> float:
        """Gaussian draw via Box-Muller (consumes two uniforms)."""
        u1 = self.uniform()
        u2 = self.uniform()
        # u1 == 0 would take log(0); nudge to the smallest representable draw.
        u1 = max(u1, 2.0**-53)
        return std * math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
