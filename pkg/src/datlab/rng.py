"""Seedable counter-based random generator (splitmix64, stream v1).

All randomness in the lab flows through :class:`Rng` so that runs are
reproducible bit-for-bit from a single integer seed.  The generator is
splitmix64: a 64-bit counter advanced by a fixed odd constant, with the
output produced by an integer mixing function.  Everything is plain
integer arithmetic modulo 2**64, so the u64 stream and the float
derivation below are identical on every platform.

Float derivation (fixed for stream v1): take the high 24 bits of the
mixed 64-bit output and scale by 2**-24, giving a dyadic rational in
[0, 1).  Gaussian draws use Box-Muller on top of those floats; they are
reproducible on a given platform but additionally depend on libm's
log/cos rounding, unlike the integer and uniform-float streams.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15  # splitmix64 counter increment

STREAM_VERSION = "splitmix64/v1"


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, *parts: int | str) -> int:
    """Derive an independent 64-bit stream seed from ``seed`` and tags.

    Each part (string tags are absorbed byte-wise, ints directly) is
    folded into a running splitmix64 state.  Used to split training,
    initialization, and per-length evaluation streams from one run seed.
    """
    state = _mix(seed & _MASK64)
    for part in parts:
        if isinstance(part, str):
            for b in part.encode("utf-8"):
                state = _mix((state + _GAMMA + b) & _MASK64)
        else:
            state = _mix((state + _GAMMA + (part & _MASK64)) & _MASK64)
    return state


class Rng:
    """splitmix64 stream; deterministic across platforms for a given seed."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK64
        return _mix(self.state)

    def next_float(self) -> float:
        # High 24 bits -> [0, 1); exactly representable in float32 and float64.
        return (self.next_u64() >> 40) * 2.0**-24

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n), unbiased via rejection sampling."""
        if n <= 0:
            raise ValueError(f"randint requires n >= 1, got {n}")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def sample_distinct(self, pool: int, k: int) -> list[int]:
        """Draw k distinct integers from [0, pool) via partial Fisher-Yates."""
        if k > pool:
            raise ValueError(f"cannot draw {k} distinct values from a pool of {pool}")
        items = list(range(pool))
        for i in range(k):
            j = i + self.randint(pool - i)
            items[i], items[j] = items[j], items[i]
        return items[:k]

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.next_float()

    def normal(self) -> float:
        """Standard Gaussian via Box-Muller (see module note on libm)."""
        # Offset keeps u1 strictly inside (0, 1) so log never sees zero.
        u1 = ((self.next_u64() >> 40) + 0.5) * 2.0**-24
        u2 = self.next_float()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def fork(self, *parts: int | str) -> "Rng":
        """Child stream keyed by tags; independent of this stream's future."""
        return Rng(derive_seed(self.state, *parts))

    # -- vectorized bulk draws (bit-identical to the scalar stream) -----
    def fill_u64(self, count: int) -> np.ndarray:
        """The next ``count`` u64 draws as one array.

        splitmix64's counter structure makes the k-th upcoming output a
        pure function of state + k*gamma, so the whole block can be mixed
        at once; the state advances exactly as ``count`` scalar calls would.
        """
        idx = np.arange(1, count + 1, dtype=np.uint64)
        z = np.uint64(self.state) + idx * np.uint64(_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
        self.state = (self.state + count * _GAMMA) & _MASK64
        return z

    def fill_uniform(self, shape) -> np.ndarray:
        """Array of [0, 1) floats using the standard high-24-bit derivation."""
        count = int(np.prod(shape)) if isinstance(shape, (tuple, list)) else int(shape)
        out = (self.fill_u64(count) >> np.uint64(40)).astype(np.float64) * 2.0**-24
        return out.reshape(shape)

    def fill_normal(self, shape) -> np.ndarray:
        """Array of standard Gaussians; consumes draws like repeated normal()."""
        count = int(np.prod(shape)) if isinstance(shape, (tuple, list)) else int(shape)
        raw = self.fill_u64(2 * count)
        u1 = ((raw[0::2] >> np.uint64(40)).astype(np.float64) + 0.5) * 2.0**-24
        u2 = (raw[1::2] >> np.uint64(40)).astype(np.float64) * 2.0**-24
        out = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return out.reshape(shape)
