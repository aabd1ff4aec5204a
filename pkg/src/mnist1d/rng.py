"""Counter-based random streams with platform-independent, order-independent keys.

Every randomized object in the package (dataset example, trial, parameter
tensor) owns its own stream keyed by ``(root_seed, stream_id)``.  Streams never
share state, so drawing from one can never perturb another; this is what makes
generation embarrassingly parallel yet bit-reproducible.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One step of the splitmix64 hash (public-domain constants)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive(root_seed: int, *stream_ids: int) -> int:
    """Hash a root seed and any number of sub-stream ids into a 64-bit key."""
    key = splitmix64(root_seed & _MASK64)
    for sid in stream_ids:
        key = splitmix64(key ^ splitmix64(sid & _MASK64))
    return key


class RngStream:
    """An independent random stream identified by ``(root_seed, stream_id)``.

    Backed by the Philox counter-based generator, so values depend only on the
    key and the sequence of draws made on this stream.  ``counter`` records the
    number of scalar values drawn so far.
    """

    def __init__(self, root_seed: int, stream_id: int = 0):
        self.root_seed = int(root_seed)
        self.stream_id = int(stream_id)
        self.counter = 0
        key = derive(self.root_seed, self.stream_id)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None) -> np.ndarray | float:
        self.counter += int(np.prod(size)) if size is not None else 1
        return self._gen.uniform(low, high, size)

    def integers(self, low: int, high: int, size=None) -> np.ndarray | int:
        """Uniform integers in ``[low, high)``."""
        self.counter += int(np.prod(size)) if size is not None else 1
        return self._gen.integers(low, high, size)

    def normal(self, size=None) -> np.ndarray | float:
        self.counter += int(np.prod(size)) if size is not None else 1
        return self._gen.standard_normal(size)

    def permutation(self, n: int) -> np.ndarray:
        self.counter += n
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        self.counter += size
        return self._gen.choice(n, size=size, replace=replace)

    def __repr__(self) -> str:
        return f"RngStream(root_seed={self.root_seed}, stream_id={self.stream_id}, counter={self.counter})"
