"""Deterministic, splittable, counter-based random number generation.

Every random choice in the package (fold assignment, simulation draws,
k-means restarts) goes through :class:`Stream` so results are bit-identical
across runs, platforms, and worker counts. The core primitive is the
SplitMix64 output function applied to ``key + counter * GOLDEN``; drawing n
values just evaluates the mix at n consecutive counters, which vectorizes
and never depends on execution order. Child streams are derived by hashing
a label into the key, so any tree of streams is reproducible from the root
seed alone.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_SPLIT_SALT = 0xD6E8FEB86659FD93
_STR_SEED = 0xCBF29CE484222325

_U64_GOLDEN = np.uint64(_GOLDEN)
_U64_MIX1 = np.uint64(_MIX1)
_U64_MIX2 = np.uint64(_MIX2)


def _mix64(z: int) -> int:
    """SplitMix64 finalizer on a Python int (used for key derivation)."""
    z = (z + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    """Vectorized SplitMix64 finalizer on a uint64 array."""
    with np.errstate(over="ignore"):
        z = z + _U64_GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _U64_MIX1
        z = (z ^ (z >> np.uint64(27))) * _U64_MIX2
        return z ^ (z >> np.uint64(31))


def _token(label: int | str) -> int:
    if isinstance(label, str):
        t = _STR_SEED
        for b in label.encode("utf-8"):
            t = _mix64(t ^ b)
        return t
    return label & _MASK64


class Stream:
    """A counter-based random stream identified by a 64-bit key.

    ``child(label)`` derives an independent stream; drawing from a parent
    never perturbs its children and vice versa.
    """

    __slots__ = ("key", "counter")

    def __init__(self, seed: int, counter: int = 0):
        self.key = seed & _MASK64
        self.counter = counter

    def child(self, label: int | str) -> "Stream":
        return Stream(_mix64(_mix64(self.key ^ _SPLIT_SALT) ^ _token(label)))

    def u64(self, n: int) -> np.ndarray:
        """Next n raw 64-bit words."""
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix64_array(np.uint64(self.key) + idx * _U64_GOLDEN)

    def uniform(self, n: int) -> np.ndarray:
        """n doubles uniform on [0, 1) with 53-bit resolution."""
        return (self.u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, n: int) -> np.ndarray:
        """n standard normal draws via Box-Muller."""
        m = (n + 1) // 2
        u1 = self.uniform(m)
        u2 = self.uniform(m)
        r = np.sqrt(-2.0 * np.log1p(-u1))
        theta = (2.0 * np.pi) * u2
        out = np.concatenate([r * np.cos(theta), r * np.sin(theta)])
        return out[:n]

    def bernoulli(self, p: float | np.ndarray, n: int | None = None) -> np.ndarray:
        """0/1 draws with success probability p (scalar or per-element)."""
        p = np.asarray(p, dtype=np.float64)
        size = p.shape[0] if p.ndim else int(n)  # type: ignore[arg-type]
        return (self.uniform(size) < p).astype(np.int64)

    def integers(self, n: int, bound: int) -> np.ndarray:
        """n integers in [0, bound). Bias is O(bound / 2^53), negligible here."""
        out = np.floor(self.uniform(n) * bound).astype(np.int64)
        return np.minimum(out, bound - 1)

    def permutation(self, n: int) -> np.ndarray:
        """A uniform permutation of 0..n-1 (argsort of random keys)."""
        return np.argsort(self.u64(n), kind="stable")

    def weighted_index(self, weights: np.ndarray) -> int:
        """One index drawn with probability proportional to weights."""
        w = np.asarray(weights, dtype=np.float64)
        total = w.sum()
        if not total > 0:
            return 0
        cdf = np.cumsum(w) / total
        u = self.uniform(1)[0]
        return int(np.searchsorted(cdf, u, side="right").clip(0, len(w) - 1))
