"""Counter-based random streams.

Every Gaussian draw in the package is a pure function of
``(master_seed, namespace, step, mode, replica)``.  The bits come from
Philox-4x64-10 evaluated elementwise over numpy arrays of counters, so a
draw never depends on how many other draws were made before it, on the
band limit of the run, or on how replicas are split between workers.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

__all__ = [
    "Namespace",
    "RngStream",
    "philox4x64",
    "uniforms",
    "normals",
]

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_LO32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_KEY1 = 0x5356_4E4C_5721_0001  # fixed second key word


class Namespace:
    """Disjoint stream families; draws in different families never collide."""

    PSI = 1  # exact transitions of the stochastic convolution
    PSI_BRIDGE = 2  # midpoint bridges of the same path
    DATA = 3  # Gaussian initial data (g_n, h_n)
    OU = 4  # Ornstein-Uhlenbeck sub-steps of the split integrator
    PROPOSAL = 5  # importance-sampling proposals
    PILOT = 6  # pilot chains used to adapt proposals
    SCALAR = 7  # auxiliary scalar Gaussian samples


def _mulhilo(a, b):
    """Full 64x64 -> 128 bit product, returned as (hi, lo)."""
    lo = a * b
    a_lo, a_hi = a & _LO32, a >> _S32
    b_lo, b_hi = b & _LO32, b >> _S32
    lo_lo = a_lo * b_lo
    hi_lo = a_hi * b_lo
    lo_hi = a_lo * b_hi
    cross = (lo_lo >> _S32) + (hi_lo & _LO32) + lo_hi
    hi = a_hi * b_hi + (hi_lo >> _S32) + (cross >> _S32)
    return hi, lo


def philox4x64(c0, c1, c2, c3, key0, key1=_KEY1, rounds=10):
    """Philox-4x64 block function (Salmon et al. 2011), vectorized.

    Counter words broadcast against each other.  Returns four uint64
    arrays.  Bit-compatible with ``numpy.random.Philox`` evaluated at the
    same counter and key.
    """
    with np.errstate(over="ignore"):
        v0, v1, v2, v3 = np.broadcast_arrays(
            *(np.asarray(c, dtype=np.uint64) for c in (c0, c1, c2, c3))
        )
        k0 = np.uint64(key0)
        k1 = np.uint64(key1)
        for r in range(rounds):
            if r:
                k0 = k0 + _W0
                k1 = k1 + _W1
            hi0, lo0 = _mulhilo(_M0, v0)
            hi1, lo1 = _mulhilo(_M1, v2)
            v0, v1, v2, v3 = hi1 ^ v1 ^ k0, lo1, hi0 ^ v3 ^ k1, lo0
    return v0, v1, v2, v3


def uniforms(seed, namespace, step, mode, replica):
    """Open-interval uniforms of shape ``broadcast(step, mode, replica) + (4,)``."""
    words = philox4x64(step, mode, replica, namespace, np.uint64(seed))
    bits = np.stack(words, axis=-1)
    return ((bits >> _S11).astype(np.float64) + 0.5) * 2.0**-53


def normals(seed, namespace, step, mode, replica):
    """Standard normals of shape ``broadcast(step, mode, replica) + (4,)``."""
    return ndtri(uniforms(seed, namespace, step, mode, replica))


@dataclass(frozen=True)
class RngStream:
    """Identity of a family of replica streams.

    ``replicas`` are the replica indices carried by this stream; batched
    samplers return one sample per entry, in this order.
    """

    master_seed: int
    replicas: np.ndarray = field(default_factory=lambda: np.zeros(1, dtype=np.uint64))

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must fit in 64 bits")
        reps = np.atleast_1d(np.asarray(self.replicas, dtype=np.uint64))
        object.__setattr__(self, "replicas", reps)

    @classmethod
    def range(cls, master_seed: int, count: int, start: int = 0) -> "RngStream":
        return cls(master_seed, np.arange(start, start + count, dtype=np.uint64))

    def subset(self, index) -> "RngStream":
        return RngStream(self.master_seed, self.replicas[index])

    def __len__(self):
        return len(self.replicas)

    def normals(self, namespace: int, step, mode) -> np.ndarray:
        """Normals of shape ``(replicas,) + broadcast(step, mode) + (4,)``.

        ``mode`` is typically a vector of mode identifiers, ``step`` a scalar.
        """
        mode = np.asarray(mode, dtype=np.uint64)
        rep = self.replicas.reshape((-1,) + (1,) * mode.ndim)
        return normals(self.master_seed, namespace, step, mode, rep)

    def uniforms(self, namespace: int, step, mode) -> np.ndarray:
        mode = np.asarray(mode, dtype=np.uint64)
        rep = self.replicas.reshape((-1,) + (1,) * mode.ndim)
        return uniforms(self.master_seed, namespace, step, mode, rep)
