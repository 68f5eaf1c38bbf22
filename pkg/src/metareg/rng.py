"""Deterministic, seedable random streams.

The uniform core is SplitMix64 run in counter mode: draw ``i`` of a stream
is ``mix64(base + (i + 1) * GAMMA) >> 11`` scaled to [0, 1), where ``mix64``
is the SplitMix64 finalizer and ``base = master_seed XOR mix64(stream_id *
GAMMA + STREAM_SALT)``. Streams are therefore addressable by (master_seed,
stream_id) alone: replicate r's draws never depend on how work was
scheduled, which makes parallel simulation exactly reproducible.

All sampling algorithms here are frozen. Changing the uniform core, the
Box-Muller pairing, the binomial branch threshold, or the per-call draw
order invalidates golden outputs and is a breaking change.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import DataError

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_STREAM_SALT = 0xD1B54A32D192ED03
_INV53 = 1.0 / (1 << 53)

# Below this value of n * min(p, 1-p) binomial sampling walks the CDF by
# inversion; at or above it the BTRS accept-reject sampler is used.
BINOMIAL_INVERSION_THRESHOLD = 10.0

_U64_GAMMA = np.uint64(_GAMMA)


def _mix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer on a uint64 array (wrapping arithmetic)."""
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _mix64_int(z: int) -> int:
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def parse_seed(text: str) -> int:
    """Parse a seed given as decimal or 0x-prefixed hex."""
    try:
        value = int(text, 0)
    except ValueError:
        raise DataError(f"seed {text!r} is not a decimal or 0x-hex integer") from None
    if not 0 <= value < 1 << 64:
        raise DataError(f"seed {value} outside the 64-bit unsigned range")
    return value


@dataclass(frozen=True)
class SeedSpec:
    """Addresses one reproducible stream: a master seed plus a stream id."""

    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("master_seed", "stream_id"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or not 0 <= value < 1 << 64:
                raise DataError(f"{name} must be an unsigned 64-bit integer, got {value!r}")


class RandomStream:
    """Single-consumer stream of uniforms, normals, and binomials.

    Distinct streams (distinct ``SeedSpec``) may be consumed concurrently
    without coordination; one stream must not be shared across threads.
    """

    def __init__(self, seed: SeedSpec | int, stream_id: int = 0):
        if not isinstance(seed, SeedSpec):
            seed = SeedSpec(int(seed), stream_id)
        self.seed = seed
        self._base = seed.master_seed ^ _mix64_int(
            (seed.stream_id * _GAMMA + _STREAM_SALT) & _MASK64
        )
        self._counter = 0

    def _raw(self, size: int) -> np.ndarray:
        start = self._counter + 1
        self._counter += size
        idx = np.arange(start, start + size, dtype=np.uint64)
        return _mix64(idx * _U64_GAMMA + np.uint64(self._base))

    def uniforms(self, size: int) -> np.ndarray:
        """size draws uniform on [0, 1) with 53-bit resolution."""
        bits = self._raw(size)
        return (bits >> np.uint64(11)).astype(np.float64) * _INV53

    def uniform(self) -> float:
        return float(self.uniforms(1)[0])

    def normals(self, size: int) -> np.ndarray:
        """size standard normal draws via Box-Muller pairs.

        Consumes 2 * ceil(size / 2) uniforms; the second member of the last
        pair is discarded when size is odd.
        """
        pairs = (size + 1) // 2
        bits = self._raw(2 * pairs)
        # u1 in (0, 1] so log(u1) is finite; u2 in [0, 1).
        u1 = ((bits[:pairs] >> np.uint64(11)).astype(np.float64) + 1.0) * _INV53
        u2 = (bits[pairs:] >> np.uint64(11)).astype(np.float64) * _INV53
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u2
        out = np.empty(2 * pairs)
        out[0::2] = radius * np.cos(angle)
        out[1::2] = radius * np.sin(angle)
        return out[:size]

    def normal(self) -> float:
        return float(self.normals(1)[0])

    def binomials(self, n: np.ndarray, p: np.ndarray) -> np.ndarray:
        """Elementwise binomial draws for counts ``n`` and probabilities ``p``.

        Sampling runs on q = min(p, 1-p) and reflects the result when
        p > 1/2. Elements with n*q below ``BINOMIAL_INVERSION_THRESHOLD``
        are drawn first (in index order) by CDF inversion, the rest by the
        BTRS transformed-rejection sampler of Hormann (1993).
        """
        n = np.asarray(n, dtype=np.int64)
        p = np.asarray(p, dtype=np.float64)
        if n.shape != p.shape:
            raise DataError("binomials: n and p must have matching shapes")
        if np.any(n < 1):
            raise DataError("binomials: all n must be positive")
        if np.any((p < 0.0) | (p > 1.0)) or not np.all(np.isfinite(p)):
            raise DataError("binomials: all p must lie in [0, 1]")

        out = np.zeros(n.shape, dtype=np.int64)
        flip = p > 0.5
        q = np.where(flip, 1.0 - p, p)

        degenerate = q == 0.0
        small = ~degenerate & (n * q < BINOMIAL_INVERSION_THRESHOLD)
        large = ~degenerate & ~small
        if np.any(small):
            out[small] = self._binomial_inversion(n[small], q[small])
        if np.any(large):
            out[large] = self._binomial_btrs(n[large], q[large])
        out[flip] = n[flip] - out[flip]
        return out

    def binomial(self, n: int, p: float) -> int:
        return int(self.binomials(np.array([n]), np.array([p]))[0])

    def _binomial_inversion(self, n, q):
        """CDF walk from k = 0; consumes one uniform per element."""
        remaining = self.uniforms(n.size)
        k = np.zeros(n.size, dtype=np.int64)
        ratio = q / (1.0 - q)
        pmf = (1.0 - q) ** n
        active = (remaining >= pmf) & (k < n)
        while np.any(active):
            remaining[active] -= pmf[active]
            k[active] += 1
            pmf[active] *= ratio[active] * (n[active] - k[active] + 1) / k[active]
            active = (remaining >= pmf) & (k < n)
        return k

    def _binomial_btrs(self, n, q):
        """BTRS accept-reject for n*q >= 10; two uniforms per attempt."""
        nf = n.astype(np.float64)
        spq = np.sqrt(nf * q * (1.0 - q))
        b = 1.15 + 2.53 * spq
        a = -0.0873 + 0.0248 * b + 0.01 * q
        c = nf * q + 0.5
        vr = 0.92 - 4.2 / b
        alpha = (2.83 + 5.1 / b) * spq
        lpq = np.log(q / (1.0 - q))
        m = np.floor((nf + 1.0) * q)
        h = gammaln(m + 1.0) + gammaln(nf - m + 1.0)

        out = np.zeros(n.size, dtype=np.int64)
        pending = np.arange(n.size)
        while pending.size:
            u = self.uniforms(pending.size) - 0.5
            v = self.uniforms(pending.size)
            us = 0.5 - np.abs(u)
            i = pending
            k = np.floor((2.0 * a[i] / us + b[i]) * u + c[i])
            in_range = (k >= 0.0) & (k <= nf[i])
            easy = in_range & (us >= 0.07) & (v <= vr[i])
            with np.errstate(divide="ignore"):
                logv = np.log(v * alpha[i] / (a[i] / (us * us) + b[i]))
            kc = np.clip(k, 0.0, nf[i])
            bound = h[i] - gammaln(kc + 1.0) - gammaln(nf[i] - kc + 1.0) + (kc - m[i]) * lpq[i]
            accept = easy | (in_range & (logv <= bound))
            out[i[accept]] = k[accept].astype(np.int64)
            pending = i[~accept]
        return out
