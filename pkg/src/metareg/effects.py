"""Logit-scale effect measure for event counts.

The transform adds 0.5 to both the event and non-event cell before taking
the log odds, so the effect and its sampling variance stay finite even when
a study observed zero events (or only events). The correction is applied
unconditionally, not just for zero cells.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class EffectData:
    """Transformed outcome ``y`` with its known sampling variance ``v``."""

    y: float
    v: float


def logit_effect(events: int, total: int) -> EffectData:
    """Continuity-corrected log odds of ``events`` out of ``total``.

    y = log((d + 0.5) / (n - d + 0.5)) and v = 1/(d + 0.5) + 1/(n - d + 0.5).
    """
    y, v = logit_effect_arrays(np.array([events]), np.array([total]))
    return EffectData(float(y[0]), float(v[0]))


def logit_effect_arrays(events: np.ndarray, totals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`logit_effect`; returns (y, v) arrays."""
    d = np.asarray(events, dtype=np.float64)
    n = np.asarray(totals, dtype=np.float64)
    if np.any(n < 1):
        raise DataError("totals must be positive")
    if np.any(d < 0) or np.any(d > n):
        raise DataError("events must lie in [0, total]")
    hit = d + 0.5
    miss = n - d + 0.5
    return np.log(hit / miss), 1.0 / hit + 1.0 / miss


def expit(theta):
    """Inverse logit, exp(t)/(1 + exp(t)), stable for any finite ``theta``.

    Separate branches for nonnegative and negative arguments avoid
    overflow; output saturates monotonically into (0, 1).
    """
    arr = np.atleast_1d(np.asarray(theta, dtype=np.float64))
    out = np.empty_like(arr)
    pos = arr >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    grow = np.exp(arr[~pos])
    out[~pos] = grow / (1.0 + grow)
    if np.isscalar(theta) or np.ndim(theta) == 0:
        return float(out[0])
    return out


def logit(p):
    """Uncorrected log odds log(p / (1 - p)); inverse of :func:`expit`."""
    arr = np.asarray(p, dtype=np.float64)
    out = np.log(arr / (1.0 - arr))
    if np.isscalar(p) or np.ndim(p) == 0:
        return float(out)
    return out
