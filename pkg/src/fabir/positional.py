"""Trigonometric position encodings."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from fabir.errors import ConfigError


def frequencies(d: int) -> np.ndarray:
    """``f_k = 10000^(-2(k-1)/d)`` for ``k = 1..d/2``, in float64."""
    k = np.arange(d // 2, dtype=np.float64)
    return 10000.0 ** (-2.0 * k / d)


@lru_cache(maxsize=64)
def _encode64(length: int, d: int) -> np.ndarray:
    pos = np.arange(length, dtype=np.float64)[:, None]
    angles = pos * frequencies(d)[None, :]
    out = np.empty((length, d), dtype=np.float64)
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    out.flags.writeable = False
    return out


def encode(length: int, d: int, dtype=np.float64) -> np.ndarray:
    """Encoding matrix ``E`` of shape ``(length, d)``; row ``i`` encodes position ``i``.

    Columns alternate ``sin(i*f_k), cos(i*f_k)``. Positions start at 0.
    """
    if d <= 0 or d % 2:
        raise ConfigError(f"encoding width must be even and positive, got {d}")
    if length < 1:
        raise ConfigError(f"encoding length must be positive, got {length}")
    return _encode64(int(length), int(d)).astype(dtype)
