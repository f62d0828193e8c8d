"""Gauss-Legendre rules on the unit interval and on element partitions."""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=64)
def _leggauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def gauss_unit(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``n`` Gauss-Legendre points and weights on [0, 1]."""
    if n < 1:
        raise ValueError("need at least one quadrature point")
    x, w = _leggauss(n)
    return x.copy(), w.copy()


def gauss_on_breaks(breaks: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss rule with ``n`` points on every interval of ``breaks``.

    Returns arrays of shape ``(n_intervals, n)`` so callers can keep the
    element structure.
    """
    breaks = np.asarray(breaks, dtype=float)
    x, w = _leggauss(n)
    a = breaks[:-1, None]
    h = np.diff(breaks)[:, None]
    return a + h * x[None, :], h * w[None, :]
