"""Standard bubbles of the critical problem on R^n and their derivatives.

All evaluators accept points as arrays of shape ``(..., n)`` and work from the
squared distance ``|x - xi|^2`` so that far-field values keep full relative
precision.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidDimension, InvalidIndex


def critical_power(n: int) -> float:
    """Critical Sobolev exponent ``2n/(n-2)``."""
    if n < 3:
        raise InvalidDimension(f"dimension must be >= 3, got {n}")
    return 2.0 * n / (n - 2.0)


def alpha_n(n: int) -> float:
    """Normalisation ``[n(n-2)]^{(n-2)/4}`` making U solve -ΔU = U^{p-1}."""
    if n < 3:
        raise InvalidDimension(f"dimension must be >= 3, got {n}")
    return float((n * (n - 2.0)) ** ((n - 2.0) / 4.0))


@dataclass(frozen=True)
class BubbleParams:
    delta: float
    xi: tuple
    n: int

    def __post_init__(self):
        if self.n < 3:
            raise InvalidDimension(f"dimension must be >= 3, got {self.n}")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        xi = tuple(float(c) for c in np.ravel(self.xi))
        if len(xi) != self.n:
            raise InvalidDimension(f"center has {len(xi)} coordinates, expected {self.n}")
        object.__setattr__(self, "xi", xi)

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.xi)


def _offsets(b: BubbleParams, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != b.n:
        raise InvalidDimension(f"points have {x.shape[-1]} coordinates, expected {b.n}")
    diff = x - b.center
    return diff, np.einsum("...i,...i->...", diff, diff)


def bubble_value(b: BubbleParams, x) -> np.ndarray:
    n, d = b.n, b.delta
    _, r2 = _offsets(b, x)
    return alpha_n(n) * d ** ((n - 2) / 2) / (d * d + r2) ** ((n - 2) / 2)


def bubble_derivative(b: BubbleParams, x, j: int) -> np.ndarray:
    """``j = 0``: derivative in delta; ``j >= 1``: derivative in ``xi_j``."""
    n, d = b.n, b.delta
    if not 0 <= j <= n:
        raise InvalidIndex(f"derivative index must lie in 0..{n}, got {j}")
    diff, r2 = _offsets(b, x)
    den = (d * d + r2) ** (n / 2)
    a = alpha_n(n)
    if j == 0:
        return a * (n - 2) / 2 * d ** ((n - 4) / 2) * (r2 - d * d) / den
    return a * (n - 2) * d ** ((n - 2) / 2) * diff[..., j - 1] / den


def bubble_power(b: BubbleParams, x, q: float) -> np.ndarray:
    """``U^q`` evaluated without forming U first (keeps precision for large q)."""
    n, d = b.n, b.delta
    _, r2 = _offsets(b, x)
    return (alpha_n(n) * d ** ((n - 2) / 2)) ** q * (d * d + r2) ** (-q * (n - 2) / 2)
