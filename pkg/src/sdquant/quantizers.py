"""Scalar quantizers: symmetric round-to-nearest, sign binarization, ternarization.

These are the baselines and the building blocks of the Sigma-Delta loop. All
functions take a 1-D row and treat an all-zero row as a pass-through.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuantizerSpec:
    kind: str = "ternary"  # "rtn", "binary" or "ternary"
    bits: int | None = None
    threshold_fraction: float = 0.5

    def __post_init__(self):
        if self.kind not in ("rtn", "binary", "ternary"):
            raise ValueError(f"unknown quantizer kind {self.kind!r}")
        if self.kind == "rtn" and (self.bits is None or not 2 <= self.bits <= 8):
            raise ValueError("rtn bits must be in [2, 8]")
        if not 0.0 < self.threshold_fraction < 1.0:
            raise ValueError("threshold_fraction must lie in (0, 1)")

    def apply(self, row) -> np.ndarray:
        """Quantize and dequantize ``row`` (scale times symbols)."""
        if self.kind == "rtn":
            return rtn_quantize(row, self.bits)
        if self.kind == "binary":
            symbols, alpha = binarize(row)
            return alpha * symbols
        symbols, alpha, _ = ternarize(row, self.threshold_fraction)
        return alpha * symbols


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _as_row(row) -> np.ndarray:
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1 or row.size == 0:
        raise ValueError("expected a non-empty 1-D row")
    if not np.isfinite(row).all():
        raise ValueError("row contains non-finite values")
    return row


def rtn_quantize(row, bits: int) -> np.ndarray:
    """Symmetric round-to-nearest with step ``max|row| / 2**(bits-1)``.

    Ties round away from zero so that ``rtn(-x) == -rtn(x)``.
    """
    row = _as_row(row)
    if not 2 <= bits <= 8:
        raise ValueError("bits must be in [2, 8]")
    peak = np.max(np.abs(row))
    if peak == 0:
        return np.zeros_like(row)
    step = peak / 2 ** (bits - 1)
    return step * round_half_away(row / step)


def sign(x: np.ndarray) -> np.ndarray:
    """Sign with sign(0) = +1."""
    return np.where(np.asarray(x) >= 0, 1, -1).astype(np.int8)


def ternary_symbols(x: np.ndarray, threshold) -> np.ndarray:
    """+1 above ``threshold``, -1 below ``-threshold``, 0 on the closed band between."""
    x = np.asarray(x)
    return (x > threshold).astype(np.int8) - (x < -threshold).astype(np.int8)


def binarize(row) -> tuple[np.ndarray, float]:
    row = _as_row(row)
    return sign(row), float(np.mean(np.abs(row)))


def ternarize(row, threshold_fraction: float = 0.5) -> tuple[np.ndarray, float, float]:
    """Return ``(symbols, alpha, theta)`` with ``alpha = mean|row|``, ``theta = fraction * alpha``."""
    row = _as_row(row)
    if not 0.0 < threshold_fraction < 1.0:
        raise ValueError("threshold_fraction must lie in (0, 1)")
    alpha = float(np.mean(np.abs(row)))
    theta = threshold_fraction * alpha
    return ternary_symbols(row, theta), alpha, theta
