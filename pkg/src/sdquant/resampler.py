"""Fourier-domain resampling of matrix rows.

Growing a row zero-pads its spectrum between the positive and negative
frequency halves; shrinking keeps the lowest ``ceil(n/2)`` positive and
``floor(n/2)`` negative bins. When the shorter of the two lengths is even
its Nyquist bin is split in half on the way up and folded (doubled) on the
way down, which makes up-then-down an exact round trip for any pair of
lengths. Output is rescaled by ``len_out / len_in`` so the mean is kept.

Real-input transforms are used throughout; the half spectrum reproduces the
full-spectrum bin rules exactly, and the output is real by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def upsampled_length(length: int, osr: float) -> int:
    """``round(osr * length)`` with ties to even (Python's ``round``)."""
    if osr < 1:
        raise ValueError(f"OSR must be >= 1, got {osr}")
    return int(round(osr * length))


@dataclass(frozen=True)
class ResamplePlan:
    """Resampling between two fixed row lengths, applied along the last axis.

    ``adjoint=True`` selects the transpose of downsampling (scaled by
    ``len_out / len_in``) instead of interpolation: the Nyquist bin of an even
    input is copied to both spectral halves rather than split. The two
    variants differ only in that one bin; the adjoint form satisfies
    ``<up(a), y> = (len_out/len_in) * <a, down(y)>`` exactly, which is what
    inference needs.
    """

    len_in: int
    len_out: int
    adjoint: bool = False

    def __post_init__(self):
        if self.len_in < 1 or self.len_out < 1:
            raise ValueError("lengths must be >= 1")

    @property
    def ratio(self) -> float:
        return self.len_out / self.len_in

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.len_in:
            raise ValueError(f"expected last axis of length {self.len_in}, got {x.shape[-1]}")
        if not np.isfinite(x).all():
            raise ValueError("resample input contains non-finite values")
        n, m = self.len_in, self.len_out
        if n == m:
            return x.copy()
        spec = np.fft.rfft(x, axis=-1)
        out = np.zeros(x.shape[:-1] + (m // 2 + 1,), dtype=np.complex128)
        if m > n:
            out[..., : n // 2 + 1] = spec
            if n % 2 == 0 and not self.adjoint:
                out[..., n // 2] *= 0.5
        else:
            out[..., :] = spec[..., : m // 2 + 1]
            if m % 2 == 0:
                out[..., m // 2] *= 2.0
        return np.fft.irfft(out, n=m, axis=-1) * (m / n)


def resample_row(w, len_out: int) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1:
        raise ValueError("resample_row expects a 1-D row")
    return ResamplePlan(w.size, len_out)(w)


def resample_matrix(w, len_out: int) -> np.ndarray:
    """Resample every row of ``w`` to ``len_out`` columns."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError("resample_matrix expects a 2-D matrix")
    return ResamplePlan(w.shape[1], len_out)(w)


def upsample_adjoint(a, len_out: int) -> np.ndarray:
    """Upsample rows of ``a`` with the downsampling adjoint (see :class:`ResamplePlan`)."""
    a = np.asarray(a, dtype=np.float64)
    if len_out < a.shape[-1]:
        raise ValueError("upsample_adjoint cannot shrink")
    return ResamplePlan(a.shape[-1], len_out, adjoint=True)(a)
