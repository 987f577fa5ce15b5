"""Compression accounting, error norms, error spectra and OSR sweeps."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .engine import QuantizeConfig, build_hessian, quantize_matrix, reconstruct
from .hadamard import block_ops, rotate_blocks
from .resampler import ResamplePlan
from .tensor_io import QuantizedWeight

# effective bits per symbol used for storage accounting
QUANTIZER_BITS = {"binary": 1.0, "ternary": 1.58}

SWEEP_COLUMNS = ("osr", "eta", "frob_rel", "out_rel", "in_band_frac")
SPECTRUM_COLUMNS = ("band", "f_lo", "f_hi", "signal_energy", "error_energy")


def compression_ratio(quantizer: str, osr: float, include_scales: bool = False,
                      rows: int | None = None, cols: int | None = None, *, bits: float | None = None) -> float:
    """Storage of the quantized weights relative to FP16: ``N * osr / 16``.

    ``bits`` overrides the per-symbol rate ``N``. With ``include_scales`` one
    32-bit scale per row is added, i.e. ``32 * rows / (16 * rows * cols)``.
    """
    if osr < 1:
        raise ValueError("osr must be >= 1")
    n = QUANTIZER_BITS[quantizer] if bits is None else bits
    eta = n * osr / 16.0
    if include_scales:
        if not rows or not cols:
            raise ValueError("rows and cols are required to account for scales")
        eta += 32.0 * rows / (16.0 * rows * cols)
    return eta


def error_report(w, q: QuantizedWeight, x=None) -> dict[str, float]:
    w = np.asarray(w, dtype=np.float64)
    w_hat = reconstruct(q)
    if w.shape != w_hat.shape:
        raise ValueError(f"weight shape {w.shape} does not match quantized shape {w_hat.shape}")
    diff = w - w_hat
    w_norm = np.linalg.norm(w)
    report = {
        "frobenius_rel": float(np.linalg.norm(diff) / w_norm) if w_norm else float(np.linalg.norm(diff)),
        "max_abs": float(np.max(np.abs(diff))),
    }
    if x is not None:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != w.shape[1]:
            raise ValueError(f"activations must have {w.shape[1]} columns")
        ref = np.linalg.norm(x @ w.T)
        err = np.linalg.norm(x @ diff.T)
        report["output_frobenius_rel"] = float(err / ref) if ref else float(err)
    return report


# ------------------------------------------------------------------------ spectra


@dataclass(frozen=True)
class SpectrumReport:
    band_edges: np.ndarray  # n_bands + 1 normalized frequencies spanning [0, 0.5]
    signal_energy: np.ndarray
    error_energy: np.ndarray
    in_band_fraction: float

    @property
    def total_error(self) -> float:
        return float(self.error_energy.sum())

    def half_split(self) -> tuple[float, float]:
        """Error energy in the low and high halves of [0, 0.5]."""
        half = len(self.error_energy) // 2
        return float(self.error_energy[:half].sum()), float(self.error_energy[half:].sum())

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(SPECTRUM_COLUMNS)
        for i, (s, e) in enumerate(zip(self.signal_energy, self.error_energy)):
            writer.writerow([i, repr(float(self.band_edges[i])), repr(float(self.band_edges[i + 1])),
                             repr(float(s)), repr(float(e))])
        return buf.getvalue()


def bin_energy(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-bin time-domain energy of a real signal on its half spectrum.

    Returns ``(freqs, energy)`` with ``energy.sum() == sum(x**2)``.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    spec = np.fft.rfft(x)
    energy = np.abs(spec) ** 2 / n
    energy[1: (n + 1) // 2] *= 2.0  # fold the negative-frequency mirror
    return np.fft.rfftfreq(n), energy


def band_energies(x: np.ndarray, n_bands: int) -> np.ndarray:
    freqs, energy = bin_energy(x)
    idx = np.minimum((freqs * 2 * n_bands).astype(int), n_bands - 1)
    return np.bincount(idx, weights=energy, minlength=n_bands)


def in_band_fraction(err: np.ndarray, osr: float) -> float:
    """Share of error energy at normalized frequency ``<= 0.5 / osr`` (the signal band)."""
    freqs, energy = bin_energy(err)
    total = energy.sum()
    if total == 0:
        return 0.0
    return float(energy[freqs <= 0.5 / osr + 1e-12].sum() / total)


def spectrum_report(w_row, symbols, scale: float, osr: float | None = None, n_bands: int = 32) -> SpectrumReport:
    """Spectrum of ``scale * symbols - up(w_row)`` where ``up`` resamples to ``len(symbols)``.

    ``osr`` defaults to ``len(symbols) / len(w_row)``.
    """
    w_row = np.asarray(w_row, dtype=np.float64)
    y = np.asarray(symbols, dtype=np.float64)
    if w_row.ndim != 1 or y.ndim != 1 or y.size < w_row.size:
        raise ValueError("need 1-D rows with len(symbols) >= len(w_row)")
    if osr is None:
        osr = y.size / w_row.size
    up = ResamplePlan(w_row.size, y.size)(w_row)
    err = scale * y - up
    return SpectrumReport(
        band_edges=np.linspace(0.0, 0.5, n_bands + 1),
        signal_energy=band_energies(up, n_bands),
        error_energy=band_energies(err, n_bands),
        in_band_fraction=in_band_fraction(err, osr),
    )


def parseval_inner(a, b) -> tuple[complex, complex]:
    """``(sum a * conj(b), (1/N) sum A * conj(B))``; equal up to round-off."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("need two 1-D vectors of equal length")
    time = np.vdot(b, a)
    freq = np.vdot(np.fft.fft(b), np.fft.fft(a)) / a.size
    return complex(time), complex(freq)


def column_flatness(w) -> float:
    """max / mean of the column-wise mean magnitude; 1.0 means perfectly flat."""
    col = np.mean(np.abs(np.asarray(w, dtype=np.float64)), axis=0)
    return float(col.max() / col.mean())


def first_block_in_band(w, q: QuantizedWeight) -> float:
    """Mean in-band error fraction over rows of the first block of ``q``."""
    w = np.asarray(w, dtype=np.float64)[:, : q.block_size]
    if q.hadamard:
        w = rotate_blocks(w, block_ops(q.block_size, 1, q.seed))
    fracs = [
        spectrum_report(w[r], q.symbols[r, : q.block_width], q.row_scales[r], q.osr).in_band_fraction
        for r in range(q.rows)
    ]
    return float(np.mean(fracs))


# -------------------------------------------------------------------------- sweeps


@dataclass(frozen=True)
class SweepRow:
    osr: float
    eta: float
    frob_rel: float
    out_rel: float
    in_band_frac: float


def osr_sweep(w, x, cfg_base: QuantizeConfig, osr_list: Sequence[float], *,
              threads: int | None = None) -> list[SweepRow]:
    osr_list = [float(o) for o in osr_list]
    if not osr_list:
        raise ValueError("empty OSR list")
    if any(b < a for a, b in zip(osr_list, osr_list[1:])):
        raise ValueError("osr_list must be sorted ascending")
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    hess = build_hessian(x, cfg_base.lambda_fraction, rotation=cfg_base.rotation) if cfg_base.compensation else None

    def point(osr: float) -> SweepRow:
        cfg = replace(cfg_base, osr=osr)
        q = quantize_matrix(w, hess, cfg)
        rep = error_report(w, q, x)
        return SweepRow(osr, compression_ratio(cfg.quantizer, osr), rep["frobenius_rel"],
                        rep["output_frobenius_rel"], first_block_in_band(w, q))

    if threads and threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(point, osr_list))
    return [point(o) for o in osr_list]


def sweep_csv(rows: Iterable[SweepRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for r in rows:
        writer.writerow([repr(getattr(r, c)) for c in SWEEP_COLUMNS])
    return buf.getvalue()
