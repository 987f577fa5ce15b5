"""Sigma-Delta post-training quantization of weight matrices.

Pipeline per weight matrix:

1. Optionally rotate each column block by its randomized Hadamard operator.
2. Build the damped Hessian ``2 X^T X + lambda I`` from calibration inputs
   (in the rotated coordinates when rotation is on) and take the upper
   Cholesky factor ``U`` of its inverse.
3. For each block left to right: upsample rows by the OSR in the Fourier
   domain, run a first-order Sigma-Delta loop with a unit-level quantizer,
   downsample the scaled codes back to the block width, and push the block
   error into the remaining columns through ``U``.

The block update is the optimal one for a fixed block error ``E``:
``W[:, rest] -= E @ inv(U[b, b]) @ U[b, rest]`` (``update_rule="obs"``).
``update_rule="literal"`` drops the ``inv(U[b, b])`` factor; that variant
only shrinks the optimal correction and is kept for comparison.

Stored codes stay in the rotated domain so they remain ternary/binary.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NumericError
from .hadamard import block_ops, is_power_of_two, rotate_blocks
from .quantizers import sign, ternary_symbols
from .resampler import ResamplePlan, upsampled_length
from .tensor_io import QUANTIZER_KINDS, QuantizedWeight

log = logging.getLogger(__name__)

LOOP_FORMS = ("eq7", "alg1")
UPDATE_RULES = ("obs", "literal")
# threshold of the in-loop ternary quantizer, as a fraction of mean |x|
TERNARY_THRESHOLD = 0.5


@dataclass(frozen=True)
class QuantizeConfig:
    osr: float = 2.0
    quantizer: str = "ternary"
    block_size: int = 128
    hadamard: bool = True
    seed: int = 0
    lambda_fraction: float = 0.01
    compensation: bool = True
    loop_form: str = "eq7"
    update_rule: str = "obs"

    def __post_init__(self):
        if not np.isfinite(self.osr) or self.osr < 1:
            raise ValueError(f"osr must be a finite real >= 1, got {self.osr}")
        if self.quantizer not in QUANTIZER_KINDS:
            raise ValueError(f"quantizer must be one of {QUANTIZER_KINDS}, got {self.quantizer!r}")
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")
        if self.hadamard and not is_power_of_two(self.block_size):
            raise ValueError(f"block_size must be a power of two with hadamard on, got {self.block_size}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if not self.lambda_fraction >= 0:
            raise ValueError("lambda_fraction must be >= 0")
        if self.loop_form not in LOOP_FORMS:
            raise ValueError(f"loop_form must be one of {LOOP_FORMS}")
        if self.update_rule not in UPDATE_RULES:
            raise ValueError(f"update_rule must be one of {UPDATE_RULES}")

    @property
    def rotation(self) -> tuple[int, int] | None:
        return (self.block_size, self.seed) if self.hadamard else None


@dataclass(frozen=True)
class HessianContext:
    """Upper Cholesky factor ``U`` with ``U.T @ U = (2 X^T X + lam I)^-1``.

    ``rotation`` records ``(block_size, seed)`` when the Hessian was built from
    Hadamard-rotated activations.
    """

    cholesky_upper: np.ndarray
    lam: float
    n_samples: int
    rotation: tuple[int, int] | None = None

    @property
    def dim(self) -> int:
        return self.cholesky_upper.shape[0]


def build_hessian(x, lambda_fraction: float = 0.01, *, rotation: tuple[int, int] | None = None,
                  max_retries: int = 3) -> HessianContext:
    """Factor the damped inverse Hessian of the layer-output error.

    ``x`` holds calibration inputs as rows (samples x input features). The
    damping is ``lambda_fraction * mean(diag(2 X^T X))`` and is escalated
    tenfold up to ``max_retries`` times if a factorization fails.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("calibration activations must be a 2-D array with at least one row")
    if not np.isfinite(x).all():
        raise ValueError("calibration activations contain non-finite values")
    if rotation is not None:
        block, seed = rotation
        if x.shape[1] % block:
            raise ValueError(f"block size {block} does not divide {x.shape[1]} input features")
        x = rotate_blocks(x, block_ops(block, x.shape[1] // block, seed))
    h = 2.0 * (x.T @ x)
    dim = h.shape[0]
    mean_diag = float(np.mean(np.diag(h)))
    lam = lambda_fraction * mean_diag
    floor = 1e-6 * mean_diag if mean_diag > 0 else 1e-6
    for attempt in range(max_retries + 1):
        try:
            lower = scipy.linalg.cholesky(h + lam * np.eye(dim), lower=True)
            h_inv = scipy.linalg.cho_solve((lower, True), np.eye(dim))
            upper = scipy.linalg.cholesky(h_inv, lower=False)
        except np.linalg.LinAlgError:
            if attempt == max_retries:
                break
            lam = max(lam, floor) * 10.0
            log.warning("Hessian factorization failed, raising damping to %g", lam)
            continue
        if np.all(np.isfinite(upper)) and np.all(np.diag(upper) > 0):
            return HessianContext(upper, lam, x.shape[0], rotation)
        if attempt == max_retries:
            break
        lam = max(lam, floor) * 10.0
    raise NumericError(f"Hessian factorization failed after {max_retries} damping escalations (lambda={lam:g})")


def sigma_delta(x, quantizer: str = "ternary", loop_form: str = "eq7") -> np.ndarray:
    """First-order Sigma-Delta modulation of each row of ``x`` (rows x steps).

    ``eq7``: ``i_n = i_{n-1} + x_n - y_{n-1}``, ``y_n = Q(i_n)``.
    ``alg1``: ``i_n = x_n - y_{n-1}`` (no accumulation; kept for comparison).
    Both start from ``i_0 = y_0 = 0``. ``Q`` is sign (binary, sign(0) = +1) or a
    ternary threshold at half the row's mean magnitude.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if loop_form not in LOOP_FORMS:
        raise ValueError(f"unknown loop form {loop_form!r}")
    rows, steps = x.shape
    if quantizer == "ternary":
        theta = TERNARY_THRESHOLD * np.mean(np.abs(x), axis=1)

        def quantize(v):
            return ternary_symbols(v, theta)
    elif quantizer == "binary":
        quantize = sign
    else:
        raise ValueError(f"unknown quantizer {quantizer!r}")

    y = np.empty((rows, steps), dtype=np.int8)
    integrator = np.zeros(rows)
    previous = np.zeros(rows)
    peak = 0.0
    for n in range(steps):
        if loop_form == "eq7":
            integrator = integrator + x[:, n] - previous
        else:
            integrator = x[:, n] - previous
        y[:, n] = quantize(integrator)
        previous = y[:, n].astype(np.float64)
        peak = max(peak, float(np.max(np.abs(integrator), initial=0.0)))
    if np.max(np.abs(x), initial=0.0) <= 1.0:
        assert peak <= 2.0 + 1e-9, f"integrator left its stable range: {peak}"
    return y


def _row_scales(up: np.ndarray) -> np.ndarray:
    """Max magnitude over the trailing axes, zeros mapped to 1, held at float32 precision."""
    s = np.max(np.abs(up.reshape(up.shape[0], -1)), axis=1)
    s = s.astype(np.float32).astype(np.float64)
    s[s == 0] = 1.0
    return s


def sd_quantize_block(w_block, osr: float, quantizer: str = "ternary", *, scales=None,
                      loop_form: str = "eq7") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sigma-Delta quantize one column block.

    Returns ``(symbols, scales, w_down)``: the ``rows x round(osr*B)`` codes,
    the per-row scales, and ``scales * downsample(symbols, B)``, the block's
    dense reconstruction. Scales default to each row's peak after upsampling;
    inputs beyond a caller-supplied scale are clipped to the unit range.
    """
    w_block = np.atleast_2d(np.asarray(w_block, dtype=np.float64))
    if not np.isfinite(w_block).all():
        raise ValueError("weight block contains non-finite values")
    width = w_block.shape[1]
    length = upsampled_length(width, osr)
    up = ResamplePlan(width, length)(w_block)
    if scales is None:
        scales = _row_scales(up)
    scales = np.asarray(scales, dtype=np.float64)
    x = up / scales[:, None]
    np.clip(x, -1.0, 1.0, out=x)
    symbols = sigma_delta(x, quantizer, loop_form)
    w_down = scales[:, None] * ResamplePlan(length, width)(symbols.astype(np.float64))
    return symbols, scales, w_down


def _resolve_hessian(calib, cfg: QuantizeConfig, cols: int) -> HessianContext | None:
    if not cfg.compensation:
        return None
    if calib is None:
        raise ValueError("compensation requires calibration activations or a HessianContext")
    if isinstance(calib, HessianContext):
        ctx = calib
    else:
        ctx = build_hessian(calib, cfg.lambda_fraction, rotation=cfg.rotation)
    if ctx.dim != cols:
        raise ValueError(f"Hessian dimension {ctx.dim} does not match {cols} weight columns")
    if ctx.rotation != cfg.rotation:
        raise ValueError(f"Hessian was built for rotation {ctx.rotation}, config uses {cfg.rotation}")
    return ctx


def _propagated_error(err: np.ndarray, upper: np.ndarray, lo: int, hi: int, rule: str) -> np.ndarray:
    if rule == "obs":
        # err @ inv(U_bb) via a triangular solve on the transpose
        err = scipy.linalg.solve_triangular(upper[lo:hi, lo:hi], err.T, trans="T").T
    return err @ upper[lo:hi, hi:]


def quantize_matrix(w, calib=None, cfg: QuantizeConfig | None = None) -> QuantizedWeight:
    """Quantize ``w`` (out_features x in_features) block by block.

    ``calib`` is either calibration activations (samples x in_features) or a
    prebuilt :class:`HessianContext`; it may be omitted when compensation is off.
    """
    cfg = cfg or QuantizeConfig()
    w = np.array(w, dtype=np.float64)
    if w.ndim != 2 or not np.isfinite(w).all():
        raise ValueError("weights must be a finite 2-D matrix")
    rows, cols = w.shape
    block = cfg.block_size
    if cols % block:
        raise ValueError(f"block_size {block} does not divide {cols} columns")
    n_blocks = cols // block
    ctx = _resolve_hessian(calib, cfg, cols)

    if cfg.hadamard:
        w = rotate_blocks(w, block_ops(block, n_blocks, cfg.seed))
    length = upsampled_length(block, cfg.osr)
    # one scale per row, fixed before compensation starts moving the weights
    scales = _row_scales(ResamplePlan(block, length)(w.reshape(rows, n_blocks, block)))

    symbols = np.empty((rows, n_blocks * length), dtype=np.int8)
    for k in range(n_blocks):
        lo, hi = k * block, (k + 1) * block
        y, _, w_down = sd_quantize_block(w[:, lo:hi], cfg.osr, cfg.quantizer, scales=scales,
                                         loop_form=cfg.loop_form)
        symbols[:, k * length:(k + 1) * length] = y
        if ctx is not None and hi < cols:
            w[:, hi:] -= _propagated_error(w[:, lo:hi] - w_down, ctx.cholesky_upper, lo, hi, cfg.update_rule)

    return QuantizedWeight.from_symbols(symbols, scales, cols_orig=cols, quantizer=cfg.quantizer,
                                        block_size=block, hadamard=cfg.hadamard, seed=cfg.seed)


def reconstruct(q: QuantizedWeight) -> np.ndarray:
    """Dense float surrogate of ``q`` in the original weight coordinates."""
    blocks = q.symbols.reshape(q.rows, q.n_blocks, q.block_width).astype(np.float64)
    blocks *= q.row_scales[:, None, None]
    dense = ResamplePlan(q.block_width, q.block_size)(blocks).reshape(q.rows, q.cols_orig)
    if q.hadamard:
        dense = rotate_blocks(dense, block_ops(q.block_size, q.n_blocks, q.seed), transpose=True)
    return dense
