"""Forward pass through a Sigma-Delta quantized linear layer.

Activations are rotated per block (when the weight was rotated), upsampled
to the code width, and accumulated against the codes with additions and
subtractions only. Because downsampling is the scaled adjoint of activation
upsampling, ``<up(a), y> / osr == <a, down(y)>`` and the result equals the
dense product with :func:`sdquant.engine.reconstruct`.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .engine import reconstruct
from .hadamard import block_ops, rotate_blocks
from .resampler import upsample_adjoint
from .tensor_io import QuantizedWeight


def gated_accumulate(values, codes, trace: list[str] | None = None) -> float:
    """Sum ``values[k]`` gated by ``codes[k]``: add on +1, subtract on -1, skip on 0.

    Codes are only compared, never multiplied. ``trace`` (if given) receives
    one of ``"add"``, ``"sub"``, ``"skip"`` per element.
    """
    total = 0.0
    for v, c in zip(values, codes):
        if c == 1:
            total += v
            op = "add"
        elif c == -1:
            total -= v
            op = "sub"
        else:
            op = "skip"
        if trace is not None:
            trace.append(op)
    return total


@dataclass(frozen=True)
class GateIndex:
    """Column indices of the +1 and -1 codes of every weight row."""

    plus: tuple[np.ndarray, ...]
    minus: tuple[np.ndarray, ...]

    @classmethod
    def from_symbols(cls, symbols: np.ndarray) -> "GateIndex":
        return cls(tuple(np.flatnonzero(r == 1) for r in symbols),
                   tuple(np.flatnonzero(r == -1) for r in symbols))


def _gate_index(q: QuantizedWeight) -> GateIndex:
    gates = q.__dict__.get("_gates")
    if gates is None:
        gates = GateIndex.from_symbols(q.symbols)
        object.__setattr__(q, "_gates", gates)
    return gates


def upsample_activations(q: QuantizedWeight, a: np.ndarray) -> np.ndarray:
    """Rotate (if needed) and upsample activation rows to the code layout of ``q``."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != q.cols_orig:
        raise ValueError(f"activations must be (n, {q.cols_orig}), got {a.shape}")
    if q.hadamard:
        a = rotate_blocks(a, block_ops(q.block_size, q.n_blocks, q.seed))
    blocks = a.reshape(a.shape[0], q.n_blocks, q.block_size)
    return upsample_adjoint(blocks, q.block_width).reshape(a.shape[0], q.cols_up)


def forward(q: QuantizedWeight, a, *, threads: int | None = None) -> np.ndarray:
    """``a @ W_hat.T`` computed add-only on the packed codes of ``q``.

    ``O[i, r] = row_scales[r] / osr * sum_k a_up[i, k] * code[r, k]`` where the
    inner sum is gathered from the +1 columns minus the -1 columns.
    """
    a_up = upsample_activations(q, a)
    gates = _gate_index(q)
    out = np.empty((a_up.shape[0], q.rows))

    def run(rows: range) -> None:
        for r in rows:
            out[:, r] = a_up[:, gates.plus[r]].sum(axis=1) - a_up[:, gates.minus[r]].sum(axis=1)

    if threads and threads > 1 and q.rows > 1:
        chunks = [range(i, q.rows, threads) for i in range(threads)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, chunks))
    else:
        run(range(q.rows))
    return out * (q.row_scales / q.osr)[None, :]


def forward_reference(q: QuantizedWeight, a) -> np.ndarray:
    """Dense oracle: ``a @ reconstruct(q).T``."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != q.cols_orig:
        raise ValueError(f"activations must be (n, {q.cols_orig}), got {a.shape}")
    return a @ reconstruct(q).T
