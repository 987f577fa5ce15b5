"""Randomized Hadamard rotations for per-block weight smoothing.

The operator is ``H @ D`` where ``H`` is the Sylvester Hadamard matrix and
``D`` a seeded random +-1 diagonal; with ``normalized`` it is divided by
``sqrt(size)`` and is orthogonal. Application uses an in-place style
butterfly (fast Walsh-Hadamard transform), ``O(size log size)`` per row.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def is_power_of_two(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def sylvester(size: int) -> np.ndarray:
    """Dense unnormalized Sylvester Hadamard matrix."""
    if not is_power_of_two(size):
        raise ValueError(f"Hadamard size must be a power of two, got {size}")
    h = np.ones((1, 1))
    while h.shape[0] < size:
        h = np.block([[h, h], [h, -h]])
    return h


def fwht(x: np.ndarray) -> np.ndarray:
    """Unnormalized Walsh-Hadamard transform along the last axis (Sylvester order)."""
    x = np.array(x, dtype=np.float64)
    n = x.shape[-1]
    if not is_power_of_two(n):
        raise ValueError(f"transform length must be a power of two, got {n}")
    lead = x.shape[:-1]
    h = 1
    while h < n:
        v = x.reshape(lead + (n // (2 * h), 2, h))
        a = v[..., 0, :].copy()
        b = v[..., 1, :]
        v[..., 0, :] += b
        v[..., 1, :] = a - b
        h *= 2
    return x


def block_seed(seed: int, block_index: int) -> int:
    """Seed of the rotation used for block ``block_index`` of a matrix seeded with ``seed``."""
    ss = np.random.SeedSequence(seed, spawn_key=(block_index,))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class HadamardOp:
    size: int
    seed: int | None = 0
    normalized: bool = True
    signs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not is_power_of_two(self.size):
            raise ValueError(f"Hadamard size must be a power of two, got {self.size}")
        if self.seed is None:
            signs = np.ones(self.size)
        else:
            rng = np.random.default_rng(self.seed)
            signs = np.where(rng.integers(0, 2, size=self.size) == 1, 1.0, -1.0)
        signs.flags.writeable = False
        object.__setattr__(self, "signs", signs)

    @property
    def norm(self) -> float:
        return 1.0 / np.sqrt(self.size) if self.normalized else 1.0

    def matrix(self) -> np.ndarray:
        """Dense ``H @ D`` (normalized if requested)."""
        return sylvester(self.size) * self.signs[None, :] * self.norm

    def _check(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        if w.shape[-1] != self.size:
            raise ValueError(f"block width {w.shape[-1]} does not match Hadamard size {self.size}")
        return w

    def apply_right(self, w) -> np.ndarray:
        """``w @ (H D)``."""
        w = self._check(w)
        # H is symmetric, so each row maps to H @ row
        return fwht(w) * self.signs * self.norm

    def apply_right_transpose(self, w) -> np.ndarray:
        """``w @ (H D).T``."""
        w = self._check(w)
        return fwht(w * self.signs) * self.norm


def build(size: int, seed: int | None = 0, *, normalized: bool = True) -> HadamardOp:
    """Randomized Hadamard operator; ``seed=None`` gives the identity sign diagonal."""
    return HadamardOp(size, seed, normalized)


def block_ops(block_size: int, n_blocks: int, seed: int) -> list[HadamardOp]:
    """The rotation schedule shared by weights and calibration activations."""
    return [HadamardOp(block_size, block_seed(seed, k)) for k in range(n_blocks)]


def rotate_blocks(w: np.ndarray, ops: list[HadamardOp], *, transpose: bool = False) -> np.ndarray:
    """Apply one operator per contiguous column block of ``w``."""
    w = np.asarray(w, dtype=np.float64)
    size = ops[0].size
    if w.shape[-1] != size * len(ops):
        raise ValueError(f"matrix width {w.shape[-1]} != {len(ops)} blocks of {size}")
    out = np.empty_like(w)
    for k, op in enumerate(ops):
        cols = slice(k * size, (k + 1) * size)
        out[..., cols] = op.apply_right_transpose(w[..., cols]) if transpose else op.apply_right(w[..., cols])
    return out
