import numpy as np
import pytest

from sdquant.engine import QuantizeConfig, quantize_matrix
from sdquant.inference import forward, forward_reference, gated_accumulate
from sdquant.tensor_io import QuantizedWeight


def _max_rel(a, b):
    return np.max(np.abs(a - b)) / np.max(np.abs(b))


def test_all_plus_row_picks_activation_entry():
    q = QuantizedWeight.from_symbols(np.ones((1, 8), np.int8), [2.5], cols_orig=8, quantizer="binary",
                                     block_size=8)
    a = np.eye(8)
    np.testing.assert_allclose(forward(q, a)[:, 0], 2.5 * np.ones(8), atol=1e-12)
    np.testing.assert_allclose(forward_reference(q, a)[:, 0], 2.5 * np.ones(8), atol=1e-12)


@pytest.mark.parametrize("osr, tol", [(1, 1e-6), (2, 1e-6), (3, 1e-6), (2.5, 1e-4), (1.25, 1e-4)])
@pytest.mark.parametrize("hadamard", [True, False])
def test_forward_matches_reference(rng, osr, tol, hadamard):
    w, x = rng.standard_normal((24, 128)), rng.standard_normal((64, 128))
    q = quantize_matrix(w, x, QuantizeConfig(osr=osr, block_size=32, hadamard=hadamard))
    a = rng.standard_normal((7, 128))
    assert _max_rel(forward(q, a), forward_reference(q, a)) <= tol


def test_zero_activations(rng):
    w = rng.standard_normal((4, 32))
    q = quantize_matrix(w, None, QuantizeConfig(block_size=16, compensation=False))
    assert not forward(q, np.zeros((3, 32))).any()


def test_linearity(rng):
    w = rng.standard_normal((6, 64))
    q = quantize_matrix(w, None, QuantizeConfig(osr=1.5, block_size=32, compensation=False))
    a, b = rng.standard_normal((2, 64)), rng.standard_normal((2, 64))
    np.testing.assert_allclose(forward(q, 2 * a - 3 * b), 2 * forward(q, a) - 3 * forward(q, b), atol=1e-10)


def test_threads_do_not_change_result(rng):
    w = rng.standard_normal((9, 64))
    q = quantize_matrix(w, None, QuantizeConfig(block_size=64, compensation=False))
    a = rng.standard_normal((4, 64))
    np.testing.assert_array_equal(forward(q, a, threads=3), forward(q, a))


def test_dimension_mismatch(rng):
    q = quantize_matrix(rng.standard_normal((2, 16)), None, QuantizeConfig(block_size=16, compensation=False))
    with pytest.raises(ValueError):
        forward(q, np.zeros((1, 8)))
    with pytest.raises(ValueError):
        forward_reference(q, np.zeros((1, 8)))


class NoMultiply(int):
    """A code value that fails loudly if anything multiplies by it."""

    def __mul__(self, other):
        raise AssertionError("code was used as a multiplicand")

    __rmul__ = __mul__


def test_kernel_is_add_only():
    values = [0.5, 1.5, -2.0, 4.0, 8.0, 0.25]
    codes = [NoMultiply(c) for c in (1, -1, 0, 1, 0, -1)]
    trace = []
    total = gated_accumulate(values, codes, trace)
    assert total == 0.5 - 1.5 + 4.0 - 0.25
    assert trace == ["add", "sub", "skip", "add", "skip", "sub"]
    assert (trace.count("add"), trace.count("sub"), trace.count("skip")) == (2, 2, 2)


def test_vectorized_kernel_matches_traced_kernel(rng):
    w = rng.standard_normal((3, 16))
    q = quantize_matrix(w, None, QuantizeConfig(osr=2, block_size=16, hadamard=False, compensation=False))
    from sdquant.inference import upsample_activations

    a = rng.standard_normal((2, 16))
    up = upsample_activations(q, a)
    manual = np.array([[gated_accumulate(up[i], q.symbols[r].tolist()) for r in range(3)] for i in range(2)])
    np.testing.assert_allclose(forward(q, a), manual * q.row_scales / q.osr, rtol=1e-12)
