import numpy as np
import pytest

from sdquant.analysis import (
    SWEEP_COLUMNS,
    band_energies,
    compression_ratio,
    error_report,
    osr_sweep,
    parseval_inner,
    spectrum_report,
    sweep_csv,
)
from sdquant.engine import QuantizeConfig, quantize_matrix, sd_quantize_block
from sdquant.tensor_io import QuantizedWeight


def test_compression_ratio_reported_values():
    assert round(compression_ratio("ternary", 1.5) * 100, 2) == 14.81
    assert round(compression_ratio("ternary", 2.0) * 100, 2) == 19.75
    assert compression_ratio("binary", 1.0, bits=16.0) == 1.0
    assert compression_ratio("binary", 2.0) == 0.125


def test_compression_ratio_with_scales():
    base = compression_ratio("ternary", 2.0)
    assert compression_ratio("ternary", 2.0, True, rows=64, cols=256) == pytest.approx(base + 32 / (16 * 256))
    with pytest.raises(ValueError):
        compression_ratio("ternary", 2.0, True)


def test_error_report_exact_reconstruction():
    # a sign matrix at OSR 1 without rotation is reproduced exactly
    symbols = np.array([[1, -1, 1, 1], [-1, -1, 1, -1]], dtype=np.int8)
    q = QuantizedWeight.from_symbols(symbols, [0.5, 2.0], cols_orig=4, quantizer="binary", block_size=4)
    w = q.row_scales[:, None] * symbols
    rep = error_report(w, q, np.ones((3, 4)))
    assert rep == {"frobenius_rel": 0.0, "max_abs": 0.0, "output_frobenius_rel": 0.0}


def test_error_report_shape_mismatch(rng):
    q = quantize_matrix(rng.standard_normal((2, 8)), None, QuantizeConfig(block_size=8, compensation=False))
    with pytest.raises(ValueError):
        error_report(np.zeros((3, 8)), q)


def test_osr4_beats_osr1(rng):
    errs = {1: [], 4: []}
    for seed in range(10):
        w = np.random.default_rng(seed).standard_normal((32, 128))
        for osr in errs:
            q = quantize_matrix(w, None, QuantizeConfig(osr=osr, compensation=False, seed=seed))
            rep = error_report(w, q)
            assert rep["frobenius_rel"] >= 0 and rep["max_abs"] >= 0
            errs[osr].append(rep["frobenius_rel"])
    assert np.mean(errs[4]) < np.mean(errs[1])


def test_spectrum_zero_error():
    w = np.array([1.0, -1.0, 1.0, -1.0])
    rep = spectrum_report(w, np.array([1, -1, 1, -1]), 1.0, 1.0, n_bands=4)
    assert np.allclose(rep.error_energy, 0)
    assert rep.in_band_fraction == 0.0


def test_spectrum_nyquist_tone_lands_in_top_band():
    n = 64
    err = (-1.0) ** np.arange(n)
    energy = band_energies(err, 8)
    assert energy[-1] == pytest.approx(n)
    assert np.allclose(energy[:-1], 0)


def test_band_energies_sum_to_total(rng):
    for n in (31, 64, 100):
        x = rng.standard_normal(n)
        assert band_energies(x, 32).sum() == pytest.approx(x @ x, rel=1e-9)


def test_in_band_fraction_ordering(rng):
    rows = rng.standard_normal((20, 256))
    means = []
    for osr in (1, 2, 4):
        y, s, _ = sd_quantize_block(rows, osr, "ternary")
        reps = [spectrum_report(rows[r], y[r], s[r], osr) for r in range(20)]
        assert all(0 <= r.in_band_fraction <= 1 and (r.error_energy >= 0).all() for r in reps)
        means.append(np.mean([r.in_band_fraction for r in reps]))
    assert means[0] > means[1] > means[2]


def test_parseval(rng):
    for _ in range(100):
        a, b = rng.standard_normal(50) + 1j * rng.standard_normal(50), rng.standard_normal(50)
        t, f = parseval_inner(a, b)
        assert abs(t - f) <= 1e-6 * np.linalg.norm(a) * np.linalg.norm(b)


def test_sweep_table(rng):
    w, x = rng.standard_normal((16, 64)), rng.standard_normal((128, 64))
    cfg = QuantizeConfig(block_size=32)
    single = osr_sweep(w, x, cfg, [2.0])
    assert len(single) == 1
    rows = osr_sweep(w, x, cfg, [1.0, 1.5, 2.0, 4.0])
    assert [r.eta for r in rows] == [compression_ratio("ternary", o) for o in (1.0, 1.5, 2.0, 4.0)]
    assert sweep_csv(rows).splitlines()[0] == "osr,eta,frob_rel,out_rel,in_band_frac"
    assert SWEEP_COLUMNS == ("osr", "eta", "frob_rel", "out_rel", "in_band_frac")
    with pytest.raises(ValueError, match="sorted"):
        osr_sweep(w, x, cfg, [2.0, 1.0])


def test_sweep_error_non_increasing():
    grid = [1.0, 2.0, 3.0, 4.0]
    table = np.zeros((10, len(grid)))
    for seed in range(10):
        g = np.random.default_rng(seed)
        w, x = g.standard_normal((16, 128)), g.standard_normal((256, 128))
        table[seed] = [r.frob_rel for r in osr_sweep(w, x, QuantizeConfig(seed=seed), grid)]
    assert np.all(np.diff(table.mean(axis=0)) <= 0)
