import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from stampq.core import ConfigurationError, DataError, DimensionError, NumericalError
from stampq.quantizer import (
    PER_TOKEN,
    QuantGranularity,
    dequantize,
    fake_quant,
    fit_spec,
    per_block,
    quant_error,
    quantize,
    sqnr_db,
    token_errors,
)


def literal_codes(x, bits):
    """Per-element min-max quantization written out with Python scalars."""
    out = []
    for row, b in zip(x.tolist(), bits):
        lo, hi = min(row), max(row)
        qmax = 2**b - 1
        if hi == lo:
            out.append([min(max(round(v), 0), qmax) for v in row])
            continue
        step = (hi - lo) / qmax
        z = round(-lo / step)  # Python round is ties-to-even
        out.append([min(max(round(v / step) + z, 0), qmax) for v in row])
    return np.array(out)


def test_grid_aligned_row():
    x = np.array([[0.0, 1.0, 2.0, 3.0]])
    spec = fit_spec(x, [2])
    assert spec.step[0, 0] == 1.0 and spec.offset[0, 0] == 0
    q = quantize(x, spec)
    assert q.codes.tolist() == [[0, 1, 2, 3]]
    assert np.array_equal(dequantize(q), x)
    assert quant_error(x, [2]) == 0.0


def test_constant_row_is_exact():
    x = np.full((1, 4), 5.0)
    spec = fit_spec(x, [4])
    assert spec.step[0, 0] == 1.0 and spec.offset[0, 0] == 0
    q = quantize(x, spec)
    assert len(set(q.codes[0].tolist())) == 1
    assert np.array_equal(dequantize(q), x)


def test_half_step_offset_tie():
    x = np.array([[-1.0, 1.0]])
    spec = fit_spec(x, [3])
    assert spec.step[0, 0] == pytest.approx(2 / 7, rel=1e-15)
    assert spec.offset[0, 0] == 4
    # Endpoints land within half a step; the max sits on a tie and clamps.
    y = fake_quant(x, [3])
    assert np.all(np.abs(y - x) <= spec.step[0, 0] / 2 + 1e-15)
    for v in np.linspace(-1, 1, 101):
        row = np.array([[-1.0, v, 1.0]])
        err = np.abs(dequantize(quantize(row, spec_for(row))) - row)
        assert np.all(err <= (2 / 7) / 2 + 1e-12)


def spec_for(row):
    return fit_spec(row, [3])


def test_value_below_fitted_min_clamps_to_zero():
    spec = fit_spec(np.array([[0.0, 1.0, 2.0, 3.0]]), [2])
    q = quantize(np.array([[-5.0, 0.0, 9.0, 3.0]]), spec)
    assert q.codes.tolist() == [[0, 0, 3, 3]]


def test_codes_match_literal_oracle(rng):
    x = rng.standard_normal((16, 24)) * rng.uniform(0.1, 10, size=(16, 1))
    bits = rng.integers(1, 9, size=16)
    got = quantize(x, fit_spec(x, bits)).codes
    assert np.array_equal(got, literal_codes(x, bits))


def test_requantize_is_idempotent(rng):
    x = rng.standard_normal((8, 32))
    spec = fit_spec(x, 4)
    q = quantize(x, spec)
    again = quantize(dequantize(q), spec)
    assert np.array_equal(again.codes, q.codes)


def test_codes_at_offset_dequantize_to_zero(rng):
    x = rng.standard_normal((4, 8))
    spec = fit_spec(x, 5)
    codes = np.broadcast_to(spec.offset, (4, 8)).copy()
    y = dequantize(type(quantize(x, spec))(codes=codes, spec=spec))
    assert np.array_equal(y, np.zeros((4, 8)))


def test_fake_quant_one_bit_trace():
    y = fake_quant(np.array([[0.0, 0.4, 1.0]]), [1])
    assert y.tolist() == [[0.0, 0.0, 1.0]]


def test_error_within_half_step(rng):
    x = rng.standard_normal((32, 64))
    spec = fit_spec(x, 8)
    err = np.abs(fake_quant(x, 8) - x)
    assert np.all(err <= spec.expand(spec.step) / 2 * (1 + 1e-9))


def test_token_error_bound(rng):
    x = rng.standard_normal((100, 48)) * 3
    for b in (2, 4, 8):
        spec = fit_spec(x, b)
        assert np.all(token_errors(x, b) <= 48 / 4 * spec.step[:, 0] ** 2 * (1 + 1e-12))


def test_quant_error_definition(rng):
    x = rng.standard_normal((6, 10))
    assert quant_error(x, 3) == pytest.approx(float(np.sum((fake_quant(x, 3) - x) ** 2)))


def test_monotone_in_bits(rng):
    for _ in range(20):
        x = rng.standard_normal((8, 64))
        errs = [quant_error(x, b) for b in range(2, 9)]
        assert all(a >= b for a, b in zip(errs, errs[1:]))


def test_per_block_wide_equals_per_token(rng):
    x = rng.standard_normal((8, 20))
    assert np.array_equal(fake_quant(x, 4, per_block(20)), fake_quant(x, 4))
    assert np.array_equal(fake_quant(x, 4, per_block(64)), fake_quant(x, 4))


def test_per_block_short_last_group(rng):
    x = rng.standard_normal((3, 10))
    g = per_block(4)
    assert g.n_groups(10) == 3
    spec = fit_spec(x, 3, g)
    assert spec.step.shape == (3, 3)
    # The last group covers columns 8 and 9 only.
    rng_last = x[:, 8:].max(axis=1) - x[:, 8:].min(axis=1)
    np.testing.assert_allclose(spec.step[:, 2], rng_last / 7)
    err = np.abs(fake_quant(x, 3, g) - x)
    assert np.all(err <= spec.expand(spec.step) / 2 * (1 + 1e-9))


def test_granularity_parse():
    assert QuantGranularity.parse("per-token") == PER_TOKEN
    assert QuantGranularity.parse("per-block:64").block_size == 64
    assert str(QuantGranularity.parse("per-block:8")) == "per-block:8"
    for bad in ("per-block:0", "per-row", "per-block:x"):
        with pytest.raises(ConfigurationError):
            QuantGranularity.parse(bad)


def test_mixed_bits_with_passthrough(rng):
    x = rng.standard_normal((4, 8))
    y = fake_quant(x, [np.inf, 2, np.inf, 8])
    assert np.array_equal(y[[0, 2]], x[[0, 2]])
    assert np.array_equal(y[1], fake_quant(x[1:2], 2)[0])


@pytest.mark.parametrize("bits", [0, 17, 2.5])
def test_bad_bits(bits):
    with pytest.raises(ConfigurationError):
        fit_spec(np.zeros((1, 4)) + np.arange(4), bits)


def test_bad_inputs():
    with pytest.raises(DataError):
        fit_spec(np.array([[1.0, np.inf]]), 4)
    with pytest.raises(DimensionError):
        fit_spec(np.zeros((2, 3)), [4, 4, 4])
    spec = fit_spec(np.arange(6.0).reshape(2, 3), 4)
    with pytest.raises(DimensionError):
        quantize(np.zeros((3, 3)), spec)


def test_sqnr():
    ref = np.arange(1.0, 7.0).reshape(2, 3)
    assert sqnr_db(ref, ref) == math.inf
    assert sqnr_db(ref, np.zeros_like(ref)) == pytest.approx(0.0, abs=1e-12)
    assert sqnr_db(ref, ref * 1.01) == pytest.approx(40.0, abs=1e-9)


def test_tiny_range_at_large_magnitude_is_rejected():
    with pytest.raises(NumericalError):
        fit_spec(np.array([[1e3, 1e3 + 1e-12]]), 16)
    with pytest.raises(NumericalError):
        fit_spec(np.array([[0.0, 5e-324]]), 4)


def well_scaled(x, b):
    """Groups are either constant or have a range not far below their magnitude."""
    lo, hi = x.min(axis=1), x.max(axis=1)
    mag = np.maximum(np.abs(lo), np.abs(hi))
    return bool(np.all((hi == lo) | ((hi - lo > mag * 2.0**-20) & (hi - lo > 1e-300))))


rows = arrays(
    np.float64,
    st.tuples(st.integers(1, 6), st.integers(2, 24)),
    elements=st.floats(-1e3, 1e3, allow_nan=False, width=64),
)


@settings(max_examples=200, deadline=None)
@given(rows, st.integers(1, 12))
def test_codes_in_range_and_error_bounded(x, b):
    assume(well_scaled(x, b))
    spec = fit_spec(x, b)
    q = quantize(x, spec)
    assert q.codes.min() >= 0 and np.all(q.codes <= spec.qmax[:, None])
    err = np.abs(dequantize(q) - x)
    assert np.all(err <= spec.expand(spec.step) / 2 * (1 + 1e-6))


@settings(max_examples=200, deadline=None)
@given(rows, st.integers(1, 12))
def test_no_clipping_away_from_ties(x, b):
    assume(well_scaled(x, b))
    spec = fit_spec(x, b)
    step = spec.expand(spec.step)
    raw = np.rint(x / step) + spec.expand(spec.offset)
    frac = np.abs((-x.min(axis=1, keepdims=True) / spec.step) % 1.0 - 0.5)
    clear = (frac > 1e-6) & ~spec.constant
    ok = (raw >= 0) & (raw <= spec.qmax[:, None])
    assert np.all(ok[np.broadcast_to(clear, x.shape)])


@settings(max_examples=200, deadline=None)
@given(rows, st.integers(1, 12))
def test_offset_in_code_range_when_range_spans_zero(x, b):
    assume(well_scaled(x, b))
    spec = fit_spec(x, b)
    spans = (x.min(axis=1) <= 0) & (x.max(axis=1) >= 0)
    z = spec.offset[spans, 0]
    assert np.all((z >= 0) & (z <= spec.qmax[spans]))
