import numpy as np
import pytest

from stampq import transforms as T
from stampq.core import ConfigurationError, DimensionError
from stampq.data import SynthSpec, generate, rng_for
from stampq.energy import no_quantization, two_level_allocation, uniform_allocation
from stampq.layer import (
    BIAS_MODES,
    LinearLayer,
    StampConfig,
    StampLinear,
    reference_linear,
    stamp_linear,
    transformed_bias,
)
from stampq.quantizer import quant_error, sqnr_db


def kinds(s, rng):
    q = np.linalg.qr(rng.standard_normal((s, s)))[0]
    return [T.identity(s), T.klt(q.T), T.dct(s), T.wht(s), T.dwt1d(s), T.dwt2d(4, s // 4, 2)]


def test_identity_everything_is_passthrough(rng):
    x = rng.standard_normal((8, 4))
    cfg = StampConfig(T.identity(8), T.FeatureTransform("identity", 4), no_quantization(8))
    assert np.array_equal(stamp_linear(x, LinearLayer(np.eye(4)), cfg), x)


@pytest.mark.parametrize("mode", BIAS_MODES)
@pytest.mark.parametrize("feat", ["identity", "hadamard"])
def test_exact_without_quantization(mode, feat, rng):
    s, d_in, d_out = 16, 8, 5
    for t in kinds(s, rng):
        layer = LinearLayer(rng.standard_normal((d_in, d_out)), rng.standard_normal(d_out))
        x = rng.standard_normal((s, d_in))
        cfg = StampConfig(t, T.FeatureTransform(feat, d_in), no_quantization(s), bias_mode=mode)
        ref = reference_linear(x, layer)
        out = stamp_linear(x, layer, cfg)
        assert np.linalg.norm(out - ref) <= 1e-10 * np.linalg.norm(ref), t.kind


def test_bias_modes_agree(rng):
    s = 16
    layer = LinearLayer(rng.standard_normal((4, 3)), rng.standard_normal(3))
    x = rng.standard_normal((s, 4))
    feat = T.FeatureTransform("identity", 4)
    for t in kinds(s, rng):
        a = stamp_linear(x, layer, StampConfig(t, feat, no_quantization(s), bias_mode=BIAS_MODES[0]))
        b = stamp_linear(x, layer, StampConfig(t, feat, no_quantization(s), bias_mode=BIAS_MODES[1]))
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_reference_linear(rng):
    x = rng.standard_normal((6, 4))
    assert np.array_equal(reference_linear(x, LinearLayer(np.eye(4), np.zeros(4))), x)
    beta = np.array([1.0, -2.0, 3.0])
    assert np.array_equal(reference_linear(np.zeros((1, 2)), LinearLayer(np.ones((2, 3)), beta))[0], beta)
    w, b = rng.standard_normal((4, 7)), rng.standard_normal(7)
    oracle = np.einsum("ik,kj->ij", x, w) + b[None, :]
    np.testing.assert_allclose(reference_linear(x, LinearLayer(w, b)), oracle, rtol=1e-12, atol=1e-12)


def test_transformed_bias():
    beta = np.array([1.0, 2.0])
    assert np.array_equal(transformed_bias(T.identity(3), beta), np.tile(beta, (3, 1)))
    tb = transformed_bias(T.wht(4), beta)
    np.testing.assert_allclose(tb, [[2, 4], [0, 0], [0, 0], [0, 0]], atol=1e-15)
    tb = transformed_bias(T.dwt1d(16, 4), beta)
    np.testing.assert_allclose(tb[0], 4 * beta, atol=1e-14)
    np.testing.assert_allclose(tb[1:], 0, atol=1e-14)


@pytest.mark.parametrize("feat", ["identity", "hadamard"])
def test_unit_weight_error_equals_activation_error(feat, rng):
    s, d = 32, 16
    x = rng.standard_normal((s, d)) * 3
    for t in kinds(s, rng):
        ft = T.FeatureTransform(feat, d)
        alloc = two_level_allocation(s, 4, 8, 3)
        out = stamp_linear(x, LinearLayer(np.eye(d)), StampConfig(t, ft, alloc))
        act_err = quant_error(T.apply_feat(ft, T.apply_seq(t, x)), alloc.bits)
        assert np.sum((out - x) ** 2) == pytest.approx(act_err, rel=1e-10)


def test_quantized_input_is_what_matmul_sees(rng):
    s, d = 16, 8
    layer = LinearLayer(rng.standard_normal((d, 3)))
    t = T.dct(s)
    ft = T.FeatureTransform("hadamard", d)
    model = StampLinear(layer, StampConfig(t, ft, uniform_allocation(s, 4)))
    x = rng.standard_normal((s, d))
    expect = T.invert_seq(t, model.quantized_input(x) @ ft.fuse_into_weight(layer.weight))
    np.testing.assert_allclose(model(x), expect, atol=1e-12)


def test_high_precision_placement_matters():
    s, d = 256, 32
    xs = [x.data for x in generate(SynthSpec("ar1", s=s, d=d, seed=5, rho=0.95), 8)]
    t = T.dwt1d(s)
    aligned = two_level_allocation(s, 64, 8, 4).bits
    yt = [T.apply_seq(t, x) for x in xs]

    def err(bits):
        return sum(quant_error(y, bits) for y in yt)

    base = err(aligned)
    rng = rng_for(6)
    for _ in range(50):
        assert err(rng.permutation(aligned)) >= base


def test_grid_stamp_beats_uniform_four_bits():
    spec = SynthSpec("grid2d", s=256, d=64, seed=9, rho_h=0.95, rho_w=0.95, height=16, width=16)
    rng = rng_for(9, 2**64 - 1)
    layer = LinearLayer(rng.standard_normal((64, 64)) / 8)
    none = T.FeatureTransform("identity", 64)
    stamp = StampLinear(layer, StampConfig(T.dwt2d(16, 16, 3), none, two_level_allocation(256, 64, 8, 4)))
    base = StampLinear(layer, StampConfig(T.identity(256), none, uniform_allocation(256, 4)))
    xs = [x.data for x in generate(spec, 4)]
    ref = np.concatenate([reference_linear(x, layer) for x in xs])
    q_stamp = sqnr_db(ref, np.concatenate([stamp(x) for x in xs]))
    q_base = sqnr_db(ref, np.concatenate([base(x) for x in xs]))
    assert q_stamp > q_base


def test_config_errors(rng):
    with pytest.raises(ConfigurationError):
        StampConfig(T.identity(8), T.FeatureTransform("identity", 4), no_quantization(4))
    with pytest.raises(ConfigurationError):
        StampConfig(T.identity(4), T.FeatureTransform("identity", 4), no_quantization(4), bias_mode="x")
    cfg = StampConfig(T.identity(4), T.FeatureTransform("identity", 8), no_quantization(4))
    with pytest.raises(ConfigurationError):
        StampLinear(LinearLayer(np.eye(4)), cfg)
    cfg = StampConfig(T.identity(4), T.FeatureTransform("identity", 4), no_quantization(4))
    with pytest.raises(DimensionError):
        StampLinear(LinearLayer(np.eye(4)), cfg)(np.zeros((5, 4)))
    with pytest.raises(DimensionError):
        LinearLayer(np.eye(3), np.zeros(2))
