import numpy as np
import pytest
from scipy.special import softmax as sp_softmax

from mbespike.arith import IdentityEncoder
from mbespike.errors import InvalidArgument, NotFittedError
from mbespike.fitting import FitConfig, TargetFn, fit_mbe
from mbespike.ops import (
    LayerNormEncoders,
    SoftmaxEncoders,
    SpikingOpSet,
    frexp_decompose,
    spiking_activation,
    spiking_exp,
    spiking_inv_sqrt,
    spiking_layernorm,
    spiking_reciprocal,
    spiking_softmax,
)
from mbespike.stats import SaturationCounter, SpikeContext

SMALL = FitConfig(M=2000, epochs=30, pool_size=64, search_budget=300, exchange_rounds=1, search_M=None)


def _max_err(op, n=20001):
    a, b = op.target.interval
    x = np.linspace(a, b, n)
    return float(np.max(np.abs(op(x) - op.target(x))))


def _ln_ref(x, gamma=1.0, beta=0.0, eps=1e-5):
    c = x - x.mean(axis=-1, keepdims=True)
    return c / np.sqrt(np.mean(c * c, axis=-1, keepdims=True) + eps) * gamma + beta


@pytest.fixture(scope="module")
def tanh_fit():
    return fit_mbe(TargetFn("tanh", (-4, 4)), 4, 16, FitConfig())


@pytest.fixture(scope="module")
def gelu_fit():
    return fit_mbe(TargetFn("gelu", (-6, 6)), 4, 16, SMALL)


@pytest.fixture
def ln_enc():
    return LayerNormEncoders(IdentityEncoder(-6, 6, 16), IdentityEncoder(0, 4, 16))


class TestFrexp:
    @pytest.mark.parametrize("x,M,E", [(1.0, 0.5, 1), (0.75, 0.75, 0), (6.0, 0.75, 3)])
    def test_examples(self, x, M, E):
        p = frexp_decompose(x)
        assert p.M == M and p.E == E

    def test_round_trip(self, rng):
        x = np.exp(rng.uniform(-300, 300, 5000))
        p = frexp_decompose(x)
        assert np.all((p.M >= 0.5) & (p.M < 1))
        np.testing.assert_array_equal(np.ldexp(p.M, p.E), x)

    @pytest.mark.parametrize("x", [0.0, -1.0, np.inf, np.nan])
    def test_invalid(self, x):
        with pytest.raises(InvalidArgument):
            frexp_decompose(x)


class TestExpReciprocal:
    def test_exp_zero(self, opset):
        assert spiking_exp(0.0, opset.exp2frac) == opset.exp2frac(np.array(0.0))
        assert abs(spiking_exp(0.0, opset.exp2frac) - 1) <= _max_err(opset.exp2frac)

    def test_exp_ln2(self, opset):
        assert abs(spiking_exp(np.log(2), opset.exp2frac) - 2) <= 2 * _max_err(opset.exp2frac) + 1e-12

    def test_exp_one(self, opset):
        assert abs(spiking_exp(1.0, opset.exp2frac) - np.e) <= 2 * _max_err(opset.exp2frac)

    def test_exp_relative_error(self, opset, rng):
        x = rng.uniform(-20, 5, 5000)
        rel = np.abs(spiking_exp(x, opset.exp2frac) / np.exp(x) - 1)
        assert rel.max() <= _max_err(opset.exp2frac)

    def test_reciprocal_examples(self, opset):
        e = _max_err(opset.inv)
        out = spiking_reciprocal(np.array([1.0, 4.0, 3.0]), opset.inv)
        assert abs(out[0] - 1) <= e / 2
        assert abs(out[1] - 0.25) <= e / 8
        assert abs(out[2] - 1 / 3) <= e / 4

    def test_reciprocal_powers_of_two(self, opset):
        k = np.arange(-30, 31)
        got = spiking_reciprocal(np.ldexp(1.0, k), opset.inv)
        np.testing.assert_array_equal(got, np.ldexp(opset.inv(np.array(0.5)), -(k + 1)))

    def test_inv_sqrt_examples(self, opset):
        e = _max_err(opset.invsqrt)
        out = spiking_inv_sqrt(np.array([1.0, 4.0, 2.0]), opset.invsqrt)
        assert abs(out[0] - 1) <= e
        assert abs(out[1] - 0.5) <= e / 2
        # odd exponent folds into the mantissa: 2 = 0.5 * 2**2
        assert out[2] == opset.invsqrt(np.array(0.5)) / 2
        assert abs(out[2] - 2**-0.5) <= e / 2

    def test_inv_sqrt_powers_of_four(self, opset):
        k = np.arange(-20, 21)
        got = spiking_inv_sqrt(np.ldexp(1.0, 2 * k), opset.invsqrt)
        np.testing.assert_array_equal(got, np.ldexp(opset.invsqrt(np.array(1.0)), -k))

    def test_inv_sqrt_relative_error(self, opset, rng):
        x = np.exp(rng.uniform(-10, 10, 5000))
        rel = np.abs(spiking_inv_sqrt(x, opset.invsqrt) * np.sqrt(x) - 1)
        assert rel.max() <= 2 * _max_err(opset.invsqrt)


class TestActivation:
    def test_gelu_zero(self, gelu_fit):
        assert abs(spiking_activation(gelu_fit, 0.0)) <= _max_err(gelu_fit)

    def test_gelu_vector(self, gelu_fit, rng):
        x = rng.uniform(-6, 6, 20000)
        mse = np.mean((spiking_activation(gelu_fit, x) - gelu_fit.target(x)) ** 2)
        assert mse <= 2 * gelu_fit.mse

    def test_tanh_clipped(self, tanh_fit):
        sat = SaturationCounter()
        y = spiking_activation(tanh_fit, np.array([50.0, 1e6]), SpikeContext("act", sat))
        np.testing.assert_allclose(y, 1.0, atol=0.05)
        assert sat.snapshot() == {"act": 2}

    def test_missing(self):
        with pytest.raises(NotFittedError):
            spiking_activation(None, np.zeros(3))

    def test_missing_in_opset(self):
        with pytest.raises(NotFittedError):
            spiking_softmax(np.zeros(3), SpikingOpSet(), SoftmaxEncoders.default(16))


class TestSoftmax:
    def test_single(self, opset):
        np.testing.assert_allclose(spiking_softmax(np.array([3.0]), opset, SoftmaxEncoders.default(16)), [1.0], atol=0.01)

    def test_uniform(self, opset):
        np.testing.assert_allclose(spiking_softmax(np.full(4, 0.7), opset, SoftmaxEncoders.default(16)), 0.25,
                                   atol=0.01)

    def test_one_two_three(self, opset):
        out = spiking_softmax(np.array([1.0, 2.0, 3.0]), opset, SoftmaxEncoders.default(16))
        np.testing.assert_allclose(out, [0.0900, 0.2447, 0.6652], atol=0.01)

    def test_axis_and_trace(self, opset, rng):
        x = rng.uniform(-3, 3, (5, 6))
        trace = {}
        out = spiking_softmax(x, opset, SoftmaxEncoders.default(16), axis=0, trace=trace)
        np.testing.assert_allclose(out, sp_softmax(x, axis=0), atol=0.01)
        assert trace["sum"].shape == (1, 6)

    def test_empty(self, opset):
        with pytest.raises(InvalidArgument):
            spiking_softmax(np.zeros(0), opset, SoftmaxEncoders.default(16))


class TestLayerNorm:
    def test_constant_gives_beta(self, opset, ln_enc):
        beta = np.linspace(-1, 1, 5)
        out = spiking_layernorm(np.full(5, 2.5), opset, ln_enc, gamma=np.ones(5), beta=beta)
        np.testing.assert_allclose(out, beta, atol=1e-12)

    def test_plus_minus_one(self, opset, ln_enc):
        out = spiking_layernorm(np.array([1.0, -1.0]), opset, ln_enc, eps=1e-12)
        np.testing.assert_allclose(out, [1.0, -1.0], atol=0.02)

    def test_random_rows(self, opset, ln_enc, rng):
        x = rng.standard_normal((200, 16))
        out = spiking_layernorm(x, opset, ln_enc)
        ref = _ln_ref(x)
        rel = np.max(np.abs(out - ref), axis=-1) / np.max(np.abs(ref), axis=-1)
        assert rel.max() <= 0.02

    def test_affine(self, opset, ln_enc, rng):
        x = rng.standard_normal((10, 16))
        g, b = rng.uniform(0.5, 1.5, 16), rng.standard_normal(16)
        plain = spiking_layernorm(x, opset, ln_enc)
        np.testing.assert_allclose(spiking_layernorm(x, opset, ln_enc, g, b), plain * g + b, rtol=1e-15, atol=1e-15)

    def test_translation_covariance(self, opset, ln_enc, rng):
        x = rng.standard_normal((100, 16))
        sat = SaturationCounter()
        a = spiking_layernorm(x, opset, ln_enc, ctx=SpikeContext("ln", sat))
        b = spiking_layernorm(x + 0.5, opset, ln_enc, ctx=SpikeContext("ln", sat))
        assert sat.snapshot() == {}
        # only the rounding of the exact mean subtraction differs
        np.testing.assert_allclose(a, b, atol=2 * ln_enc.centered.step * 4)
