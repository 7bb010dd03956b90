from collections import Counter

import numpy as np
import pytest

from mbespike.errors import ConversionError, InvalidArgument
from mbespike.metrics import firing_rate
from mbespike.transformer import (
    CalibrationProfile,
    RefTransformerConfig,
    audit_sites,
    build_reference,
    calibrate,
    compare,
    convert,
    forward_float,
    forward_spiking,
)


class TestReference:
    def test_zero_layers_identity(self, rng):
        model = build_reference(RefTransformerConfig(n_layers=0))
        x = rng.standard_normal((8, 32))
        np.testing.assert_array_equal(forward_float(model, x), x)

    def test_weights_deterministic(self):
        a = build_reference(RefTransformerConfig(seed=3))
        b = build_reference(RefTransformerConfig(seed=3))
        assert a.weights.keys() == b.weights.keys()
        for k in a.weights:
            np.testing.assert_array_equal(a.weights[k], b.weights[k])
        c = build_reference(RefTransformerConfig(seed=4))
        assert not np.array_equal(a.weights["L0.attn.wq"], c.weights["L0.attn.wq"])

    def test_desk_forward_finite(self, rng):
        model = build_reference(RefTransformerConfig())
        out = forward_float(model, rng.standard_normal((4, 8, 32)))
        assert out.shape == (4, 8, 32) and np.all(np.isfinite(out))

    @pytest.mark.parametrize("kw", [{"d_model": 30, "n_heads": 4}, {"n_layers": -1}, {"activation": "relu"},
                                    {"d_ff": 0}])
    def test_invalid_config(self, kw):
        with pytest.raises(InvalidArgument):
            RefTransformerConfig(**kw)

    def test_bad_input_shape(self):
        with pytest.raises(InvalidArgument):
            forward_float(build_reference(RefTransformerConfig()), np.zeros((8, 16)))

    def test_weights_read_only(self):
        model = build_reference(RefTransformerConfig(n_layers=1))
        with pytest.raises(ValueError):
            model.weights["L0.attn.wq"][0, 0] = 1.0


class TestCalibrate:
    def test_constant_batch(self):
        model = build_reference(RefTransformerConfig(n_layers=1))
        prof = calibrate(model, [np.full((2, 8, 32), 0.7)])
        st = prof.role("L0.ln1", "input")
        assert st.min == st.max == 0.7
        assert sum(st.counts) == st.count == 2 * 8 * 32

    def test_union_of_batches(self, rng):
        model = build_reference(RefTransformerConfig(n_layers=1))
        b1, b2 = rng.standard_normal((3, 8, 32)), 2 * rng.standard_normal((3, 8, 32))
        p1, p2, both = calibrate(model, [b1]), calibrate(model, [b2]), calibrate(model, [b1, b2])
        for site, rec in both.sites.items():
            for role, st in rec["roles"].items():
                assert st.min == min(p1.role(site, role).min, p2.role(site, role).min)
                assert st.max == max(p1.role(site, role).max, p2.role(site, role).max)
                assert sum(st.counts) == st.count

    def test_gelu_ranges_in_domain(self, rng):
        model = build_reference(RefTransformerConfig())
        prof = calibrate(model, [rng.standard_normal((16, 8, 32)) for _ in range(4)])
        for site in ("L0.act", "L1.act"):
            st = prof.role(site, "input")
            assert -120 < st.min <= st.max < 10

    def test_empty(self):
        with pytest.raises(InvalidArgument):
            calibrate(build_reference(RefTransformerConfig()), [])

    def test_missing_role(self):
        with pytest.raises(ConversionError, match="L3.qk"):
            CalibrationProfile({}).role("L3.qk", "a")


class TestConvert:
    def test_zero_layers_noop(self, rng):
        model = build_reference(RefTransformerConfig(n_layers=0))
        snn = convert(model, calibrate(model, [rng.standard_normal((8, 32))]))
        assert snn.sites == {}
        out, stats = forward_spiking(snn, np.zeros((8, 32)))
        np.testing.assert_array_equal(out, 0.0)
        assert stats.recorder.stats == {}

    def test_one_layer_census(self, fit_cache, rng):
        model = build_reference(RefTransformerConfig(n_layers=1))
        prof = calibrate(model, [rng.standard_normal((4, 8, 32))])
        snn = convert(model, prof, fit_cache)
        census = Counter(conv.kind for conv in snn.sites.values())
        assert census == {"layernorm": 2, "softmax": 1, "matmul": 2, "activation": 1}
        assert audit_sites(snn) == []

    def test_uncovered_site(self, rng):
        model = build_reference(RefTransformerConfig(n_layers=1))
        prof = calibrate(model, [rng.standard_normal((4, 8, 32))])
        del prof.sites["L0.softmax"]
        with pytest.raises(ConversionError, match="L0.softmax") as info:
            convert(model, prof)
        assert info.value.site == "L0.softmax"

    def test_profile_required(self):
        with pytest.raises(InvalidArgument):
            convert(build_reference(RefTransformerConfig()), None)

    def test_configuration(self, desk):
        _, _, snn = desk
        assert (snn.T, snn.N_act, snn.N_other) == (16, 4, 8)
        assert snn.sites["L0.act"].approximator.neuron.n_basis == 4
        assert snn.ops.inv.neuron.n_basis == 8 and snn.ops.inv.neuron.T == 16

    def test_weights_untouched(self, desk):
        _, model, snn = desk
        fresh = build_reference(RefTransformerConfig(seed=0))
        assert snn.reference is model
        for k, w in fresh.weights.items():
            assert snn.reference.weights[k].tobytes() == w.tobytes()


class TestSpikingForward:
    def test_desk_fidelity(self, desk):
        fid, _, _ = desk
        assert fid.cosine >= 0.99 and fid.mse <= 1e-3

    def test_repeatable(self, desk, rng):
        _, _, snn = desk
        x = rng.standard_normal((2, 8, 32))
        a, sa = forward_spiking(snn, x)
        b, sb = forward_spiking(snn, x)
        assert a.tobytes() == b.tobytes()
        assert {k: v.to_dict() for k, v in sa.recorder.stats.items()} == \
               {k: v.to_dict() for k, v in sb.recorder.stats.items()}

    def test_gelu_firing_rate(self, desk, rng):
        _, _, snn = desk
        _, stats = forward_spiking(snn, rng.standard_normal((32, 8, 32)))
        rates = firing_rate(stats.recorder.stats)
        for site in ("L0.act", "L1.act"):
            assert abs(rates[(site, "gelu")] - 0.3822) <= 0.15
        assert all(0 <= r <= 1 for r in rates.values())

    def test_layers_returned(self, desk, rng):
        _, model, snn = desk
        (out, layers), _ = forward_spiking(snn, rng.standard_normal((8, 32)), return_layers=True)
        assert len(layers) == 2 and layers[-1] is out


class TestCompare:
    def test_identical(self, rng):
        x = rng.standard_normal((3, 4))
        f = compare(x, x)
        assert f.mse == 0 and f.linf == 0 and f.cosine == 1

    def test_orthogonal(self):
        assert compare([1.0, 0.0], [0.0, 2.0]).cosine == 0

    def test_values(self):
        f = compare([1.0, 2.0], [1.0, 4.0])
        assert f.mse == 2.0 and f.linf == 2.0
        assert f.cosine == pytest.approx(9 / np.sqrt(5 * 17), rel=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgument):
            compare(np.zeros(3), np.zeros(4))
