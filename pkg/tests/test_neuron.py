import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbespike.errors import InvalidArgument
from mbespike.neuron import (
    FreeScheduleNeuron,
    FSParams,
    MBEBasis,
    MBENeuron,
    binary_fs_params,
    decay_schedule,
    forward,
    fs_as_mbe,
    fs_simulate,
    mbe_simulate,
    readout,
    simulate_spikes,
)


def _fs(d):
    d = np.asarray(d, dtype=float)
    return FSParams(d, d, d)


class TestDecaySchedule:
    def test_unit_tau(self):
        np.testing.assert_allclose(decay_schedule(1, 1, 1, 2), [1.0, math.exp(-1)], rtol=0, atol=1e-15)

    def test_zero_alpha(self):
        np.testing.assert_array_equal(decay_schedule(0, 3, 0.5, 4), np.zeros(4))

    def test_derived_values(self):
        np.testing.assert_allclose(decay_schedule(2, 2, 1, 3), [2.0, 1.2130613194252668, 0.7357588823428847], rtol=1e-15)

    def test_first_element_exact(self):
        assert decay_schedule(3.7, 0.3, 2.0, 5)[0] == 3.7

    @pytest.mark.parametrize("tau,dt,T", [(0, 1, 3), (-1, 1, 3), (1, 0, 3), (1, -2, 3), (1, 1, 0)])
    def test_invalid(self, tau, dt, T):
        with pytest.raises(InvalidArgument):
            decay_schedule(1.0, tau, dt, T)

    @given(st.floats(0.01, 100), st.floats(0.05, 50), st.floats(0.05, 5), st.integers(2, 40))
    def test_monotone(self, alpha, tau, dt, T):
        s = decay_schedule(alpha, tau, dt, T)
        keep = s > 1e-300
        assert np.all(np.diff(s[keep]) < 0)
        assert np.all(np.diff(decay_schedule(-alpha, tau, dt, T)[keep]) > 0)


class TestFS:
    def test_zero_input_silent(self):
        rec = fs_simulate(_fs([4, 2, 1]), 0.0)
        assert rec.approx == 0 and not rec.spikes.any()

    def test_binary_2_pow_T_minus_t(self):
        rec = fs_simulate(_fs([16, 8, 4, 2]), 5.0)
        np.testing.assert_array_equal(rec.spikes[0], [0, 0, 1, 0])
        assert rec.approx == 4

    def test_binary_2_pow_T_minus_1_minus_t(self):
        rec = fs_simulate(_fs([8, 4, 2, 1]), 5.0)
        np.testing.assert_array_equal(rec.spikes[0], [0, 1, 0, 1])
        assert rec.approx == 5

    def test_integers_exact(self):
        p = _fs([8, 4, 2, 1])
        np.testing.assert_array_equal(forward(p, np.arange(16.0)), np.arange(16.0))

    def test_trace(self):
        rec = fs_simulate(_fs([8, 4, 2, 1]), 5.0, trace=True)
        np.testing.assert_array_equal(rec.membrane_trace[0], [5, 5, 1, 1])

    def test_length_mismatch(self):
        with pytest.raises(InvalidArgument):
            FSParams(np.ones(3), np.ones(2), np.ones(3))


class TestBinaryParams:
    def test_T3_scale8(self):
        p = binary_fs_params(3, 8)
        np.testing.assert_array_equal(p.d, [4, 2, 1])
        assert fs_simulate(p, 5.0).approx == 5
        assert fs_simulate(p, 5.4).approx == 5

    def test_T1(self):
        p = binary_fs_params(1, 2)
        np.testing.assert_array_equal(p.d, [1])
        assert fs_simulate(p, 1.0).approx == 1
        assert fs_simulate(p, 0.9).approx == 0

    @pytest.mark.parametrize("scale", [0, -1])
    def test_bad_scale(self, scale):
        with pytest.raises(InvalidArgument):
            binary_fs_params(4, scale)

    @pytest.mark.parametrize("T,R", [(4, 1.0), (8, 3.0), (12, 62.0)])
    def test_grid_exact(self, T, R):
        p = binary_fs_params(T, R)
        k = np.arange(2**T)
        x = k * R * 2.0**-T
        np.testing.assert_array_equal(forward(p, x), x)

    @given(st.integers(1, 20), st.floats(1e-3, 1e3), st.floats(0, 1, exclude_max=True))
    def test_quantization_bound(self, T, R, frac):
        x = frac * R
        err = x - forward(binary_fs_params(T, R), x)
        assert 0 <= err < R * 2.0**-T


class TestMBE:
    def _neuron(self):
        bases = (MBEBasis(2.0, 3.0, 4.0), MBEBasis(1.0, 1.5, 0.7, dt=0.5), MBEBasis(5.0, 2.0, 1.0, input_offset=0.3, input_gain=2.0))
        return MBENeuron(1.5, bases, np.array([0.4, -0.2, 0.9]), 12)

    def test_single_basis_matches_fs(self):
        p = _fs([8, 4, 2, 1])
        nrn = fs_as_mbe(p)
        x = np.linspace(-1, 17, 301)
        np.testing.assert_array_equal(forward(nrn, x), forward(p, x))

    def test_constant_decay_matches_fs(self):
        # huge tau: every schedule is alpha at every step
        nrn = MBENeuron(2.0, (MBEBasis(1e300, 1e300, 1e300),), [1.0], 5)
        p = _fs([2.0] * 5)
        x = np.linspace(-1, 12, 131)
        np.testing.assert_array_equal(forward(nrn, x), forward(p, x))

    def test_below_threshold_silent(self):
        nrn = self._neuron()
        d, r, vth = nrn.schedules()
        u0 = nrn.initial_membrane(np.array(-10.0))
        assert np.all(u0 < vth.min())
        assert mbe_simulate(nrn, -10.0).approx == 0

    def test_two_bases_hand(self):
        d = np.array([[1.0, 0.5], [3.0, 2.0]])
        vth = np.array([[1.0, 5.0], [9.0, 1.0]])
        r = np.array([[1.0, 1.0], [1.0, 1.0]])
        nrn = FreeScheduleNeuron(d, r, vth, np.array([0.7, -1.3]))
        rec = mbe_simulate(nrn, 1.5)
        np.testing.assert_array_equal(rec.spikes, [[1, 0], [0, 1]])
        assert rec.approx == 0.7 * 1.0 + -1.3 * 2.0

    def test_readout_identity(self, rng):
        nrn = self._neuron()
        d, r, vth = nrn.schedules()
        x = rng.uniform(-2, 3, 500)
        out, spikes = forward(nrn, x, return_spikes=True)
        manual = np.array([sum(nrn.w[n] * sum(d[n, t] * spikes[i, n, t] for t in range(nrn.T)) for n in range(3))
                           for i in range(len(x))])
        np.testing.assert_allclose(out, manual, rtol=1e-14, atol=1e-14)
        np.testing.assert_array_equal(out, readout(spikes, d, nrn.w))

    def test_scalar_record(self):
        nrn = self._neuron()
        rec = mbe_simulate(nrn, 1.1)
        assert rec.spikes.shape == (3, 12)
        assert set(np.unique(rec.spikes)) <= {0, 1}
        d, _, _ = nrn.schedules()
        assert rec.approx == float(readout(rec.spikes.astype(bool), d, nrn.w))

    def test_deterministic(self, rng):
        nrn = self._neuron()
        x = rng.uniform(-2, 3, 100)
        a, sa = forward(nrn, x, return_spikes=True)
        b, sb = forward(nrn, x, return_spikes=True)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(sa, sb)

    def test_schedules_read_only(self):
        d, r, vth = self._neuron().schedules()
        with pytest.raises(ValueError):
            d[0, 0] = 1.0

    @pytest.mark.parametrize("kw", [{"tau_d": 0}, {"tau_r": -1}, {"dt": 0}, {"input_gain": 0}])
    def test_bad_basis(self, kw):
        args = {"tau_d": 1.0, "tau_r": 1.0, "tau_vth": 1.0, **kw}
        with pytest.raises(InvalidArgument):
            MBEBasis(**args)

    def test_weight_count_mismatch(self):
        with pytest.raises(InvalidArgument):
            MBENeuron(1.0, (MBEBasis(1, 1, 1),), [1.0, 2.0], 4)

    def test_simulate_shapes(self):
        d = np.ones((2, 5))
        s, mem = simulate_spikes(np.zeros((7, 3, 2)), d, d, d, trace=True)
        assert s.shape == (7, 3, 2, 5) and mem.shape == s.shape
