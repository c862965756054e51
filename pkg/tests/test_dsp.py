"""dsp primitives against independent oracles.

Band levels are checked against direct FFT band power, delays against
analytically shifted sines, and the tilt shelf against sine-probe level
measurements, so none of the expectations reuse the implementation's own math.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from obar import dsp
from obar.errors import NegativeDelay, UnsupportedRate

FS = 48000


def fft_band_power_db(x, sample_rate, lo, hi):
    """Oracle: brick-wall band power from the periodogram, in dB."""
    spec = np.fft.rfft(x)
    f = np.fft.rfftfreq(len(x), 1.0 / sample_rate)
    # Parseval with rfft: interior bins count twice
    w = np.full(len(f), 2.0)
    w[0] = 1.0
    if len(x) % 2 == 0:
        w[-1] = 1.0
    p = np.sum(w[(f >= lo) & (f < hi)] * np.abs(spec[(f >= lo) & (f < hi)]) ** 2)
    p /= len(x) ** 2
    return 10.0 * np.log10(max(p, 1e-30))


class TestOctaveBands:
    def test_full_scale_sine_lands_in_its_band(self):
        t = np.arange(FS) / FS
        levels = dsp.octave_band_levels(np.sin(2 * np.pi * 1000 * t), FS)
        assert abs(levels[3] - (-3.01)) < 0.05
        others = np.delete(levels, 3)
        assert np.all(others <= -40.0)

    def test_white_noise_matches_fft_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal(4 * FS) * 0.1
        levels = dsp.octave_band_levels(x, FS)
        for lvl, fc in zip(levels, dsp.OCTAVE_CENTERS_HZ):
            oracle = fft_band_power_db(x, FS, fc / np.sqrt(2), fc * np.sqrt(2))
            assert abs(lvl - oracle) < 1.0, f"band {fc}: {lvl} vs oracle {oracle}"

    def test_band_power_sum_matches_broadband_for_inband_noise(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(2 * FS)
        spec = np.fft.rfft(x)
        f = np.fft.rfftfreq(len(x), 1.0 / FS)
        spec[(f < 125 / np.sqrt(2)) | (f > 8000 * np.sqrt(2))] = 0.0
        x = np.fft.irfft(spec, len(x))
        x *= 0.1 / np.sqrt(np.mean(x * x))
        band_sum = dsp.power_sum_db(dsp.octave_band_levels(x, FS))
        assert abs(band_sum - dsp.rms_db(x)) < 0.5

    def test_silence_floors_at_minus_120(self):
        levels = dsp.octave_band_levels(np.zeros(FS // 4), FS)
        assert np.all(levels == -120.0)

    def test_low_rate_rejected(self):
        with pytest.raises(UnsupportedRate):
            dsp.octave_band_levels(np.zeros(1000), 16000)


class TestFractionalDelay:
    def test_zero_delay_identity(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(2048)
        y, _ = dsp.fractional_delay(x, None, 0.0, FS)
        assert np.array_equal(y, x)

    def test_integer_delay_exact(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(4096)
        for d in (1, 7, 480):
            y, _ = dsp.fractional_delay(x, None, d / FS, FS)
            assert np.array_equal(y[d:], x[:-d])
            assert np.all(y[:d] == 0.0)

    @pytest.mark.parametrize("freq", [250.0, 1000.0, 3000.0])
    @pytest.mark.parametrize("delay", [0.5, 1.5, 10.25])
    def test_matches_phase_shifted_sine_within_minus_60db(self, freq, delay):
        # oracle: the analytically delayed sine
        t = np.arange(FS) / FS
        x = np.sin(2 * np.pi * freq * t)
        ref = np.sin(2 * np.pi * freq * (t - delay / FS))
        y, _ = dsp.fractional_delay(x, None, delay / FS, FS)
        err = y[100:-100] - ref[100:-100]
        rel = np.sqrt(np.mean(err**2) / 0.5)
        assert 20 * np.log10(rel) < -60.0

    def test_blockwise_equals_one_pass(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal(8192)
        one, _ = dsp.fractional_delay(x, None, 11.37 / FS, FS)
        state = None
        parts = []
        for i in range(0, len(x), 640):
            out, state = dsp.fractional_delay(x[i : i + 640], state, 11.37 / FS, FS)
            parts.append(out)
        assert np.max(np.abs(np.concatenate(parts) - one)) < 1e-9

    def test_negative_delay_rejected(self):
        with pytest.raises(NegativeDelay):
            dsp.fractional_delay(np.zeros(16), None, -1e-4, FS)


class TestCrossfades:
    def test_envelope_power_identity(self):
        p = np.linspace(0, 1, 1001)
        a = np.sqrt(1 - p)
        b = np.sqrt(p)
        assert np.max(np.abs(a**2 + b**2 - 1.0)) < 1e-12

    def test_uncorrelated_noise_power_flat(self):
        # oracle: statistics of two independent unit-power noises over 10 s
        rng = np.random.default_rng(11)
        n = 10 * FS
        a = rng.standard_normal(n)
        b = rng.standard_normal(n)
        out = dsp.equal_power_crossfade(a, b, 0.5)
        assert abs(10 * np.log10(np.mean(out**2))) < 0.1

    def test_endpoints_pass_through(self):
        a = np.ones(8)
        b = np.full(8, 2.0)
        assert np.array_equal(dsp.equal_power_crossfade(a, b, 0.0), a)
        assert np.array_equal(dsp.equal_power_crossfade(a, b, 1.0), b)

    def test_coherent_crossfade_flat_for_identical_signals(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal(FS)
        p = np.linspace(0, 1, FS)
        out = dsp.coherent_crossfade(x, x, p)
        assert np.max(np.abs(out - x)) < 1e-12

    def test_position_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            dsp.equal_power_crossfade(np.ones(4), np.ones(4), 1.5)


class TestBlockFIR:
    def test_blockwise_equals_full_convolution(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal(10000)
        h = rng.standard_normal(1024) * 0.03
        full = np.convolve(x, h)[: len(x)]
        fir = dsp.BlockFIR(h)
        parts = [fir.process(x[i : i + 1024]) for i in range(0, len(x), 1024)]
        assert np.max(np.abs(np.concatenate(parts) - full)) < 1e-9


class TestDecorrelators:
    def test_unit_energy_and_deterministic(self):
        h1 = dsp.decorrelator_fir(3)
        h2 = dsp.decorrelator_fir(3)
        assert np.array_equal(h1, h2)
        assert abs(np.sum(h1**2) - 1.0) < 1e-9

    def test_distinct_speakers_decorrelate_white_noise(self):
        rng = np.random.default_rng(21)
        x = rng.standard_normal(10 * FS)
        outs = [np.convolve(x, dsp.decorrelator_fir(i))[: len(x)] for i in range(4)]
        for i in range(4):
            for j in range(i + 1, 4):
                c = np.corrcoef(outs[i], outs[j])[0, 1]
                assert abs(c) < 0.2


class TestDirectives:
    def probe_level_ratio_db(self, process, freq_hi, freq_lo):
        """Oracle: steady-state sine probes at the two frequencies."""
        t = np.arange(FS) / FS
        out_hi = process(np.sin(2 * np.pi * freq_hi * t))[FS // 4 :]
        out_lo = process(np.sin(2 * np.pi * freq_lo * t))[FS // 4 :]
        return 20 * np.log10(np.sqrt(np.mean(out_hi**2) / np.mean(out_lo**2)))

    @pytest.mark.parametrize("tilt", [-6.0, -2.5, 3.0, 6.0])
    def test_tilt_hits_stated_db(self, tilt):
        d = dsp.Directive("spectral_tilt", tilt)
        ratio = self.probe_level_ratio_db(
            lambda x: dsp.apply_directives(x, [d], FS), 4000.0, 250.0
        )
        assert abs(ratio - tilt) < 0.5

    def test_zero_tilt_identity(self):
        x = np.random.default_rng(1).standard_normal(1000)
        y = dsp.apply_directives(x, [dsp.Directive("spectral_tilt", 0.0)], FS)
        assert np.array_equal(y, x)

    def test_time_shift_forward_and_back(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal(FS // 2)
        fwd = dsp.apply_directives(x, [dsp.Directive("time_shift", 10.0)], FS)
        assert np.array_equal(fwd[480:], x[:-480])
        back = dsp.apply_directives(x, [dsp.Directive("time_shift", -10.0)], FS)
        assert np.array_equal(back[: len(x) - 480], x[480:])

    def test_decorrelate_zero_is_identity_and_full_preserves_power(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal(4 * FS)
        same = dsp.apply_directives(x, [dsp.Directive("decorrelate", 0.0, seed=5)], FS)
        assert np.array_equal(same, x)
        wet = dsp.apply_directives(x, [dsp.Directive("decorrelate", 1.0, seed=5)], FS)
        assert abs(10 * np.log10(np.mean(wet**2) / np.mean(x**2))) < 0.5

    def test_unknown_directive_rejected(self):
        with pytest.raises(ValueError):
            dsp.apply_directives(np.zeros(16), [dsp.Directive("reverse", 1.0)], FS)

    def test_reapplication_does_not_stack(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal(FS // 4)
        d = [dsp.Directive("spectral_tilt", -6.0)]
        once = dsp.apply_directives(x, d, FS)
        again = dsp.apply_directives(x, d, FS)
        assert np.array_equal(once, again)


class TestFuzz:
    @settings(max_examples=40, deadline=None)
    @given(
        arrays(
            np.float64,
            st.integers(64, 512),
            elements=st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False),
        ),
        st.floats(0.0, 50.0),
    )
    def test_delay_never_produces_nan(self, x, delay_samples):
        y, _ = dsp.fractional_delay(x, None, delay_samples / FS, FS)
        assert np.all(np.isfinite(y))

    @settings(max_examples=30, deadline=None)
    @given(
        arrays(
            np.float64,
            st.integers(256, 1024),
            elements=st.floats(-10, 10, allow_nan=False, allow_infinity=False),
        ),
        st.floats(-6.0, 6.0),
        st.floats(0.0, 1.0),
    )
    def test_directive_chain_stays_finite(self, x, tilt, amount):
        y = dsp.apply_directives(
            x,
            [
                dsp.Directive("spectral_tilt", tilt),
                dsp.Directive("time_shift", 3.25),
                dsp.Directive("decorrelate", amount, seed=2),
            ],
            FS,
        )
        assert np.all(np.isfinite(y))
        assert len(y) == len(x)
