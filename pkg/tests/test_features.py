import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jamcodec import features, signals
from jamcodec.errors import InsufficientSamplesError, InvalidLengthError, InvalidSpecError


def naive_dft(x):
    x = np.asarray(x, dtype=np.complex128)
    n = len(x)
    out = np.zeros(n, dtype=np.complex128)
    for m in range(n):
        acc = 0.0 + 0.0j
        for k in range(n):
            acc += x[k] * np.exp(-2j * np.pi * k * m / n)
        out[m] = acc
    return out


class TestFft:
    def test_impulse(self):
        assert np.allclose(features.fft([1, 0, 0, 0]), np.ones(4), atol=1e-12)

    def test_constant(self):
        X = features.fft(np.ones(8))
        assert abs(X[0] - 8.0) < 1e-12
        assert np.max(np.abs(X[1:])) < 1e-12

    def test_matches_naive_dft(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(256) + 1j * rng.standard_normal(256)
        expect = naive_dft(x)
        got = features.fft(x)
        assert np.max(np.abs(got - expect)) <= 1e-6 * np.max(np.abs(expect))

    @pytest.mark.parametrize("n", [2, 4, 32, 512])
    def test_matches_naive_dft_sizes(self, n):
        rng = np.random.default_rng(n)
        x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        expect = naive_dft(x)
        assert np.max(np.abs(features.fft(x) - expect)) <= 1e-6 * np.max(np.abs(expect))

    @pytest.mark.parametrize("n", [0, 1, 3, 100, 1000])
    def test_rejects_bad_lengths(self, n):
        with pytest.raises(InvalidLengthError):
            features.fft(np.zeros(max(n, 0)))

    @pytest.mark.parametrize("n", [2, 64, 1024, 4096])
    def test_inverse_roundtrip(self, n):
        rng = np.random.default_rng(n)
        x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        back = features.ifft(features.fft(x))
        assert np.max(np.abs(back - x)) <= 1e-9 * max(1.0, np.max(np.abs(x)))

    def test_batch_axis(self):
        rng = np.random.default_rng(9)
        xb = rng.standard_normal((5, 64)) + 1j * rng.standard_normal((5, 64))
        got = features.fft(xb)
        for i in range(5):
            assert np.allclose(got[i], features.fft(xb[i]), atol=1e-12)


def tone_buffer(freq_frac, fs=8192.0, n=8192, amp=1.0):
    spec = signals.SampleSpec.from_samples(fs, n)
    return signals.synth_tone(signals.ToneSpec.from_polar(freq_frac * fs, amp, 0.0), spec)


class TestPowerSpectrumBins:
    def test_tone_at_group_center_is_argmax(self):
        # group g covers DFT bins [8g, 8g+8); put the tone at bin 8*40+4
        fs, window = 8192.0, 1024
        freq = (8 * 40 + 4) * fs / window
        spec = signals.SampleSpec.from_samples(fs, 4096)
        buf = signals.synth_tone(signals.ToneSpec.from_polar(freq, 1.0, 0.0), spec)
        frame = features.power_spectrum_bins(buf, window_len=window)
        assert int(np.argmax(frame.bins)) == 40

    def test_parseval(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(4096) + 1j * rng.standard_normal(4096)
        p = features.band_power(x, window_len=1024, n_bins=128)
        # oracle: windowed time-domain energy per window / window_len
        k = np.arange(1024)
        hann = 0.5 * (1.0 - np.cos(2.0 * np.pi * k / 1024))
        energies = [np.sum(np.abs(hann * x[i * 1024 : (i + 1) * 1024]) ** 2) for i in range(4)]
        expect = np.mean(energies) / 1024
        assert abs(p.sum() - expect) <= 1e-6 * expect

    def test_white_noise_flatness(self):
        # expectation over 20 seeds of (max - min) spread below 6 dB
        spreads = []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            n = 2**18
            x = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2)
            frame = features.power_spectrum_bins(x, window_len=1024, n_bins=128)
            spreads.append(frame.bins.max() - frame.bins.min())
        assert np.mean(spreads) < 6.0

    def test_phase_rotation_invariance(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal(2048) + 1j * rng.standard_normal(2048)
        a = features.power_spectrum_bins(x, window_len=1024)
        b = features.power_spectrum_bins(np.exp(1j * 0.77) * x, window_len=1024)
        assert np.max(np.abs(a.bins - b.bins)) < 1e-9

    def test_too_short_buffer(self):
        with pytest.raises(InsufficientSamplesError):
            features.power_spectrum_bins(np.zeros(512, dtype=complex), window_len=1024)

    def test_bad_bin_count(self):
        with pytest.raises(InvalidSpecError):
            features.band_power(np.zeros(2048, dtype=complex), window_len=1024, n_bins=100)

    def test_finite_on_zero_input(self):
        frame = features.power_spectrum_bins(np.zeros(1024, dtype=complex))
        assert np.all(np.isfinite(frame.bins))


class TestTemporalStats:
    def test_constant_buffer(self):
        x = np.full(700, 2.5 + 0.0j)
        frame = features.temporal_stats(x)
        stats = frame.stats.reshape(7, 7)
        assert np.allclose(stats[:, 0], 2.5)        # mean
        assert np.allclose(stats[:, 1], 0.0)        # std
        assert np.allclose(stats[:, 2], 0.0)        # skew (degenerate rule)
        assert np.allclose(stats[:, 3], 3.0)        # kurtosis (degenerate rule)
        assert np.allclose(stats[:, 4], 2.5)        # max-abs
        assert np.allclose(stats[:, 6], 0.0)        # entropy
        assert frame.degenerate == tuple(range(7))

    def test_gaussian_kurtosis_monte_carlo(self):
        # shifted normals keep the magnitude positive; kurtosis is shift-invariant
        rng = np.random.default_rng(0)
        x = 1000.0 + rng.standard_normal(1_000_002)
        frame = features.temporal_stats(x.astype(complex))
        kurt = frame.stats.reshape(7, 7)[:, 3]
        assert np.all((2.9 <= kurt) & (kurt <= 3.1))

    def test_uniform_histogram_entropy(self):
        # 16 evenly spread values hit all 16 bins equally -> entropy ln(16)
        vals = np.tile(np.arange(16) / 15.0, 7 * 16)
        frame = features.temporal_stats(vals.astype(complex))
        entropy = frame.stats.reshape(7, 7)[:, 6]
        assert np.max(np.abs(entropy - math.log(16))) < 1e-12

    def test_log_energy(self):
        x = np.full(7 * 8, 2.0 + 0.0j)
        frame = features.temporal_stats(x)
        stats = frame.stats.reshape(7, 7)
        assert np.allclose(stats[:, 5], math.log(8 * 4.0 + features.LOG_EPS))

    def test_phase_rotation_invariance(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal(1024) + 1j * rng.standard_normal(1024)
        a = features.temporal_stats(x)
        b = features.temporal_stats(np.exp(1j * 1.3) * x)
        assert np.max(np.abs(a.stats - b.stats)) < 1e-9

    def test_too_short(self):
        with pytest.raises(InsufficientSamplesError):
            features.temporal_stats(np.zeros(55, dtype=complex))

    def test_finite_for_any_finite_input(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal(256) * 1e6
        frame = features.temporal_stats(x.astype(complex))
        assert np.all(np.isfinite(frame.stats))


class TestMixedVector:
    def _frames(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(1024) + 1j * rng.standard_normal(1024)
        return features.power_spectrum_bins(x), features.temporal_stats(x)

    def test_dimension_177(self):
        s, t = self._frames()
        v = features.mixed_vector(s, t)
        assert v.values.shape == (177,)
        assert features.MIXED_DIM == 253 - 76  # transmitted block minus side channel

    def test_zero_frames(self):
        v = features.mixed_vector(
            features.SpectralFrame(np.zeros(128), 1024),
            features.TemporalFrame(np.zeros(49)),
        )
        assert np.all(v.values == 0.0) and len(v.values) == 177

    def test_roundtrip_split(self):
        s, t = self._frames()
        v = features.mixed_vector(s, t)
        s2, t2 = features.split_mixed(v)
        assert np.array_equal(s2, s.bins) and np.array_equal(t2, t.stats)

    def test_spectral_comes_first(self):
        s, t = self._frames()
        v = features.mixed_vector(s, t)
        assert np.array_equal(v.values[:128], s.bins)


class TestNormalize:
    def test_midpoint_maps_to_half(self):
        stats = features.NormStats(np.array([0.0]), np.array([2.0]))
        scaled, _ = features.apply_minmax(stats, np.array([[1.0]]))
        assert scaled[0, 0] == 0.5

    def test_train_split_lands_in_unit_interval(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((50, 7)) * 40
        scaled, stats = features.normalize(X)
        assert scaled.min() >= 0.0 and scaled.max() <= 1.0
        back, clip = features.apply_minmax(stats, X)
        assert clip == 0.0

    def test_clip_rate_counted(self):
        train = np.array([[0.0], [1.0]])
        stats = features.fit_minmax(train)
        test = np.array([[2.0], [0.5], [-1.0], [0.25]])
        scaled, clip_rate = features.apply_minmax(stats, test)
        assert scaled.max() <= 1.0 and scaled.min() >= 0.0
        assert clip_rate == 0.5

    def test_constant_dimension_to_half(self):
        X = np.array([[3.0, 1.0], [3.0, 2.0]])
        scaled, stats = features.normalize(X)
        assert np.all(scaled[:, 0] == 0.5)
        assert stats.constant_dims.tolist() == [0]

    def test_needs_two_vectors(self):
        with pytest.raises(InvalidSpecError):
            features.fit_minmax(np.array([[1.0, 2.0]]))

    def test_stats_json_roundtrip(self, tmp_path):
        stats = features.fit_minmax(np.array([[0.0, -2.0], [4.0, 6.0]]))
        path = tmp_path / "norm.json"
        stats.save(path)
        back = features.NormStats.load(path)
        assert np.array_equal(back.min, stats.min) and np.array_equal(back.max, stats.max)
        import json
        d = json.loads(path.read_text())
        assert set(d.keys()) == {"min", "max"}

    @given(st.integers(2, 30), st.integers(1, 8))
    @settings(max_examples=25, deadline=None)
    def test_unit_interval_property(self, n, d):
        rng = np.random.default_rng(n * 31 + d)
        X = rng.standard_normal((n, d)) * rng.uniform(0.1, 10)
        scaled, _ = features.normalize(X)
        assert scaled.min() >= 0.0 and scaled.max() <= 1.0


class TestFeatureCsv:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((4, 177))
        cls = np.array(["chirp", "clean", "noise", "pulsed"])
        det = np.array(["interference", "clean", "interference", "interference"])
        path = tmp_path / "features.csv"
        features.write_feature_csv(path, X, cls, det)
        back = features.read_feature_csv(path)
        assert np.array_equal(back[features.DOMAIN_MIXED], X)  # repr() round-trips floats
        assert back["class_labels"].tolist() == cls.tolist()
        assert back["detection_labels"].tolist() == det.tolist()

    def test_header_names(self, tmp_path):
        path = tmp_path / "features.csv"
        features.write_feature_csv(path, np.zeros((1, 177)), ["clean"], ["clean"])
        header = path.read_text().splitlines()[0].split(",")
        assert header[0] == "s000" and header[127] == "s127"
        assert header[128] == "t00" and header[176] == "t48"
        assert header[177:] == ["class", "detection"]


class TestSpectrogram:
    def test_shape_and_finiteness(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(4096) + 1j * rng.standard_normal(4096)
        img = features.spectrogram_image(x, n_time=32, n_freq=32, n_avg=2)
        assert img.shape == (32, 32) and np.all(np.isfinite(img))

    def test_tone_makes_vertical_line(self):
        fs, n = 8192.0, 4096
        spec = signals.SampleSpec.from_samples(fs, n)
        buf = signals.synth_tone(signals.ToneSpec.from_polar(fs / 4, 1.0, 0.0), spec)
        img = features.spectrogram_image(buf, n_time=32, n_freq=32, n_avg=2)
        assert np.all(np.argmax(img, axis=1) == np.argmax(img[0]))

    def test_too_short(self):
        with pytest.raises(InsufficientSamplesError):
            features.spectrogram_image(np.zeros(100, dtype=complex))
