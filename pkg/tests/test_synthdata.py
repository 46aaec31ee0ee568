import collections

import numpy as np
import pytest

from flexband.errors import NumericError, ValidationError
from flexband.synthdata import (
    SynthConfig,
    generate_dataset,
    generate_sample,
    label_from_bins,
    voigt_amplitude,
)

from oracles import voigt_by_quadrature


class TestVoigtAmplitude:
    def test_zero_gamma_is_gaussian_density(self):
        sigma = 2.0
        at_peak = voigt_amplitude(5.0, peak=5.0, sigma=sigma, gamma=0.0)
        assert at_peak == pytest.approx(1.0 / (sigma * np.sqrt(2 * np.pi)), abs=1e-6)

    def test_symmetry(self):
        for delta in (0.1, 1.0, 3.7):
            left = voigt_amplitude(2.0 - delta, peak=2.0, sigma=1.3, gamma=0.4)
            right = voigt_amplitude(2.0 + delta, peak=2.0, sigma=1.3, gamma=0.4)
            assert left == pytest.approx(right, abs=1e-9)

    def test_matches_quadrature_convolution(self):
        got = voigt_amplitude(0.0, peak=0.0, sigma=1.0, gamma=1.0)
        expected = voigt_by_quadrature(0.0, sigma=1.0, gamma=1.0)
        assert got == pytest.approx(expected, abs=1e-5)
        got_off = voigt_amplitude(1.5, peak=0.0, sigma=1.0, gamma=1.0)
        expected_off = voigt_by_quadrature(1.5, sigma=1.0, gamma=1.0)
        assert got_off == pytest.approx(expected_off, abs=1e-5)

    def test_rejects_degenerate_widths(self):
        with pytest.raises(ValidationError):
            voigt_amplitude(0.0, peak=0.0, sigma=0.0, gamma=0.0)


class TestLabels:
    def test_powerset_bit_order(self):
        salient = (4, 11, 18, 26)
        assert label_from_bins({4, 7, 18}, salient) == 0b0101
        assert label_from_bins({4, 11, 18, 26}, salient) == 15
        assert label_from_bins({11}, salient) == 2

    def test_no_salient_bins_gives_class_zero(self):
        assert label_from_bins({1, 2, 3}, (4, 11, 18, 26)) == 0

    def test_label_ignores_non_salient_content(self):
        salient = (4, 11, 18, 26)
        assert label_from_bins({4, 5, 6, 7}, salient) == label_from_bins({4, 30}, salient)


class TestGenerateSample:
    def test_sample_shape_and_rate(self):
        cfg = SynthConfig()
        s = generate_sample(cfg, np.random.default_rng(0))
        assert s.ts.samples.shape == (2000, 1)
        assert s.ts.sample_rate == 1.0
        assert 0 <= s.label < 16

    def test_single_bin_energy_concentrates(self):
        cfg = SynthConfig(min_active_bins=1, max_active_bins=1, noise_std=0.0)
        ratios = []
        for seed in range(10):
            s = generate_sample(cfg, np.random.default_rng(seed))
            spec = np.abs(np.fft.rfft(s.ts.samples[:, 0])) ** 2
            j = np.arange(len(spec))
            active = [b for b in range(cfg.n_bins)
                      if spec[(j >= cfg.bin_range(b)[0]) & (j < cfg.bin_range(b)[1])].sum()
                      > 0.5 * spec.sum()]
            assert len(active) == 1
            lo, hi = cfg.bin_range(active[0])
            ratios.append(spec[(j >= lo) & (j < hi)].sum() / spec.sum())
        assert min(ratios) >= 0.90
        assert np.mean(ratios) >= 0.92

    def test_ground_truth_freq_matches_salient_regions(self):
        cfg = SynthConfig()
        for seed in range(20):
            s = generate_sample(cfg, np.random.default_rng(seed))
            j = np.arange(cfg.n_timesteps // 2 + 1)
            expected = np.zeros_like(s.ground_truth_freq)
            for i, b in enumerate(cfg.salient_bins):
                if s.label >> i & 1:
                    lo, hi = cfg.bin_range(b)
                    expected |= (j >= lo) & (j < hi)
            np.testing.assert_array_equal(s.ground_truth_freq, expected)

    def test_ground_truth_bins_consistent_with_label(self):
        cfg = SynthConfig()
        for seed in range(20):
            s = generate_sample(cfg, np.random.default_rng(seed))
            marked = [b for b in range(cfg.n_bins) if s.ground_truth_bins[b]]
            assert all(b in cfg.salient_bins for b in marked)
            assert label_from_bins(marked, cfg.salient_bins) == s.label

    def test_deterministic_given_rng_state(self):
        cfg = SynthConfig()
        a = generate_sample(cfg, np.random.default_rng(123))
        b = generate_sample(cfg, np.random.default_rng(123))
        np.testing.assert_array_equal(a.ts.samples, b.ts.samples)
        assert a.label == b.label


class TestGenerateDataset:
    def test_balanced_test_counts(self):
        cfg = SynthConfig(seed=1)
        _, _, test = generate_dataset(cfg, 10, 5, 64)
        counts = collections.Counter(test.labels.tolist())
        assert all(counts[c] == 4 for c in range(16))

    def test_same_seed_bitwise_identical(self):
        cfg = SynthConfig(seed=7)
        tr1, va1, te1 = generate_dataset(cfg, 20, 10, 32)
        tr2, va2, te2 = generate_dataset(cfg, 20, 10, 32)
        np.testing.assert_array_equal(tr1.samples, tr2.samples)
        np.testing.assert_array_equal(va1.samples, va2.samples)
        np.testing.assert_array_equal(te1.samples, te2.samples)
        np.testing.assert_array_equal(te1.labels, te2.labels)

    def test_test_size_must_divide_by_classes(self):
        with pytest.raises(ValidationError):
            generate_dataset(SynthConfig(), 10, 5, 63)

    def test_unreachable_class_aborts_with_diagnostic(self):
        cfg = SynthConfig(min_active_bins=1, max_active_bins=1)
        with pytest.raises(NumericError, match="missing"):
            generate_dataset(cfg, 2, 2, 32, max_test_attempts=500)

    def test_class_zero_frequency_matches_monte_carlo_oracle(self):
        cfg = SynthConfig(seed=3)
        n_train = 1200
        train, _, _ = generate_dataset(cfg, n_train, 2, 16)
        observed = np.mean(train.labels == 0)

        # Independent Monte-Carlo simulation of the bin-sampling process.
        rng = np.random.default_rng(99)
        hits = 0
        n_sim = 60_000
        salient = set(cfg.salient_bins)
        for _ in range(n_sim):
            n_active = rng.integers(cfg.min_active_bins, cfg.max_active_bins + 1)
            active = rng.choice(cfg.n_bins, size=n_active, replace=False)
            hits += not (set(active.tolist()) & salient)
        p = hits / n_sim
        sigma = np.sqrt(p * (1 - p) / n_train)
        assert abs(observed - p) <= 3 * sigma

    def test_val_split_differs_from_train(self):
        cfg = SynthConfig(seed=5)
        train, val, _ = generate_dataset(cfg, 5, 5, 16)
        assert not np.array_equal(train.samples[0], val.samples[0])
