import numpy as np
import pytest

from flexband.errors import ValidationError
from flexband.explain import DynamaskFreqConfig, Explanation, FlexConfig
from flexband.metrics import (
    LocalizationScores,
    RobustnessConfig,
    TuneGrid,
    complexity,
    evaluate_explanations,
    faithfulness,
    localization,
    robustness_max_sensitivity,
    top_fraction_mask,
    tune_hyperparameters,
)
from flexband.model import PredictionDistribution
from flexband.signal import TimeSeries

from oracles import area_under_pr, precision_recall_at_levels, ranking_pr_pairs
from stub_models import BandEnergyModel, ConstantModel
from test_explain import band3_setup


def expl_of(saliency, method="stub", target=0, rate=1.0):
    return Explanation(saliency=np.asarray(saliency, dtype=float), method=method,
                       target_class=target, sample_rate=rate)


class TestLocalization:
    def test_perfect_saliency_gives_auprc_one(self):
        gt = np.array([0, 0, 1, 1, 0, 0, 0, 0], dtype=bool)
        scores = localization(expl_of(gt.astype(float)), gt)
        assert scores.auprc == pytest.approx(1.0, abs=1e-12)

    def test_constant_saliency_gives_prevalence(self):
        gt = np.array([0, 0, 1, 1, 0, 0, 0, 0], dtype=bool)
        scores = localization(expl_of(np.full(8, 0.7)), gt)
        assert scores.auprc == pytest.approx(0.25, abs=1e-12)
        assert scores.aur == pytest.approx(1.0)

    def test_matches_brute_force_oracle(self):
        gt = np.array([0, 0, 1, 1, 0, 0, 0, 0], dtype=bool)
        s = np.array([0.1, 0.2, 0.9, 0.8, 0.1, 0.0, 0.0, 0.0])
        scores = localization(expl_of(s), gt)
        pairs = precision_recall_at_levels(s, gt)
        assert scores.aup == pytest.approx(np.mean([p for _, p in pairs]), abs=1e-9)
        assert scores.aur == pytest.approx(np.mean([r for r, _ in pairs]), abs=1e-9)
        assert scores.auprc == pytest.approx(area_under_pr(ranking_pr_pairs(s, gt)), abs=1e-9)

    def test_oracle_agreement_on_random_instances(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            k = int(rng.integers(4, 40))
            gt = rng.random(k) < 0.3
            if not gt.any():
                gt[int(rng.integers(k))] = True
            s = rng.random(k) * rng.choice([0.5, 1.0, 3.0])
            scores = localization(expl_of(s), gt)
            pairs = precision_recall_at_levels(s, gt)
            assert scores.aup == pytest.approx(np.mean([p for _, p in pairs]), abs=1e-9)
            assert scores.aur == pytest.approx(np.mean([r for r, _ in pairs]), abs=1e-9)
            assert scores.auprc == pytest.approx(area_under_pr(ranking_pr_pairs(s, gt)), abs=1e-9)

    def test_auprc_invariant_to_monotone_rescaling(self):
        rng = np.random.default_rng(1)
        s = rng.random(30)
        gt = rng.random(30) < 0.25
        gt[3] = True
        a = localization(expl_of(s), gt)
        b = localization(expl_of(s**3), gt)
        assert a.auprc == pytest.approx(b.auprc, abs=1e-12)

    def test_aup_aur_invariant_to_positive_scaling(self):
        rng = np.random.default_rng(6)
        s = rng.random(30)
        gt = rng.random(30) < 0.25
        gt[5] = True
        a = localization(expl_of(s), gt)
        b = localization(expl_of(4.0 * s), gt)
        assert a.aup == pytest.approx(b.aup, abs=1e-12)
        assert a.aur == pytest.approx(b.aur, abs=1e-12)
        assert a.auprc == pytest.approx(b.auprc, abs=1e-12)

    def test_all_zero_saliency_convention(self):
        gt = np.array([1, 0, 0, 1], dtype=bool)
        scores = localization(expl_of(np.zeros(4)), gt)
        assert scores == LocalizationScores(aup=0.0, aur=0.0, auprc=0.5)

    def test_empty_ground_truth_rejected(self):
        with pytest.raises(ValidationError):
            localization(expl_of(np.ones(4)), np.zeros(4, dtype=bool))


class TestTopFractionMask:
    def test_counts_and_tie_breaking(self):
        mask = top_fraction_mask(np.array([0.5, 0.9, 0.5, 0.1]), 0.5)
        np.testing.assert_array_equal(mask, [1, 1, 0, 0])

    def test_full_keep(self):
        np.testing.assert_array_equal(top_fraction_mask(np.zeros(5), 1.0), np.ones(5))

    def test_fraction_validated(self):
        with pytest.raises(ValidationError):
            top_fraction_mask(np.ones(4), 0.0)


class TestFaithfulness:
    def test_full_keep_equals_original_probability(self):
        fb, ts, model = band3_setup()
        p_orig = model.forward(ts).probabilities[1]
        s = np.random.default_rng(0).random(ts.n_steps // 2 + 1)
        assert faithfulness(model, ts, expl_of(s, target=1), 1, keep_fraction=1.0) == p_orig

    def test_band3_concentrated_explanation_is_faithful(self):
        fb, ts, model = band3_setup()
        k = ts.n_steps // 2 + 1
        freqs = np.fft.rfftfreq(ts.n_steps)
        low, high = fb.filters[3].nominal_band
        s = ((freqs >= low) & (freqs < high)).astype(float)
        score = faithfulness(model, ts, expl_of(s, target=1), 1, keep_fraction=0.15)
        assert score >= 0.9

    def test_anti_concentrated_explanation_is_unfaithful(self):
        fb, ts, model = band3_setup()
        freqs = np.fft.rfftfreq(ts.n_steps)
        low, high = fb.filters[3].nominal_band
        s = ((freqs < low) | (freqs >= high)).astype(float)
        score = faithfulness(model, ts, expl_of(s, target=1), 1, keep_fraction=0.15)
        assert score <= 0.2


class TestComplexity:
    def test_uniform_is_log_dim(self):
        for d in (3, 10, 64):
            assert complexity(expl_of(np.full(d, 2.5))) == pytest.approx(np.log(d), abs=1e-12)

    def test_one_hot_is_zero(self):
        s = np.zeros(16)
        s[5] = 3.0
        assert complexity(expl_of(s)) == 0.0

    def test_hand_computed_value(self):
        got = complexity(expl_of([1.0, 1.0, 2.0]))
        expected = -(0.25 * np.log(0.25) * 2 + 0.5 * np.log(0.5))
        assert got == pytest.approx(expected, abs=1e-9)
        assert got == pytest.approx(1.0397, abs=1e-4)

    def test_bounds(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            s = rng.random(40)
            assert 0.0 <= complexity(expl_of(s)) <= np.log(40) + 1e-12

    def test_all_zero_warns_and_returns_zero(self):
        with pytest.warns(UserWarning):
            assert complexity(expl_of(np.zeros(8))) == 0.0


class TestRobustness:
    def test_zero_noise_gives_zero(self):
        ts = TimeSeries(np.random.default_rng(0).standard_normal(64))
        fn = lambda t: expl_of(np.abs(np.fft.rfft(t.samples[:, 0])))
        cfg = RobustnessConfig(n_perturbations=3, noise_std_fraction=0.0, seed=1)
        assert robustness_max_sensitivity(fn, ts, cfg) == 0.0

    def test_constant_explainer_gives_zero(self):
        ts = TimeSeries(np.random.default_rng(1).standard_normal(64))
        fn = lambda t: expl_of(np.ones(33))
        cfg = RobustnessConfig(n_perturbations=5, noise_std_fraction=0.1, seed=2)
        assert robustness_max_sensitivity(fn, ts, cfg) == 0.0

    def test_matches_replayed_draws(self):
        ts = TimeSeries(np.random.default_rng(3).standard_normal(64))
        fn = lambda t: expl_of(np.abs(np.fft.rfft(t.samples[:, 0])))
        cfg = RobustnessConfig(n_perturbations=4, noise_std_fraction=0.05, seed=7)
        got = robustness_max_sensitivity(fn, ts, cfg)

        rng = np.random.default_rng(7)
        base = np.abs(np.fft.rfft(ts.samples[:, 0]))
        expected = 0.0
        std = 0.05 * np.std(ts.samples)
        for _ in range(4):
            delta = rng.normal(0.0, std, size=ts.samples.shape)
            pert = np.abs(np.fft.rfft((ts.samples + delta)[:, 0]))
            expected = max(expected, np.linalg.norm(pert - base) / np.linalg.norm(base))
        assert got == pytest.approx(expected, abs=1e-6)

    def test_zero_norm_base_reported_missing(self):
        ts = TimeSeries(np.random.default_rng(4).standard_normal(64))
        fn = lambda t: expl_of(np.zeros(33))
        assert robustness_max_sensitivity(fn, ts, RobustnessConfig(seed=0)) is None

    def test_monotone_in_perturbation_count_for_shared_seed(self):
        # Same seed means the first draws are shared, so the max over a
        # superset of perturbations can only grow.
        ts = TimeSeries(np.random.default_rng(5).standard_normal(64))
        fn = lambda t: expl_of(np.abs(np.fft.rfft(t.samples[:, 0])))
        values = [robustness_max_sensitivity(
            fn, ts, RobustnessConfig(n_perturbations=n, noise_std_fraction=0.05, seed=3))
            for n in (2, 5, 10)]
        assert values[0] <= values[1] <= values[2]


class TestTuneHyperparameters:
    def _samples(self, n=6, t_len=64):
        return np.random.default_rng(0).standard_normal((n, t_len, 1))

    def test_single_entry_grid_returned(self):
        grid = TuneGrid(n_bands_options=(8,), filter_length_options=(65,),
                        ratio_options=(0.2,), subsample_size=3)
        evaluator = lambda cfg, samples, rate: (0.5, 1.0)
        best, results = tune_hyperparameters("flextime", None, self._samples(), 1.0,
                                             grid, evaluator=evaluator)
        assert best == FlexConfig(n_bands=8, filter_length=65, ratio=0.2)
        assert len(results) == 1

    def test_dominant_faithfulness_wins(self):
        grid = TuneGrid(n_bands_options=(8,), filter_length_options=(65,),
                        ratio_options=(0.1, 0.2), subsample_size=3)
        evaluator = lambda cfg, samples, rate: (0.9 if cfg.ratio == 0.2 else 0.8, 5.0)
        best, _ = tune_hyperparameters("flextime", None, self._samples(), 1.0,
                                       grid, evaluator=evaluator)
        assert best.ratio == 0.2

    def test_tie_broken_by_complexity(self):
        grid = TuneGrid(n_bands_options=(8,), filter_length_options=(65,),
                        ratio_options=(0.1, 0.2), subsample_size=3)
        evaluator = lambda cfg, samples, rate: (0.9, 2.0 if cfg.ratio == 0.2 else 3.0)
        best, _ = tune_hyperparameters("flextime", None, self._samples(), 1.0,
                                       grid, evaluator=evaluator)
        assert best.ratio == 0.2

    def test_remaining_tie_prefers_smaller_settings(self):
        grid = TuneGrid(n_bands_options=(16, 8), filter_length_options=(129, 65),
                        ratio_options=(0.1,), subsample_size=3)
        evaluator = lambda cfg, samples, rate: (0.9, 1.0)
        best, _ = tune_hyperparameters("flextime", None, self._samples(), 1.0,
                                       grid, evaluator=evaluator)
        assert (best.n_bands, best.filter_length) == (8, 65)

    def test_dynamask_grid_covers_ratio_only(self):
        grid = TuneGrid(ratio_options=(0.05, 0.2), subsample_size=2)
        evaluator = lambda cfg, samples, rate: (cfg.ratio, 0.0)
        best, results = tune_hyperparameters("dynamask_freq", None, self._samples(), 1.0,
                                             grid, evaluator=evaluator)
        assert isinstance(best, DynamaskFreqConfig)
        assert best.ratio == 0.2
        assert len(results) == 2

    def test_unknown_method_rejected(self):
        with pytest.raises(ValidationError):
            tune_hyperparameters("lime", None, self._samples(), 1.0, TuneGrid())

    def test_real_evaluator_smoke(self):
        fb, ts, model = band3_setup()
        samples = ts.samples[None]
        grid = TuneGrid(n_bands_options=(8,), filter_length_options=(65,),
                        ratio_options=(0.125,), subsample_size=1)
        best, results = tune_hyperparameters("flextime", model, samples, 1.0,
                                             grid, iterations=10)
        assert best.n_bands == 8
        assert 0.0 <= results[0]["faithfulness"] <= 1.0


class TestEvaluateExplanations:
    def test_report_shapes(self):
        fb, ts, model = band3_setup()
        k = ts.n_steps // 2 + 1
        freqs = np.fft.rfftfreq(ts.n_steps)
        low, high = fb.filters[3].nominal_band
        gt = ((freqs >= low) & (freqs < high))[None, :]
        expl = expl_of(gt[0].astype(float), method="stub", target=1)
        report = evaluate_explanations(model, ts.samples[None], 1.0, [expl],
                                       ground_truth=gt)
        assert report.n_samples == 1
        assert report.localization_auprc == pytest.approx(1.0)
        assert 0.0 <= report.faithfulness_mean <= 1.0
        assert report.method == "stub"
        assert report.summary()["auprc"] == pytest.approx(1.0)
