"""Explanation quality metrics: localization, faithfulness, complexity, robustness.

All metrics consume Explanations on the canonical one-sided bin grid, so any
explainer can be scored by the same code. Determinism: threshold sweeps use a
fixed 101-level grid, top-k ties break toward lower bin index, and every
randomized metric takes an explicit seed.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .explain import (
    DynamaskFreqConfig,
    Explanation,
    FlexConfig,
    dynamask_freq_explain,
    flextime_explain,
)
from .signal import FrequencyMask, TimeSeries, dft_mask_apply, forward_dft

THRESHOLD_LEVELS = 101


@dataclass(frozen=True)
class LocalizationScores:
    aup: float
    aur: float
    auprc: float


def _saliency_of(expl) -> np.ndarray:
    return np.asarray(getattr(expl, "saliency", expl), dtype=np.float64)


def localization(expl, ground_truth: np.ndarray) -> LocalizationScores:
    """Threshold-sweep precision/recall of saliency against binary ground truth.

    AUP and AUR are mean precision and recall over 101 evenly spaced levels
    in [0, 1] applied to the max-normalized saliency (predictions are never
    empty since the maximum is 1). AUPRC is the area under the standard
    ranking PR curve: one operating point per distinct saliency value,
    integrated over recall through the monotone precision envelope and
    extended to recall 0. AUPRC is therefore exactly invariant to strictly
    monotone rescaling; AUP/AUR are invariant to positive scaling. All-zero
    saliency scores (0, 0, prevalence) by convention.
    """
    s = _saliency_of(expl)
    gt = np.asarray(ground_truth, dtype=bool)
    if s.shape != gt.shape:
        raise ValidationError(f"saliency shape {s.shape} does not match ground truth {gt.shape}")
    n_pos = int(gt.sum())
    if n_pos == 0:
        raise ValidationError("ground truth has no positive bins")
    if not np.all(np.isfinite(s)):
        raise ValidationError("saliency contains non-finite values")
    prevalence = n_pos / gt.size
    if s.max() <= 0.0:
        return LocalizationScores(aup=0.0, aur=0.0, auprc=prevalence)
    s_norm = s / s.max()
    # i/100 exactly (not linspace): values can land on level boundaries and
    # the comparison must not depend on ulp-level grid construction.
    levels = np.arange(THRESHOLD_LEVELS) / (THRESHOLD_LEVELS - 1.0)
    predicted = s_norm[None, :] >= levels[:, None]
    tp = (predicted & gt[None, :]).sum(axis=1)
    precision = tp / predicted.sum(axis=1)
    recall = tp / n_pos
    # Ranking PR curve: one point per distinct value, ties grouped.
    r_points, p_points = _ranking_pr_points(s, gt, n_pos)
    return LocalizationScores(aup=float(precision.mean()), aur=float(recall.mean()),
                              auprc=_envelope_area(r_points, p_points))


def _ranking_pr_points(s: np.ndarray, gt: np.ndarray, n_pos: int):
    thresholds = np.unique(s)
    recalls, precisions = [], []
    for tau in thresholds:
        predicted = s >= tau
        tp = int((predicted & gt).sum())
        recalls.append(tp / n_pos)
        precisions.append(tp / int(predicted.sum()))
    return np.array(recalls), np.array(precisions)


def _envelope_area(recall: np.ndarray, precision: np.ndarray) -> float:
    """Step area under the monotone precision envelope, from recall 0."""
    order = np.argsort(recall, kind="stable")
    r_sorted = recall[order]
    p_envelope = np.maximum.accumulate(precision[order][::-1])[::-1]
    area = 0.0
    prev_r = 0.0
    for r, p in zip(r_sorted, p_envelope):
        if r > prev_r:
            area += (r - prev_r) * p
            prev_r = r
    return float(area)


def top_fraction_mask(saliency: np.ndarray, keep_fraction: float) -> np.ndarray:
    """Binary keep mask of the ceil(keep_fraction * K) highest-saliency bins.

    Ties break toward the lower bin index.
    """
    if not (0.0 < keep_fraction <= 1.0):
        raise ValidationError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    k = len(saliency)
    n_keep = int(np.ceil(keep_fraction * k))
    order = np.lexsort((np.arange(k), -np.asarray(saliency)))
    mask = np.zeros(k)
    mask[order[:n_keep]] = 1.0
    return mask


def faithfulness(model, ts: TimeSeries, expl, target_class: int,
                 keep_fraction: float = 0.10) -> float:
    """Model's target-class probability after keeping only the top bins.

    The top ceil(keep_fraction * K) bins by saliency are kept, every other
    bin is zeroed in the DFT domain, and the model is evaluated on the
    reconstruction. keep_fraction = 1 short-circuits to the original signal,
    making the identity case exact.
    """
    s = _saliency_of(expl)
    spec = forward_dft(ts)
    if len(s) != spec.n_bins:
        raise ValidationError(f"saliency has {len(s)} bins, signal has {spec.n_bins}")
    mask = top_fraction_mask(s, keep_fraction)
    if mask.all():
        masked = ts
    else:
        masked = dft_mask_apply(spec, FrequencyMask(mask))
    probs = np.asarray(getattr(model.forward(masked), "probabilities"), dtype=np.float64)
    return float(probs[target_class])


def complexity(expl) -> float:
    """Entropy (natural log) of the saliency fractions; 0 for all-zero saliency."""
    s = _saliency_of(expl)
    if np.any(s < 0):
        raise ValidationError("complexity needs non-negative saliency")
    total = s.sum()
    if total == 0.0:
        warnings.warn("all-zero saliency has undefined complexity; returning 0", stacklevel=2)
        return 0.0
    q = s / total
    nz = q > 0
    return float(-np.sum(q[nz] * np.log(q[nz])))


@dataclass(frozen=True)
class RobustnessConfig:
    n_perturbations: int = 10
    noise_std_fraction: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n_perturbations < 1 or self.noise_std_fraction < 0:
            raise ValidationError(f"bad robustness settings: {self}")


def robustness_max_sensitivity(explain_fn, ts: TimeSeries,
                               cfg: RobustnessConfig = RobustnessConfig()) -> float | None:
    """Worst-case relative saliency change under small time-domain noise.

    Draws ``n_perturbations`` Gaussian perturbations with standard deviation
    ``noise_std_fraction * std(ts)`` and returns max ||e(ts+d) - e(ts)|| /
    ||e(ts)||. Returns None (missing) when the clean explanation has zero
    norm; the explain_fn must be deterministic for the score to be
    reproducible.
    """
    base = _saliency_of(explain_fn(ts))
    base_norm = np.linalg.norm(base)
    if base_norm == 0.0:
        return None
    rng = np.random.default_rng(cfg.seed)
    noise_std = cfg.noise_std_fraction * float(np.std(ts.samples))
    worst = 0.0
    for _ in range(cfg.n_perturbations):
        delta = rng.normal(0.0, noise_std, size=ts.samples.shape) if noise_std > 0 else 0.0
        perturbed = TimeSeries(ts.samples + delta, sample_rate=ts.sample_rate)
        diff = np.linalg.norm(_saliency_of(explain_fn(perturbed)) - base)
        worst = max(worst, float(diff / base_norm))
    return worst


# ---------------------------------------------------------------------------
# Hyperparameter tuning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TuneGrid:
    n_bands_options: tuple[int, ...] = (32,)
    filter_length_options: tuple[int, ...] = (513,)
    ratio_options: tuple[float, ...] = (0.05, 0.1, 0.2)
    subsample_size: int = 100
    tie_tolerance: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if not (self.n_bands_options and self.filter_length_options and self.ratio_options):
            raise ValidationError("tune grid must have at least one option per axis")
        if self.subsample_size < 1:
            raise ValidationError("subsample_size must be positive")


TUNE_METHODS = ("flextime", "dynamask_freq")


def _candidate_configs(method: str, grid: TuneGrid):
    if method == "flextime":
        return [
            FlexConfig(n_bands=l, filter_length=n, ratio=r)
            for l, n, r in itertools.product(grid.n_bands_options,
                                             grid.filter_length_options,
                                             grid.ratio_options)
        ]
    # Only the ratio is tunable for the per-bin mask method.
    return [DynamaskFreqConfig(ratio=r) for r in grid.ratio_options]


def _sort_key(cfg) -> tuple:
    if isinstance(cfg, FlexConfig):
        return (cfg.n_bands, cfg.filter_length, cfg.ratio)
    return (cfg.ratio,)


def _default_evaluator(method: str, model, iterations: int | None):
    def evaluate(cfg, samples, sample_rate):
        if iterations is not None:
            cfg = type(cfg)(**{**cfg.__dict__, "iterations": iterations})
        faiths, compls = [], []
        for x in samples:
            ts = TimeSeries(x, sample_rate=sample_rate)
            if method == "flextime":
                _, expl = flextime_explain(model, ts, cfg=cfg)
            else:
                expl = dynamask_freq_explain(model, ts, cfg=cfg)
            faiths.append(faithfulness(model, ts, expl, expl.target_class))
            compls.append(complexity(expl))
        return float(np.mean(faiths)), float(np.mean(compls))

    return evaluate


def tune_hyperparameters(method: str, model, val_samples: np.ndarray, sample_rate: float,
                         grid: TuneGrid = TuneGrid(), evaluator=None,
                         iterations: int | None = None):
    """Grid search maximizing mean faithfulness at the 10% keep level.

    Evaluates every candidate on min(subsample_size, n) points drawn without
    replacement from the validation samples. Ties within ``tie_tolerance``
    break toward the lowest mean complexity, then toward smaller band count,
    filter length, and ratio. Returns (best config, per-candidate results).

    ``evaluator(cfg, samples, sample_rate) -> (faithfulness, complexity)``
    may replace the real explain-and-score loop (used by tests and dry runs).
    """
    if method not in TUNE_METHODS:
        raise ValidationError(f"unknown tuning method {method!r}; expected one of {TUNE_METHODS}")
    val_samples = np.asarray(val_samples, dtype=np.float64)
    if val_samples.ndim != 3 or val_samples.shape[0] == 0:
        raise ValidationError("validation samples must be a non-empty [n x T x V] stack")
    rng = np.random.default_rng(grid.seed)
    n_take = min(grid.subsample_size, val_samples.shape[0])
    chosen = rng.choice(val_samples.shape[0], size=n_take, replace=False)
    subset = val_samples[chosen]

    if evaluator is None:
        evaluator = _default_evaluator(method, model, iterations)

    results = []
    for cfg in _candidate_configs(method, grid):
        faith, compl = evaluator(cfg, subset, sample_rate)
        results.append({"config": cfg, "faithfulness": faith, "complexity": compl})

    best_faith = max(r["faithfulness"] for r in results)
    tied = [r for r in results if r["faithfulness"] >= best_faith - grid.tie_tolerance]
    best_compl = min(r["complexity"] for r in tied)
    tied = [r for r in tied if r["complexity"] <= best_compl + grid.tie_tolerance]
    winner = min(tied, key=lambda r: _sort_key(r["config"]))
    return winner["config"], results


# ---------------------------------------------------------------------------
# Dataset-level reports
# ---------------------------------------------------------------------------

@dataclass
class MetricReport:
    """Per-method scores over one dataset split, with per-sample breakdown."""

    method: str
    n_samples: int
    localization_auprc: float
    localization_aup: float
    localization_aur: float
    faithfulness_mean: float
    complexity_mean: float
    sensitivity_mean: float | None = None
    sensitivity_missing: int = 0
    per_sample: dict = field(default_factory=dict)

    def summary(self) -> dict:
        out = {
            "method": self.method,
            "n_samples": self.n_samples,
            "auprc": self.localization_auprc,
            "aup": self.localization_aup,
            "aur": self.localization_aur,
            "faithfulness": self.faithfulness_mean,
            "complexity": self.complexity_mean,
        }
        if self.sensitivity_mean is not None:
            out["max_sensitivity"] = self.sensitivity_mean
        return out


def evaluate_explanations(model, samples: np.ndarray, sample_rate: float,
                          explanations: list, ground_truth: np.ndarray | None = None,
                          keep_fraction: float = 0.10) -> MetricReport:
    """Score a list of explanations against one dataset split.

    Localization requires ground truth and skips samples whose ground truth
    has no positive bins (class 0 has nothing to localize).
    """
    if len(explanations) != samples.shape[0]:
        raise ValidationError("one explanation per sample required")
    locs, faiths, compls = [], [], []
    per_sample = {"faithfulness": [], "complexity": [], "auprc": [], "aup": [], "aur": []}
    for i, expl in enumerate(explanations):
        ts = TimeSeries(samples[i], sample_rate=sample_rate)
        f = faithfulness(model, ts, expl, expl.target_class, keep_fraction)
        c = complexity(expl)
        faiths.append(f)
        compls.append(c)
        per_sample["faithfulness"].append(f)
        per_sample["complexity"].append(c)
        if ground_truth is not None and ground_truth[i].any():
            scores = localization(expl, ground_truth[i])
            locs.append(scores)
            per_sample["auprc"].append(scores.auprc)
            per_sample["aup"].append(scores.aup)
            per_sample["aur"].append(scores.aur)
        else:
            for key in ("auprc", "aup", "aur"):
                per_sample[key].append(None)
    method = explanations[0].method if explanations else "unknown"
    return MetricReport(
        method=method,
        n_samples=samples.shape[0],
        localization_auprc=float(np.mean([l.auprc for l in locs])) if locs else float("nan"),
        localization_aup=float(np.mean([l.aup for l in locs])) if locs else float("nan"),
        localization_aur=float(np.mean([l.aur for l in locs])) if locs else float("nan"),
        faithfulness_mean=float(np.mean(faiths)),
        complexity_mean=float(np.mean(compls)),
        per_sample=per_sample,
    )
