"""Ground-truthed synthetic dataset: band-localized tone clusters.

The one-sided frequency axis [0, T/2] (in DFT index units, dimensionless
sample rate 1.0) is divided into equal bins. Each sample activates a random
subset of bins; an active bin gets a cluster of tones whose amplitudes follow
a Voigt profile around a random peak inside the bin, all sharing one random
phase. Four designated bins are "salient": the class label is the powerset
index of which salient bins are active, so labels are decided purely by bin
membership and every salient DFT bin is known ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import voigt_profile

from .errors import NumericError, ValidationError
from .signal import TimeSeries


@dataclass(frozen=True)
class SynthConfig:
    n_timesteps: int = 2000
    n_bins: int = 32
    salient_bins: tuple[int, ...] = (4, 11, 18, 26)
    tones_per_bin: int = 20
    min_active_bins: int = 1
    max_active_bins: int = 10
    noise_std: float = 0.01
    voigt_sigma: float | None = None  # default: bin_width / 8
    voigt_gamma: float | None = None  # default: bin_width / 8
    seed: int = 0

    def __post_init__(self):
        if self.n_timesteps < 4 or self.n_bins < 1 or self.tones_per_bin < 1:
            raise ValidationError(f"degenerate generator configuration: {self}")
        if len(set(self.salient_bins)) != len(self.salient_bins):
            raise ValidationError("salient bins must be distinct")
        if any(not (0 <= b < self.n_bins) for b in self.salient_bins):
            raise ValidationError(f"salient bins must lie in [0, {self.n_bins})")
        if not (1 <= self.min_active_bins <= self.max_active_bins <= self.n_bins):
            raise ValidationError(
                f"active-bin range [{self.min_active_bins}, {self.max_active_bins}] invalid"
            )
        if self.noise_std < 0:
            raise ValidationError("noise_std must be non-negative")

    @property
    def bin_width(self) -> float:
        """Width of one bin in DFT index units."""
        return (self.n_timesteps / 2) / self.n_bins

    @property
    def sigma(self) -> float:
        return self.voigt_sigma if self.voigt_sigma is not None else self.bin_width / 8

    @property
    def gamma(self) -> float:
        return self.voigt_gamma if self.voigt_gamma is not None else self.bin_width / 8

    @property
    def n_classes(self) -> int:
        return 2 ** len(self.salient_bins)

    def bin_range(self, b: int) -> tuple[float, float]:
        """Half-open frequency-index range [start, end) of bin b."""
        return b * self.bin_width, (b + 1) * self.bin_width


@dataclass(frozen=True)
class SynthSample:
    ts: TimeSeries
    label: int
    ground_truth_bins: np.ndarray  # bool [n_bins], active salient bins
    ground_truth_freq: np.ndarray  # bool [K], DFT bins inside active salient regions


def voigt_amplitude(freq: float | np.ndarray, peak: float, sigma: float, gamma: float):
    """Voigt profile (Gaussian convolved with Lorentzian) evaluated at freq - peak."""
    if sigma < 0 or gamma < 0 or (sigma == 0 and gamma == 0):
        raise ValidationError(f"need sigma > 0 or gamma > 0, got sigma={sigma} gamma={gamma}")
    return voigt_profile(np.asarray(freq, dtype=np.float64) - peak, sigma, gamma)


def label_from_bins(active_bins, salient_bins) -> int:
    """Powerset index with bit i set iff salient_bins[i] is active."""
    active = set(int(b) for b in active_bins)
    label = 0
    for i, b in enumerate(salient_bins):
        if b in active:
            label |= 1 << i
    return label


def _ground_truth_freq(cfg: SynthConfig, active_salient) -> np.ndarray:
    k = cfg.n_timesteps // 2 + 1
    gt = np.zeros(k, dtype=bool)
    j = np.arange(k)
    for b in active_salient:
        lo, hi = cfg.bin_range(b)
        gt |= (j >= lo) & (j < hi)
    return gt


def generate_sample(cfg: SynthConfig, rng: np.random.Generator) -> SynthSample:
    """Draw one sample; consumes the generator in a fixed, documented order.

    Draw order: active-bin count, active bins, then per active bin (in drawn
    order) a peak location and a phase, then Gaussian noise. Tone frequencies
    are laid out linearly over [bin start, bin end) at the midpoints of equal
    sub-intervals, and the Voigt peak is drawn uniformly over the bin inset by
    one tone spacing on each side; both choices keep the cluster's spectral
    mass off the exact bin boundaries. Each bin's waveform is peak-normalized
    before bins are summed.
    """
    n_active = int(rng.integers(cfg.min_active_bins, cfg.max_active_bins + 1))
    active = rng.choice(cfg.n_bins, size=n_active, replace=False)
    t = np.arange(cfg.n_timesteps)
    total = np.zeros(cfg.n_timesteps)
    for b in active:
        lo, hi = cfg.bin_range(int(b))
        inset = (hi - lo) / cfg.tones_per_bin
        peak = rng.uniform(lo + inset, hi - inset)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        tones = lo + (hi - lo) * (np.arange(cfg.tones_per_bin) + 0.5) / cfg.tones_per_bin
        amps = voigt_amplitude(tones, peak, cfg.sigma, cfg.gamma)
        wave = amps @ np.sin(2.0 * np.pi * tones[:, None] * t[None, :] / cfg.n_timesteps + phase)
        peak_abs = np.max(np.abs(wave))
        if peak_abs > 0:
            total += wave / peak_abs
    if cfg.noise_std > 0:
        total = total + rng.normal(0.0, cfg.noise_std, size=cfg.n_timesteps)
    active_salient = sorted(set(int(b) for b in active) & set(cfg.salient_bins))
    gt_bins = np.zeros(cfg.n_bins, dtype=bool)
    gt_bins[active_salient] = True
    return SynthSample(
        ts=TimeSeries(total, sample_rate=1.0),
        label=label_from_bins(active, cfg.salient_bins),
        ground_truth_bins=gt_bins,
        ground_truth_freq=_ground_truth_freq(cfg, active_salient),
    )


def _sample_rng(cfg: SynthConfig, split_id: int, index: int) -> np.random.Generator:
    # Per-sample streams keyed on (seed, split, index): order-independent determinism.
    return np.random.default_rng(np.random.SeedSequence((cfg.seed, split_id, index)))


@dataclass(frozen=True)
class SynthDataset:
    """Stacked samples with labels and per-sample frequency ground truth."""

    samples: np.ndarray        # [n x T x 1]
    labels: np.ndarray         # [n]
    ground_truth_freq: np.ndarray  # bool [n x K]

    def __len__(self) -> int:
        return self.samples.shape[0]


def _collect(samples: list[SynthSample]) -> SynthDataset:
    return SynthDataset(
        samples=np.stack([s.ts.samples for s in samples]),
        labels=np.array([s.label for s in samples], dtype=np.int64),
        ground_truth_freq=np.stack([s.ground_truth_freq for s in samples]),
    )


TRAIN_SPLIT, VAL_SPLIT, TEST_SPLIT = 0, 1, 2


def generate_dataset(
    cfg: SynthConfig,
    n_train: int,
    n_val: int,
    n_test_balanced: int,
    max_test_attempts: int | None = None,
) -> tuple[SynthDataset, SynthDataset, SynthDataset]:
    """Generate train/val (i.i.d.) and a class-balanced test split.

    The test split is balanced by rejection: candidate draws whose class
    bucket is already full are skipped before waveform synthesis. Aborts with
    a diagnostic if the attempt budget is exhausted (some class unreachable
    under the configuration).
    """
    if n_test_balanced % cfg.n_classes != 0:
        raise ValidationError(
            f"test size {n_test_balanced} is not divisible by {cfg.n_classes} classes"
        )
    train = _collect([generate_sample(cfg, _sample_rng(cfg, TRAIN_SPLIT, i))
                      for i in range(n_train)])
    val = _collect([generate_sample(cfg, _sample_rng(cfg, VAL_SPLIT, i))
                    for i in range(n_val)])

    per_class = n_test_balanced // cfg.n_classes
    budget = max_test_attempts if max_test_attempts is not None else max(2_000_000, 4000 * n_test_balanced)
    remaining = {c: per_class for c in range(cfg.n_classes)}
    kept: list[SynthSample] = []
    attempt = 0
    while sum(remaining.values()) > 0:
        if attempt >= budget:
            starved = sorted(c for c, n in remaining.items() if n > 0)
            raise NumericError(
                f"balanced test sampling exhausted {budget} attempts; "
                f"classes still missing samples: {starved}"
            )
        rng = _sample_rng(cfg, TEST_SPLIT, attempt)
        attempt += 1
        # Cheap pre-check: the label needs only the bin draw, not the waveform.
        n_active = int(rng.integers(cfg.min_active_bins, cfg.max_active_bins + 1))
        active = rng.choice(cfg.n_bins, size=n_active, replace=False)
        label = label_from_bins(active, cfg.salient_bins)
        if remaining[label] == 0:
            continue
        remaining[label] -= 1
        kept.append(generate_sample(cfg, _sample_rng(cfg, TEST_SPLIT, attempt - 1)))
    return train, val, _collect(kept)
