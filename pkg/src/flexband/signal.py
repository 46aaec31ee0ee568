"""Canonical time/frequency representations and direct DFT-domain masking.

All signals are real-valued, so spectra are one-sided: a length-T signal maps
to K = T//2 + 1 complex coefficients per channel. The forward transform is
unnormalized; the 1/T factor lives in the inverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


def _as_2d_samples(samples) -> np.ndarray:
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValidationError(f"samples must be 1-D or 2-D, got ndim={arr.ndim}")
    return arr


@dataclass(frozen=True)
class TimeSeries:
    """Real signal of T time steps by V channels, with a sample rate.

    A dimensionless sample rate of 1.0 is allowed; frequencies are then in
    cycles per sample.
    """

    samples: np.ndarray
    sample_rate: float = 1.0

    def __post_init__(self):
        arr = _as_2d_samples(self.samples)
        if arr.shape[0] < 2:
            raise ValidationError(f"need at least 2 time steps, got {arr.shape[0]}")
        if arr.shape[1] < 1:
            raise ValidationError("need at least 1 channel")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("samples contain non-finite values")
        if not (self.sample_rate > 0):
            raise ValidationError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", arr)

    @property
    def n_steps(self) -> int:
        return self.samples.shape[0]

    @property
    def n_channels(self) -> int:
        return self.samples.shape[1]

    @property
    def nyquist(self) -> float:
        return self.sample_rate / 2.0


@dataclass(frozen=True)
class Spectrum:
    """One-sided complex spectrum: K = origin_length//2 + 1 bins by V channels."""

    coefficients: np.ndarray
    origin_length: int
    sample_rate: float = 1.0

    def __post_init__(self):
        arr = np.asarray(self.coefficients, dtype=np.complex128)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2:
            raise ValidationError(f"coefficients must be 1-D or 2-D, got ndim={arr.ndim}")
        expected = self.origin_length // 2 + 1
        if arr.shape[0] != expected:
            raise ValidationError(
                f"expected {expected} bins for origin_length={self.origin_length}, "
                f"got {arr.shape[0]}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValidationError("coefficients contain non-finite values")
        object.__setattr__(self, "coefficients", arr)

    @property
    def n_bins(self) -> int:
        return self.coefficients.shape[0]

    @property
    def n_channels(self) -> int:
        return self.coefficients.shape[1]

    @property
    def magnitudes(self) -> np.ndarray:
        return np.abs(self.coefficients)

    @property
    def phases(self) -> np.ndarray:
        return np.angle(self.coefficients)

    @property
    def frequencies(self) -> np.ndarray:
        return np.fft.rfftfreq(self.origin_length, d=1.0 / self.sample_rate)


@dataclass(frozen=True)
class FrequencyMask:
    """Per-bin keep weights in [0, 1]; length must match the target spectrum's K."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1:
            raise ValidationError("mask values must be 1-D")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("mask values contain non-finite values")
        if np.any(arr < 0.0) or np.any(arr > 1.0):
            raise ValidationError("mask values must lie in [0, 1]")
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class PerturbationSpectrum:
    """Replacement spectrum blended in where the mask is closed."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.complex128)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2:
            raise ValidationError("perturbation values must be 1-D or 2-D")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("perturbation contains non-finite values")
        object.__setattr__(self, "values", arr)


def forward_dft(ts: TimeSeries) -> Spectrum:
    """One-sided DFT of each channel, unnormalized forward convention."""
    coeffs = np.fft.rfft(ts.samples, axis=0)
    return Spectrum(coeffs, origin_length=ts.n_steps, sample_rate=ts.sample_rate)


def inverse_dft(spec: Spectrum) -> TimeSeries:
    """Inverse one-sided DFT; carries the 1/T normalization."""
    samples = np.fft.irfft(spec.coefficients, n=spec.origin_length, axis=0)
    return TimeSeries(samples, sample_rate=spec.sample_rate)


def dft_mask_apply(
    spec: Spectrum,
    mask: FrequencyMask,
    perturbation: PerturbationSpectrum | None = None,
) -> TimeSeries:
    """Blend spectrum and perturbation per bin, then invert to the time domain.

    Bin j of channel v becomes ``m_j * c_jv + (1 - m_j) * p_jv``; with no
    perturbation the second term is omitted, so a binary mask reproduces
    plain bin zeroing bit for bit.
    """
    if len(mask) != spec.n_bins:
        raise ValidationError(
            f"mask length {len(mask)} does not match spectrum bins {spec.n_bins}"
        )
    m = mask.values[:, None]
    if perturbation is None:
        blended = m * spec.coefficients
    else:
        if perturbation.values.shape != spec.coefficients.shape:
            raise ValidationError(
                f"perturbation shape {perturbation.values.shape} does not match "
                f"spectrum shape {spec.coefficients.shape}"
            )
        blended = m * spec.coefficients + (1.0 - m) * perturbation.values
    masked = Spectrum(blended, origin_length=spec.origin_length, sample_rate=spec.sample_rate)
    return inverse_dft(masked)


def moving_average_perturbation(spec: Spectrum, window_half_width: int) -> PerturbationSpectrum:
    """Magnitude-smoothing perturbation: windowed mean of bin magnitudes.

    Each bin's replacement magnitude is the mean of the original magnitudes
    over bins [j - W, j + W], truncated at the spectrum edges with the
    denominator equal to the actual bin count. The original bin phase is
    kept, so only magnitude is perturbed.
    """
    if window_half_width < 0:
        raise ValidationError(f"window_half_width must be >= 0, got {window_half_width}")
    mags = spec.magnitudes
    k = mags.shape[0]
    w = window_half_width
    # Truncated windowed mean via padded cumulative sums.
    csum = np.vstack([np.zeros((1, mags.shape[1])), np.cumsum(mags, axis=0)])
    lo = np.maximum(np.arange(k) - w, 0)
    hi = np.minimum(np.arange(k) + w, k - 1)
    means = (csum[hi + 1] - csum[lo]) / (hi - lo + 1)[:, None]
    phase = np.exp(1j * spec.phases)
    return PerturbationSpectrum(means * phase)
