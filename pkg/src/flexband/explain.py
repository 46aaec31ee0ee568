"""Explainers producing per-frequency saliency on the canonical one-sided grid.

Four families:

* band-mask optimization (``flextime``): learns L logistic band weights
  whose filterbank reconstruction preserves the model's prediction while an
  L1 hinge keeps the mask sparse;
* per-bin DFT masking (``dynamask_freq``): same objective over all K bins
  with a moving-average magnitude perturbation behind the mask;
* randomized mask sampling (``freqrise``): score-weighted average of random
  coarse binary masks applied in the DFT domain;
* gradient methods (``saliency``, ``gxi``, ``ig``): time-domain input
  gradients pulled back through the inverse DFT so attributions land on
  frequency bins.

Every explainer emits an Explanation whose saliency lives on the K = T//2+1
grid of the input, so downstream metrics treat all methods uniformly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, UnsupportedMethodError, ValidationError
from .filterbank import BandMask, Filterbank, collected_response, decompose, design_filterbank
from .signal import (
    FrequencyMask,
    PerturbationSpectrum,
    Spectrum,
    TimeSeries,
    dft_mask_apply,
    forward_dft,
    moving_average_perturbation,
)

PROB_FLOOR = 1e-12


@dataclass
class Explanation:
    """Saliency over one-sided frequency bins plus provenance."""

    saliency: np.ndarray
    method: str
    target_class: int
    sample_rate: float = 1.0
    per_channel: np.ndarray | None = None
    trace: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        arr = np.asarray(self.saliency, dtype=np.float64)
        if arr.ndim != 1:
            raise ValidationError("saliency must be 1-D on the canonical bin grid")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("saliency contains non-finite values")
        if np.any(arr < 0):
            raise ValidationError("finalized saliency must be non-negative")
        self.saliency = arr

    @property
    def n_bins(self) -> int:
        return len(self.saliency)


@dataclass(frozen=True)
class FlexConfig:
    """Band-mask optimizer settings: bank geometry plus descent parameters."""

    n_bands: int = 32
    filter_length: int = 513
    ratio: float = 0.1
    iterations: int = 1000
    step_size: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.ratio <= 1.0):
            raise ValidationError(f"ratio must be in [0, 1], got {self.ratio}")
        if self.iterations < 1 or self.step_size <= 0:
            raise ValidationError("iterations must be >= 1 and step_size positive")


@dataclass(frozen=True)
class DynamaskFreqConfig:
    """Per-bin DFT mask optimizer settings; hinge weight fixed at 1, no smoothness term."""

    ratio: float = 0.1
    window_half_width: int = 10
    iterations: int = 1000
    step_size: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.ratio <= 1.0):
            raise ValidationError(f"ratio must be in [0, 1], got {self.ratio}")
        if self.window_half_width < 0:
            raise ValidationError("window_half_width must be >= 0")
        if self.iterations < 1 or self.step_size <= 0:
            raise ValidationError("iterations must be >= 1 and step_size positive")


@dataclass(frozen=True)
class FreqRiseConfig:
    """Randomized coarse-mask sampling settings."""

    n_masks: int = 3000
    grid_size: int = 64
    keep_probability: float = 0.5
    seed: int = 0
    batch_size: int = 256

    def __post_init__(self):
        if self.n_masks < 1 or self.grid_size < 2:
            raise ValidationError("need n_masks >= 1 and grid_size >= 2")
        if not (0.0 < self.keep_probability < 1.0):
            raise ValidationError(f"keep probability must be in (0, 1), got {self.keep_probability}")


@dataclass
class MaskLogits:
    """Unconstrained logits; the mask is their elementwise logistic image."""

    theta: np.ndarray

    @property
    def mask(self) -> np.ndarray:
        return _sigmoid(self.theta)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _probabilities(dist) -> np.ndarray:
    return np.asarray(getattr(dist, "probabilities", dist), dtype=np.float64)


def distortion_loss(yhat, yhat_masked, target_class: int) -> float:
    """Prediction-preservation loss: -yhat_l * log(yhat_masked_l) at the target class.

    All non-target entries of the reference prediction are zeroed, so only
    the chosen class contributes. The masked probability is floored at 1e-12
    before the log.
    """
    p = _probabilities(yhat)
    pm = _probabilities(yhat_masked)
    if not (0 <= target_class < len(p)):
        raise ValidationError(f"target class {target_class} out of range")
    return float(-p[target_class] * math.log(max(pm[target_class], PROB_FLOOR)))


def sparsity_penalty(mask, ratio: float) -> float:
    """Hinge on mean absolute mask value: max(mean|m| - ratio, 0), unit weight."""
    if not (0.0 <= ratio <= 1.0):
        raise ValidationError(f"ratio must be in [0, 1], got {ratio}")
    values = np.asarray(getattr(mask, "values", mask), dtype=np.float64)
    return float(max(np.mean(np.abs(values)) - ratio, 0.0))


# ---------------------------------------------------------------------------
# Model adapters: explainers accept any object with forward(ts); batch and
# gradient entry points are used when present and emulated when absent.
# ---------------------------------------------------------------------------

def _forward_batch_fn(model, sample_rate: float):
    if hasattr(model, "forward_batch"):
        return lambda samples: np.asarray(model.forward_batch(samples), dtype=np.float64)

    def fallback(samples):
        return np.stack([
            _probabilities(model.forward(TimeSeries(s, sample_rate=sample_rate)))
            for s in samples
        ])

    return fallback


def _backward_batch_fn(model, sample_rate: float):
    """Batched input-gradient entry point, or None if the model has no gradients."""
    if hasattr(model, "backward_input_batch"):
        return lambda samples, targets: np.asarray(model.backward_input_batch(samples, targets),
                                                   dtype=np.float64)
    if hasattr(model, "backward_input"):
        def fallback(samples, targets):
            return np.stack([
                np.asarray(model.backward_input(TimeSeries(s, sample_rate=sample_rate), t),
                           dtype=np.float64)
                for s, t in zip(samples, targets)
            ])
        return fallback
    return None


def _resolve_targets(probs: np.ndarray, target_class) -> np.ndarray:
    if target_class is None:
        return np.argmax(probs, axis=1)
    targets = np.broadcast_to(np.asarray(target_class, dtype=np.int64), (probs.shape[0],)).copy()
    if np.any(targets < 0) or np.any(targets >= probs.shape[1]):
        raise ValidationError(f"target class out of range for {probs.shape[1]} classes")
    return targets


def spectrum_gradient_weights(t_len: int) -> np.ndarray:
    """Per-bin weights of the inverse one-sided DFT adjoint: 2/T interior, 1/T edges."""
    k = t_len // 2 + 1
    w = np.full(k, 2.0 / t_len)
    w[0] = 1.0 / t_len
    if t_len % 2 == 0:
        w[k - 1] = 1.0 / t_len
    return w


def time_gradient_to_spectrum(grad_time: np.ndarray, t_len: int) -> np.ndarray:
    """Pull a time-domain gradient [T x V] back through the inverse DFT.

    Returns the complex gradient [K x V] whose real/imag parts are the
    derivatives with respect to each coefficient's real/imag part.
    """
    f = np.fft.rfft(grad_time, axis=0)
    return spectrum_gradient_weights(t_len)[:, None] * f


# ---------------------------------------------------------------------------
# Shared lockstep mask descent
# ---------------------------------------------------------------------------

MAX_STEP_HALVINGS = 5


def _mask_descent(evaluate, mask_gradient, n_samples: int,
                  mask_dim: int, ratio: float, iterations: int, step_size: float):
    """Gradient descent on logistic mask logits for a batch of samples.

    ``evaluate(masks, idx)`` maps masks [len(idx) x dim] to (signals,
    distortion, objective) for the given sample indices; ``mask_gradient
    (signals, masks, distortions)`` returns the distortion gradient in mask
    space [B x dim] for the full batch. The hinge gradient is added here.

    Each iteration takes one descent step at ``step_size``, halving the step
    up to MAX_STEP_HALVINGS times for any sample whose objective would
    increase and leaving that sample unchanged if no halving helps. The
    recorded objective is therefore non-increasing for every sample.
    """
    theta = np.zeros((n_samples, mask_dim))
    all_idx = np.arange(n_samples)

    masks = _sigmoid(theta)
    signals, dist, loss = evaluate(masks, all_idx)
    if not np.all(np.isfinite(loss)):
        raise NumericError(f"initial mask objective is not finite: {loss}")
    losses = [loss.copy()]
    for _ in range(iterations):
        g_mask = mask_gradient(signals, masks, dist)
        hinge_active = (np.mean(masks, axis=1) > ratio).astype(np.float64)
        g_mask = g_mask + (hinge_active / mask_dim)[:, None]
        g_theta = g_mask * masks * (1.0 - masks)
        if not np.all(np.isfinite(g_theta)):
            raise NumericError("mask gradient is not finite; aborting descent")

        step = np.full(n_samples, step_size)
        pending = all_idx
        for _attempt in range(1 + MAX_STEP_HALVINGS):
            if pending.size == 0:
                break
            cand_theta = theta[pending] - step[pending, None] * g_theta[pending]
            cand_masks = _sigmoid(cand_theta)
            cand_signals, cand_dist, cand_loss = evaluate(cand_masks, pending)
            if np.any(np.isnan(cand_loss)):
                raise NumericError("mask objective became NaN during descent")
            ok = cand_loss <= loss[pending]
            accepted = pending[ok]
            theta[accepted] = cand_theta[ok]
            masks[accepted] = cand_masks[ok]
            signals[accepted] = cand_signals[ok]
            dist[accepted] = cand_dist[ok]
            loss[accepted] = cand_loss[ok]
            pending = pending[~ok]
            step[pending] /= 2.0
        losses.append(loss.copy())
    return MaskLogits(theta), masks, np.stack(losses, axis=1)


# ---------------------------------------------------------------------------
# Band-mask explainer (flextime)
# ---------------------------------------------------------------------------

def _flex_config_dict(cfg: FlexConfig) -> dict:
    return {
        "n_bands": cfg.n_bands, "filter_length": cfg.filter_length, "ratio": cfg.ratio,
        "iterations": cfg.iterations, "step_size": cfg.step_size,
    }


FD_MASK_STEP = 1e-4


def flextime_explain_batch(model, samples: np.ndarray, sample_rate: float,
                           fb: Filterbank | None = None, target_classes=None,
                           cfg: FlexConfig = FlexConfig()):
    """Lockstep band-mask optimization over a stack of samples [B x T x V].

    Returns a list of (BandMask, Explanation) in sample order. All samples
    run the same iteration count, so model evaluations batch across the
    whole stack. Models without a backward pass fall back to forward
    differences in mask space: one extra evaluation per band per step.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 3:
        raise ValidationError("samples must be [B x T x V]")
    if fb is None:
        fb = design_filterbank(cfg.n_bands, cfg.filter_length, sample_rate)
    if fb.n_bands != cfg.n_bands:
        raise ValidationError(f"filterbank has {fb.n_bands} bands, config says {cfg.n_bands}")
    if fb.sample_rate != sample_rate:
        raise ValidationError("filterbank sample rate does not match the samples")
    n, t_len, _ = samples.shape
    dim = fb.n_bands

    forward_batch = _forward_batch_fn(model, sample_rate)
    probs = forward_batch(samples)
    targets = _resolve_targets(probs, target_classes)
    confidences = probs[np.arange(n), targets]
    target_vecs = np.zeros_like(probs)
    target_vecs[np.arange(n), targets] = confidences

    bands = np.stack([decompose(TimeSeries(s, sample_rate=sample_rate), fb).bands
                      for s in samples])  # [B x L x T x V]

    def reconstruct(masks, idx):
        return np.einsum("bl,bltv->btv", masks, bands[idx])

    def evaluate(masks, idx):
        signals = reconstruct(masks, idx)
        pm = np.clip(forward_batch(signals)[np.arange(len(idx)), targets[idx]], PROB_FLOOR, None)
        distortion = -confidences[idx] * np.log(pm)
        penalty = np.maximum(np.mean(np.abs(masks), axis=1) - cfg.ratio, 0.0)
        return signals, distortion, distortion + penalty

    backward_batch = _backward_batch_fn(model, sample_rate)
    if backward_batch is not None:
        def mask_gradient(signals, masks, dist):
            grads_x = backward_batch(signals, target_vecs)
            return np.einsum("btv,bltv->bl", grads_x, bands)
    else:
        def mask_gradient(signals, masks, dist):
            # Forward differences: one model evaluation per band and sample.
            grads = np.empty((n, dim))
            for l in range(dim):
                bumped = masks.copy()
                bumped[:, l] += FD_MASK_STEP
                probed = reconstruct(bumped, np.arange(n))
                pm = np.clip(forward_batch(probed)[np.arange(n), targets], PROB_FLOOR, None)
                grads[:, l] = (-confidences * np.log(pm) - dist) / FD_MASK_STEP
            return grads

    logits, masks, losses = _mask_descent(
        evaluate, mask_gradient, n_samples=n,
        mask_dim=dim, ratio=cfg.ratio, iterations=cfg.iterations, step_size=cfg.step_size,
    )

    k = t_len // 2 + 1
    results = []
    for i in range(n):
        band_mask = BandMask(masks[i])
        saliency = collected_response(fb, band_mask, k)
        expl = Explanation(
            saliency=saliency,
            method="flextime",
            target_class=int(targets[i]),
            sample_rate=sample_rate,
            trace={"loss_curve": losses[i].tolist(), "band_mask": masks[i].tolist(),
                   "theta": logits.theta[i].tolist()},
            config=_flex_config_dict(cfg),
        )
        results.append((band_mask, expl))
    return results


def flextime_explain(model, ts: TimeSeries, fb: Filterbank | None = None,
                     target_class: int | None = None,
                     cfg: FlexConfig = FlexConfig()):
    """Learn the band mask preserving the model's prediction on one sample."""
    [(band_mask, expl)] = flextime_explain_batch(
        model, ts.samples[None], ts.sample_rate, fb=fb,
        target_classes=None if target_class is None else np.array([target_class]),
        cfg=cfg,
    )
    return band_mask, expl


# ---------------------------------------------------------------------------
# Per-bin DFT mask explainer (dynamask adapted to the frequency domain)
# ---------------------------------------------------------------------------

def dynamask_freq_explain_batch(model, samples: np.ndarray, sample_rate: float,
                                target_classes=None,
                                cfg: DynamaskFreqConfig = DynamaskFreqConfig()):
    """Lockstep per-bin mask optimization over samples [B x T x V]."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 3:
        raise ValidationError("samples must be [B x T x V]")
    n, t_len, n_ch = samples.shape
    k = t_len // 2 + 1

    forward_batch = _forward_batch_fn(model, sample_rate)
    backward_batch = _backward_batch_fn(model, sample_rate)
    if backward_batch is None:
        raise UnsupportedMethodError("dynamask_freq requires a model backward pass")
    probs = forward_batch(samples)
    targets = _resolve_targets(probs, target_classes)
    confidences = probs[np.arange(n), targets]
    target_vecs = np.zeros_like(probs)
    target_vecs[np.arange(n), targets] = confidences

    coeffs = np.fft.rfft(samples, axis=1)  # [B x K x V]
    perturb = np.stack([
        moving_average_perturbation(
            Spectrum(coeffs[i], origin_length=t_len, sample_rate=sample_rate),
            cfg.window_half_width,
        ).values
        for i in range(n)
    ])
    diff = coeffs - perturb
    weights = spectrum_gradient_weights(t_len)

    def reconstruct(masks, idx):
        blended = masks[:, :, None] * coeffs[idx] + (1.0 - masks[:, :, None]) * perturb[idx]
        return np.fft.irfft(blended, n=t_len, axis=1)

    def evaluate(masks, idx):
        signals = reconstruct(masks, idx)
        pm = np.clip(forward_batch(signals)[np.arange(len(idx)), targets[idx]], PROB_FLOOR, None)
        distortion = -confidences[idx] * np.log(pm)
        penalty = np.maximum(np.mean(np.abs(masks), axis=1) - cfg.ratio, 0.0)
        return signals, distortion, distortion + penalty

    def mask_gradient(signals, masks, dist):
        grads_x = backward_batch(signals, target_vecs)
        f = np.fft.rfft(grads_x, axis=1)
        return np.sum(weights[None, :, None] * np.real(f * np.conj(diff)), axis=2)

    logits, masks, losses = _mask_descent(
        evaluate, mask_gradient, n_samples=n,
        mask_dim=k, ratio=cfg.ratio, iterations=cfg.iterations, step_size=cfg.step_size,
    )

    results = []
    for i in range(n):
        expl = Explanation(
            saliency=masks[i],
            method="dynamask_freq",
            target_class=int(targets[i]),
            sample_rate=sample_rate,
            trace={"loss_curve": losses[i].tolist()},
            config={"ratio": cfg.ratio, "window_half_width": cfg.window_half_width,
                    "iterations": cfg.iterations, "step_size": cfg.step_size},
        )
        results.append(expl)
    return results


def dynamask_freq_explain(model, ts: TimeSeries, target_class: int | None = None,
                          cfg: DynamaskFreqConfig = DynamaskFreqConfig()) -> Explanation:
    """Learn a per-bin frequency mask preserving the model's prediction."""
    [expl] = dynamask_freq_explain_batch(
        model, ts.samples[None], ts.sample_rate,
        target_classes=None if target_class is None else np.array([target_class]),
        cfg=cfg,
    )
    return expl


# ---------------------------------------------------------------------------
# Randomized coarse-mask sampling (freqrise)
# ---------------------------------------------------------------------------

def freqrise_explain(model, ts: TimeSeries, target_class: int | None = None,
                     cfg: FreqRiseConfig = FreqRiseConfig()) -> Explanation:
    """Score-weighted average of random binary masks applied in the DFT domain.

    Masks are drawn on a coarse grid (keep probability p), linearly
    upsampled to the K bins, applied with zero perturbation, and scored by
    the model's target-class probability; saliency is sum(score * mask) /
    (n_masks * p).
    """
    spec = forward_dft(ts)
    k = spec.n_bins
    forward_batch = _forward_batch_fn(model, ts.sample_rate)
    probs = forward_batch(ts.samples[None])
    targets = _resolve_targets(probs, None if target_class is None else np.array([target_class]))
    target = int(targets[0])

    rng = np.random.default_rng(cfg.seed)
    cells = (rng.random((cfg.n_masks, cfg.grid_size)) < cfg.keep_probability).astype(np.float64)
    grid_x = np.linspace(0.0, k - 1.0, cfg.grid_size)
    bin_x = np.arange(k, dtype=np.float64)
    # Linear interpolation as a sparse weight matrix shared by all masks.
    right = np.searchsorted(grid_x, bin_x, side="left").clip(1, cfg.grid_size - 1)
    left = right - 1
    frac = (bin_x - grid_x[left]) / (grid_x[right] - grid_x[left])
    masks = cells[:, left] * (1.0 - frac) + cells[:, right] * frac  # [n_masks x K]

    scores = np.empty(cfg.n_masks)
    for start in range(0, cfg.n_masks, cfg.batch_size):
        chunk = masks[start : start + cfg.batch_size]
        blended = chunk[:, :, None] * spec.coefficients[None, :, :]
        signals = np.fft.irfft(blended, n=ts.n_steps, axis=1)
        scores[start : start + cfg.batch_size] = forward_batch(signals)[:, target]

    saliency = (scores @ masks) / (cfg.n_masks * cfg.keep_probability)
    return Explanation(
        saliency=np.maximum(saliency, 0.0),
        method="freqrise",
        target_class=target,
        sample_rate=ts.sample_rate,
        trace={"score_mean": float(scores.mean()), "score_std": float(scores.std())},
        config={"n_masks": cfg.n_masks, "grid_size": cfg.grid_size,
                "keep_probability": cfg.keep_probability, "seed": cfg.seed},
    )


# ---------------------------------------------------------------------------
# Gradient explainers through the inverse-DFT inspection layer
# ---------------------------------------------------------------------------

GRADIENT_METHODS = ("saliency", "gxi", "ig")


def gradient_explain(method: str, model, ts: TimeSeries,
                     target_class: int | None = None, ig_steps: int = 50) -> Explanation:
    """Gradient-based frequency attributions: |grad|, |grad * coeff|, or path-integrated.

    The attributed scalar is -log p_target of the model; its time-domain
    gradient is pulled back through the inverse DFT, treating each complex
    coefficient's real and imaginary parts as input coordinates. ``ig``
    integrates midpoint gradients along the straight path from the zero
    signal and satisfies sum(attributions) = score(x) - score(0) up to the
    Riemann discretization.
    """
    if method not in GRADIENT_METHODS:
        raise UnsupportedMethodError(f"unknown gradient method {method!r}; "
                                     f"expected one of {GRADIENT_METHODS}")
    if not (hasattr(model, "backward_input") or hasattr(model, "backward_input_batch")):
        raise UnsupportedMethodError(f"method {method!r} requires a model backward pass")
    forward_batch = _forward_batch_fn(model, ts.sample_rate)
    backward_batch = _backward_batch_fn(model, ts.sample_rate)

    probs = forward_batch(ts.samples[None])
    targets = _resolve_targets(probs, None if target_class is None else np.array([target_class]))
    target = int(targets[0])
    onehot = np.zeros((1, probs.shape[1]))
    onehot[0, target] = 1.0

    spec = forward_dft(ts)
    t_len = ts.n_steps

    if method == "ig":
        alphas = (np.arange(ig_steps) + 0.5) / ig_steps
        path = alphas[:, None, None] * ts.samples[None]
        grads = backward_batch(path, np.repeat(onehot, ig_steps, axis=0))
        avg_grad = grads.mean(axis=0)
        spec_grad = time_gradient_to_spectrum(avg_grad, t_len)
        signed = np.real(spec_grad * np.conj(spec.coefficients))  # [K x V]
        per_channel = np.abs(signed)
        saliency = per_channel.sum(axis=1)
        trace = {"signed_attributions": signed.sum(axis=1).tolist(), "ig_steps": ig_steps}
    else:
        grad = backward_batch(ts.samples[None], onehot)[0]
        spec_grad = time_gradient_to_spectrum(grad, t_len)
        if method == "saliency":
            per_channel = np.abs(spec_grad)
        else:  # gxi
            per_channel = np.abs(spec_grad * spec.coefficients)
        saliency = per_channel.sum(axis=1)
        trace = {}
    return Explanation(
        saliency=saliency,
        method=method,
        target_class=target,
        sample_rate=ts.sample_rate,
        per_channel=per_channel if per_channel.shape[1] > 1 else None,
        trace=trace,
        config={"ig_steps": ig_steps} if method == "ig" else {},
    )


def ig_completeness_gap(model, ts: TimeSeries, target_class: int | None = None,
                        ig_steps: int = 50) -> float:
    """Relative gap |sum(attr) - (score(x) - score(0))| / |score(x) - score(0)|."""
    expl = gradient_explain("ig", model, ts, target_class=target_class, ig_steps=ig_steps)
    target = expl.target_class
    forward_batch = _forward_batch_fn(model, ts.sample_rate)

    def score(x):
        p = forward_batch(x[None])[0, target]
        return -math.log(max(p, PROB_FLOOR))

    total = float(np.sum(expl.trace["signed_attributions"]))
    diff = score(ts.samples) - score(np.zeros_like(ts.samples))
    return abs(total - diff) / max(abs(diff), 1e-12)
