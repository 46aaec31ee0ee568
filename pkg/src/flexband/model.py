"""Small 1-D CNN with exact manual forward/backward passes and Adam training.

No autodiff framework: reverse-mode gradients are written out per layer and
validated against finite differences. This keeps the model dependency-free
and gives explainers exact input gradients. Internally activations are laid
out [batch, channels, time] in float64; convolutions run as one BLAS matmul
per kernel offset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import next_fast_len

from .errors import NumericError, ValidationError
from .signal import TimeSeries


@dataclass(frozen=True)
class Conv1d:
    kernel: int
    channels: int
    stride: int = 1
    padding: int = 0


@dataclass(frozen=True)
class Relu:
    pass


@dataclass(frozen=True)
class MaxPool1d:
    kernel: int
    stride: int


@dataclass(frozen=True)
class AvgPool1d:
    kernel: int
    stride: int


LayerSpec = Conv1d | Relu | MaxPool1d | AvgPool1d


def _pooled_length(t_len: int, kernel: int, stride: int) -> int:
    return (t_len - kernel) // stride + 1


@dataclass(frozen=True)
class ModelSpec:
    """Layer chain plus input shape [T x V] and class count C.

    The final layer must emit C channels of length 1; those are the logits,
    so no separate linear head exists.
    """

    layers: tuple[LayerSpec, ...]
    input_length: int
    in_channels: int
    n_classes: int

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        channels, length = self.in_channels, self.input_length
        if length < 1 or channels < 1 or self.n_classes < 2:
            raise ValidationError("input shape and class count must be positive (C >= 2)")
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Conv1d):
                if layer.kernel < 1 or layer.stride < 1 or layer.padding < 0:
                    raise ValidationError(f"layer {i}: bad conv parameters {layer}")
                length = _pooled_length(length + 2 * layer.padding, layer.kernel, layer.stride)
                channels = layer.channels
            elif isinstance(layer, (MaxPool1d, AvgPool1d)):
                if layer.kernel < 1 or layer.stride < 1:
                    raise ValidationError(f"layer {i}: bad pool parameters {layer}")
                length = _pooled_length(length, layer.kernel, layer.stride)
            elif isinstance(layer, Relu):
                pass
            else:
                raise ValidationError(f"layer {i}: unknown layer type {type(layer)}")
            if length < 1:
                raise ValidationError(f"layer {i} collapses the sequence to length {length}")
        if length != 1:
            raise ValidationError(f"final feature length must be 1, got {length}")
        if channels != self.n_classes:
            raise ValidationError(
                f"final channel count {channels} must equal class count {self.n_classes}"
            )

    def conv_layers(self) -> list[tuple[int, Conv1d]]:
        return [(i, l) for i, l in enumerate(self.layers) if isinstance(l, Conv1d)]


def default_model_spec(input_length: int = 2000, n_classes: int = 16) -> ModelSpec:
    """Three-block CNN: conv31/64 -> pool2, conv31/64 -> pool2, conv31/C -> global avg."""
    final_pool = input_length // 4
    return ModelSpec(
        layers=(
            Conv1d(kernel=31, channels=64, stride=1, padding=15),
            Relu(),
            MaxPool1d(kernel=2, stride=2),
            Conv1d(kernel=31, channels=64, stride=1, padding=15),
            Relu(),
            MaxPool1d(kernel=2, stride=2),
            Conv1d(kernel=31, channels=n_classes, stride=1, padding=15),
            AvgPool1d(kernel=final_pool, stride=final_pool),
        ),
        input_length=input_length,
        in_channels=1,
        n_classes=n_classes,
    )


@dataclass
class ModelParams:
    """Per-conv-layer weight [Co x Ci x k] and bias [Co] tensors."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int

    def copy(self) -> "ModelParams":
        return ModelParams(
            [w.copy() for w in self.weights], [b.copy() for b in self.biases], self.seed
        )

    def validate_for(self, spec: ModelSpec) -> None:
        convs = spec.conv_layers()
        if len(self.weights) != len(convs) or len(self.biases) != len(convs):
            raise ValidationError("parameter count does not match conv layer count")
        channels = spec.in_channels
        for (w, b, (_, conv)) in zip(self.weights, self.biases, convs):
            if w.shape != (conv.channels, channels, conv.kernel) or b.shape != (conv.channels,):
                raise ValidationError(f"parameter shape {w.shape} does not match {conv}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValidationError("parameters contain non-finite values")
            channels = conv.channels


def init_params(spec: ModelSpec, seed: int = 0) -> ModelParams:
    """Kaiming-uniform fan-in weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    channels = spec.in_channels
    for _, conv in spec.conv_layers():
        fan_in = channels * conv.kernel
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(conv.channels, channels, conv.kernel)))
        biases.append(np.zeros(conv.channels))
        channels = conv.channels
    return ModelParams(weights, biases, seed)


@dataclass(frozen=True)
class PredictionDistribution:
    """Class probabilities from the softmax head."""

    probabilities: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.probabilities, dtype=np.float64)
        if arr.ndim != 1:
            raise ValidationError("probabilities must be 1-D")
        if np.any(arr < 0) or abs(arr.sum() - 1.0) > 1e-6:
            raise ValidationError("probabilities must be non-negative and sum to 1")
        object.__setattr__(self, "probabilities", arr)

    @property
    def predicted_class(self) -> int:
        return int(np.argmax(self.probabilities))


# ---------------------------------------------------------------------------
# Layer forward/backward kernels
#
# Convolutions run in the frequency domain: one batched rfft, per-frequency
# channel mixing as a stacked GEMM, one irfft. This is exact linear
# convolution (the transform length covers input plus kernel) and an order
# of magnitude faster than sliding dot products at these shapes.
# ---------------------------------------------------------------------------

def _stacked_gemm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # matmul over leading stacks; operands made contiguous so BLAS is hit.
    return np.matmul(np.ascontiguousarray(a), np.ascontiguousarray(b))


def _conv1d_fwd(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int, padding: int):
    """Cross-correlation conv: out[bo t] = sum_{c d} w[o c d] x[b c t*stride+d-padding]."""
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding))) if padding else x
    k = w.shape[2]
    t_pad = xp.shape[2]
    t_out = _pooled_length(t_pad, k, stride)
    nfft = next_fast_len(t_pad + k - 1)
    xf = np.fft.rfft(xp, n=nfft, axis=2)
    wf = np.fft.rfft(w, n=nfft, axis=2)
    xt = np.ascontiguousarray(xf.transpose(2, 0, 1))            # [F x B x Ci]
    wt = np.ascontiguousarray(np.conj(wf).transpose(2, 1, 0))   # [F x Ci x Co]
    yf = np.matmul(xt, wt)                                      # [F x B x Co]
    full = np.fft.irfft(np.ascontiguousarray(yf.transpose(1, 2, 0)), n=nfft, axis=2)
    out = full[:, :, : (t_out - 1) * stride + 1 : stride].copy()
    out += b[None, :, None]
    cache = (xt, nfft, x.shape[2], t_pad)
    return out, cache


def _conv1d_bwd(cache, w: np.ndarray, d_out: np.ndarray, stride: int,
                padding: int, need_param_grads: bool):
    xt, nfft, t_in, t_pad = cache
    k = w.shape[2]
    t_out = d_out.shape[2]
    if stride != 1:
        up = np.zeros((d_out.shape[0], d_out.shape[1], (t_out - 1) * stride + 1))
        up[:, :, ::stride] = d_out
        d_out = up
    gf = np.fft.rfft(d_out, n=nfft, axis=2)
    gt = np.ascontiguousarray(gf.transpose(2, 0, 1))            # [F x B x Co]
    wf = np.fft.rfft(w, n=nfft, axis=2)
    # dxp[b c s] = sum_{o d} d_out[b o s-d] w[o c d]: plain convolution
    wt = np.ascontiguousarray(wf.transpose(2, 0, 1))            # [F x Co x Ci]
    dxf = np.matmul(gt, wt)                                     # [F x B x Ci]
    dxp = np.fft.irfft(np.ascontiguousarray(dxf.transpose(1, 2, 0)), n=nfft, axis=2)[:, :, :t_pad]
    dx = dxp[:, :, padding : padding + t_in] if padding else dxp
    dw = None
    db = None
    if need_param_grads:
        # dw[o c d] = sum_{b s} d_out[b o s] xp[b c s+d]: correlation at lags [0, k)
        dwf = np.matmul(np.conj(gt).transpose(0, 2, 1), xt)     # [F x Co x Ci]
        dw_full = np.fft.irfft(np.ascontiguousarray(dwf.transpose(1, 2, 0)), n=nfft, axis=2)
        dw = dw_full[:, :, :k].copy()
        db = d_out.sum(axis=(0, 2))
    return dx, dw, db


def _maxpool_fwd(x: np.ndarray, kernel: int, stride: int):
    t_out = _pooled_length(x.shape[2], kernel, stride)
    if kernel == stride:
        windows = x[:, :, : t_out * kernel].reshape(x.shape[0], x.shape[1], t_out, kernel)
    else:
        windows = np.lib.stride_tricks.sliding_window_view(x, kernel, axis=2)[:, :, ::stride]
    # argmax returns the first maximum: deterministic tie routing
    idx = np.argmax(windows, axis=3)
    out = np.take_along_axis(windows, idx[..., None], axis=3)[..., 0]
    return out, idx


def _maxpool_bwd(d_out: np.ndarray, idx: np.ndarray, x_shape, kernel: int, stride: int):
    dx = np.zeros(x_shape)
    t_out = d_out.shape[2]
    if kernel == stride:
        view = dx[:, :, : t_out * kernel].reshape(x_shape[0], x_shape[1], t_out, kernel)
        np.put_along_axis(view, idx[..., None], d_out[..., None], axis=3)
    else:
        starts = np.arange(t_out) * stride
        flat_t = starts[None, None, :] + idx
        b_idx = np.arange(x_shape[0])[:, None, None]
        c_idx = np.arange(x_shape[1])[None, :, None]
        np.add.at(dx, (b_idx, c_idx, flat_t), d_out)
    return dx


def _avgpool_fwd(x: np.ndarray, kernel: int, stride: int):
    t_out = _pooled_length(x.shape[2], kernel, stride)
    if kernel == stride:
        out = x[:, :, : t_out * kernel].reshape(x.shape[0], x.shape[1], t_out, kernel).mean(axis=3)
    else:
        windows = np.lib.stride_tricks.sliding_window_view(x, kernel, axis=2)[:, :, ::stride]
        out = windows.mean(axis=3)
    return out


def _avgpool_bwd(d_out: np.ndarray, x_shape, kernel: int, stride: int):
    dx = np.zeros(x_shape)
    t_out = d_out.shape[2]
    if kernel == stride:
        view = dx[:, :, : t_out * kernel].reshape(x_shape[0], x_shape[1], t_out, kernel)
        view += d_out[..., None] / kernel
    else:
        starts = np.arange(t_out) * stride
        for j in range(kernel):
            np.add.at(dx, (slice(None), slice(None), starts + j), d_out / kernel)
    return dx


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# Whole-network passes
# ---------------------------------------------------------------------------

def _forward_pass(spec: ModelSpec, params: ModelParams, x: np.ndarray, keep_cache: bool):
    """x is [B x V x T]; returns (logits [B x C], caches)."""
    caches = [] if keep_cache else None
    conv_idx = 0
    h = x
    for layer in spec.layers:
        if isinstance(layer, Conv1d):
            out, conv_cache = _conv1d_fwd(h, params.weights[conv_idx], params.biases[conv_idx],
                                          layer.stride, layer.padding)
            if keep_cache:
                caches.append(("conv", conv_idx, conv_cache))
            conv_idx += 1
            h = out
        elif isinstance(layer, Relu):
            mask = h > 0
            if keep_cache:
                caches.append(("relu", mask))
            h = h * mask
        elif isinstance(layer, MaxPool1d):
            out, idx = _maxpool_fwd(h, layer.kernel, layer.stride)
            if keep_cache:
                caches.append(("maxpool", idx, h.shape, layer.kernel, layer.stride))
            h = out
        else:
            if keep_cache:
                caches.append(("avgpool", h.shape, layer.kernel, layer.stride))
            h = _avgpool_fwd(h, layer.kernel, layer.stride)
    logits = h[:, :, 0]
    return logits, caches


def _backward_pass(spec: ModelSpec, params: ModelParams, caches, d_logits: np.ndarray,
                   need_param_grads: bool):
    """Returns (d_input [B x V x T], d_weights, d_biases)."""
    dh = d_logits[:, :, None]
    d_weights = [None] * len(params.weights)
    d_biases = [None] * len(params.biases)
    for layer, cache in zip(reversed(spec.layers), reversed(caches)):
        if isinstance(layer, Conv1d):
            _, conv_idx, conv_cache = cache
            dh, dw, db = _conv1d_bwd(conv_cache, params.weights[conv_idx], dh,
                                     layer.stride, layer.padding, need_param_grads)
            if need_param_grads:
                d_weights[conv_idx] = dw
                d_biases[conv_idx] = db
        elif isinstance(layer, Relu):
            dh = dh * cache[1]
        elif isinstance(layer, MaxPool1d):
            _, idx, x_shape, kernel, stride = cache
            dh = _maxpool_bwd(dh, idx, x_shape, kernel, stride)
        else:
            _, x_shape, kernel, stride = cache
            dh = _avgpool_bwd(dh, x_shape, kernel, stride)
    return dh, d_weights, d_biases


def _to_batch_layout(samples: np.ndarray) -> np.ndarray:
    # [B x T x V] -> [B x V x T]
    return np.ascontiguousarray(np.swapaxes(samples, 1, 2))


def _check_input_shape(spec: ModelSpec, samples: np.ndarray) -> None:
    if samples.shape[1] != spec.input_length or samples.shape[2] != spec.in_channels:
        raise ValidationError(
            f"input shape {samples.shape[1:]} does not match model "
            f"({spec.input_length}, {spec.in_channels})"
        )


def forward_batch(spec: ModelSpec, params: ModelParams, samples: np.ndarray) -> np.ndarray:
    """Probabilities [B x C] for a stack of samples [B x T x V]."""
    samples = np.asarray(samples, dtype=np.float64)
    _check_input_shape(spec, samples)
    logits, _ = _forward_pass(spec, params, _to_batch_layout(samples), keep_cache=False)
    return _softmax(logits)


def forward(spec: ModelSpec, params: ModelParams, ts: TimeSeries) -> PredictionDistribution:
    """Softmax class distribution for one sample; deterministic."""
    probs = forward_batch(spec, params, ts.samples[None])
    return PredictionDistribution(probs[0])


def predict_batch(spec: ModelSpec, params: ModelParams, samples: np.ndarray):
    """Vectorized forward: (probabilities [B x C], argmax labels [B])."""
    probs = forward_batch(spec, params, samples)
    return probs, np.argmax(probs, axis=1)


def backward_input_batch(spec: ModelSpec, params: ModelParams, samples: np.ndarray,
                         target_dists: np.ndarray) -> np.ndarray:
    """Gradients [B x T x V] of -sum_c target_c*log(p_c) with respect to each input."""
    samples = np.asarray(samples, dtype=np.float64)
    target_dists = np.asarray(target_dists, dtype=np.float64)
    _check_input_shape(spec, samples)
    if target_dists.shape != (samples.shape[0], spec.n_classes):
        raise ValidationError(
            f"target shape {target_dists.shape} does not match (B, {spec.n_classes})"
        )
    logits, caches = _forward_pass(spec, params, _to_batch_layout(samples), keep_cache=True)
    probs = _softmax(logits)
    # d/dz of -sum_c t_c log p_c: (sum_c t_c) * p - t
    d_logits = target_dists.sum(axis=1, keepdims=True) * probs - target_dists
    dx, _, _ = _backward_pass(spec, params, caches, d_logits, need_param_grads=False)
    return np.swapaxes(dx, 1, 2)


def backward_input(spec: ModelSpec, params: ModelParams, ts: TimeSeries,
                   target_dist: np.ndarray) -> np.ndarray:
    """Input gradient [T x V] of the weighted cross-entropy at one sample."""
    return backward_input_batch(spec, params, ts.samples[None], np.asarray(target_dist)[None])[0]


class ConvNetModel:
    """Spec+params bundle exposing the black-box interface explainers consume.

    Any object with a compatible ``forward`` (and optionally
    ``backward_input`` / ``forward_batch`` / ``backward_input_batch``) can
    stand in for this class.
    """

    def __init__(self, spec: ModelSpec, params: ModelParams):
        params.validate_for(spec)
        self.spec = spec
        self.params = params

    @property
    def n_classes(self) -> int:
        return self.spec.n_classes

    def forward(self, ts: TimeSeries) -> PredictionDistribution:
        return forward(self.spec, self.params, ts)

    def forward_batch(self, samples: np.ndarray) -> np.ndarray:
        return forward_batch(self.spec, self.params, samples)

    def backward_input(self, ts: TimeSeries, target_dist: np.ndarray) -> np.ndarray:
        return backward_input(self.spec, self.params, ts, target_dist)

    def backward_input_batch(self, samples: np.ndarray, target_dists: np.ndarray) -> np.ndarray:
        return backward_input_batch(self.spec, self.params, samples, target_dists)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LabeledDataset:
    """Sample stack [n x T x V] with integer labels [n]."""

    samples: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if samples.ndim != 3:
            raise ValidationError("samples must be [n x T x V]")
        if labels.shape != (samples.shape[0],):
            raise ValidationError("labels must be one integer per sample")
        if samples.shape[0] == 0:
            raise ValidationError("dataset is empty")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class TrainConfig:
    """Adam settings; dtype picks the training compute precision.

    float32 roughly halves the wall time of the memory-bound conv passes;
    the returned checkpoint is always float64 for downstream use.
    """

    max_epochs: int = 100
    learning_rate: float = 1e-4
    batch_size: int = 64
    patience: int = 10
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if min(self.max_epochs, self.batch_size, self.patience) < 1 or self.learning_rate <= 0:
            raise ValidationError(f"all training settings must be positive: {self}")
        if self.dtype not in ("float64", "float32"):
            raise ValidationError(f"dtype must be float64 or float32, got {self.dtype!r}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_accuracy: float


@dataclass
class TrainResult:
    params: ModelParams
    history: list[EpochRecord]
    best_epoch: int
    best_val_accuracy: float


class _Adam:
    def __init__(self, tensors: list[np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(t) for t in tensors]
        self.v = [np.zeros_like(t) for t in tensors]
        self.t = 0

    def step(self, tensors: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(tensors, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def evaluate_accuracy(spec: ModelSpec, params: ModelParams, data: LabeledDataset,
                      batch_size: int = 256) -> float:
    dtype = params.weights[0].dtype
    correct = 0
    for start in range(0, len(data), batch_size):
        xb = _to_batch_layout(data.samples[start : start + batch_size].astype(dtype, copy=False))
        logits, _ = _forward_pass(spec, params, xb, keep_cache=False)
        correct += int(np.sum(np.argmax(logits, axis=1) == data.labels[start : start + batch_size]))
    return correct / len(data)


def train(spec: ModelSpec, train_set: LabeledDataset, val_set: LabeledDataset,
          cfg: TrainConfig) -> TrainResult:
    """Adam-train with per-epoch validation; returns the best-accuracy checkpoint.

    Stops after ``cfg.patience`` epochs without a validation improvement.
    Raises NumericError if the loss diverges to NaN.
    """
    for ds in (train_set, val_set):
        if np.any(ds.labels < 0) or np.any(ds.labels >= spec.n_classes):
            raise ValidationError("labels out of range for the class count")
    dtype = np.dtype(cfg.dtype)
    params = init_params(spec, cfg.seed)
    params = ModelParams([w.astype(dtype) for w in params.weights],
                         [b.astype(dtype) for b in params.biases], cfg.seed)
    train_x = train_set.samples.astype(dtype)
    val_x = val_set.samples.astype(dtype)
    tensors = params.weights + params.biases
    opt = _Adam(tensors, cfg.learning_rate)
    shuffle_rng = np.random.default_rng(cfg.seed + 1)
    eye = np.eye(spec.n_classes, dtype=dtype)
    tiny = np.finfo(dtype).tiny

    history: list[EpochRecord] = []
    best_params = params.copy()
    best_acc = -1.0
    best_epoch = -1
    for epoch in range(cfg.max_epochs):
        order = shuffle_rng.permutation(len(train_set))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            xb = _to_batch_layout(train_x[batch])
            onehot = eye[train_set.labels[batch]]
            logits, caches = _forward_pass(spec, params, xb, keep_cache=True)
            probs = _softmax(logits)
            loss = -np.mean(np.log(np.clip(probs[np.arange(len(batch)), train_set.labels[batch]],
                                           tiny, None)))
            if not np.isfinite(loss):
                raise NumericError(
                    f"training loss diverged at epoch {epoch}, step {start // cfg.batch_size}: "
                    f"loss={loss}"
                )
            d_logits = (probs - onehot) / len(batch)
            _, d_w, d_b = _backward_pass(spec, params, caches, d_logits, need_param_grads=True)
            opt.step(tensors, d_w + d_b)
            losses.append(loss)
        val_acc = evaluate_accuracy(spec, params, LabeledDataset(val_x, val_set.labels))
        history.append(EpochRecord(epoch, float(np.mean(losses)), val_acc))
        if val_acc > best_acc:
            best_acc = val_acc
            best_epoch = epoch
            best_params = params.copy()
        elif epoch - best_epoch >= cfg.patience:
            break
    final = ModelParams([w.astype(np.float64) for w in best_params.weights],
                        [b.astype(np.float64) for b in best_params.biases], cfg.seed)
    return TrainResult(final, history, best_epoch, best_acc)
