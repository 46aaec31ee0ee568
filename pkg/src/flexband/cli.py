"""Command-line pipeline: generate data, train, explain, score, tune, demo.

Every command validates its configuration before any side effect, is
deterministic under a fixed seed, and keeps JSON outputs independent of the
worker count (wall-clock timings go to a separate sidecar, never into the
deterministic artifacts). Exit codes: 0 success, 2 config/validation error,
3 runtime/numeric failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import multiprocessing
import os
import sys
import time
from pathlib import Path

import numpy as np

from .errors import NumericError, ValidationError
from .explain import (
    DynamaskFreqConfig,
    Explanation,
    FlexConfig,
    FreqRiseConfig,
    dynamask_freq_explain,
    flextime_explain,
    freqrise_explain,
    gradient_explain,
)
from .filterbank import design_filterbank, stopband_comparison, frequency_response, response_grid
from .metrics import (
    RobustnessConfig,
    TuneGrid,
    evaluate_explanations,
    robustness_max_sensitivity,
    tune_hyperparameters,
)
from .model import (
    AvgPool1d,
    Conv1d,
    ConvNetModel,
    LabeledDataset,
    MaxPool1d,
    ModelParams,
    ModelSpec,
    Relu,
    TrainConfig,
    default_model_spec,
    evaluate_accuracy,
    train,
)
from .signal import FrequencyMask, TimeSeries, dft_mask_apply, forward_dft
from .svg import line_plot, saliency_figure
from .synthdata import SynthConfig, generate_dataset
from . import container

ENV_PREFIX = "FLEX_"
EXPLAIN_METHODS = ("flextime", "dynamask_freq", "freqrise", "saliency", "gxi", "ig")

DEFAULT_CONFIG = {
    "seed": 0,
    "synth": {
        "n_timesteps": 2000, "n_bins": 32, "salient_bins": [4, 11, 18, 26],
        "tones_per_bin": 20, "min_active_bins": 1, "max_active_bins": 10,
        "noise_std": 0.01, "voigt_sigma": None, "voigt_gamma": None,
        "n_train": 10000, "n_val": 2000, "n_test": 992,
    },
    "train": {"max_epochs": 100, "learning_rate": 1e-4, "batch_size": 64, "patience": 10,
              "dtype": "float64"},
    "flextime": {"n_bands": 32, "filter_length": 513, "ratio": 0.1,
                 "iterations": 1000, "step_size": 1.0},
    "dynamask": {"ratio": 0.1, "window_half_width": 10, "iterations": 1000, "step_size": 1.0},
    "freqrise": {"n_masks": 3000, "grid_size": 64, "keep_probability": 0.5},
    "gradient": {"ig_steps": 50},
    "robustness": {"n_perturbations": 10, "noise_std_fraction": 0.05},
    "tune": {"n_bands_options": [32], "filter_length_options": [513],
             "ratio_options": [0.05, 0.1, 0.2], "subsample_size": 100, "iterations": None},
}

_SCHEMA_TYPES = {
    "seed": int,
    "synth.n_timesteps": int, "synth.n_bins": int, "synth.salient_bins": list,
    "synth.tones_per_bin": int, "synth.min_active_bins": int, "synth.max_active_bins": int,
    "synth.noise_std": (int, float), "synth.voigt_sigma": (int, float, type(None)),
    "synth.voigt_gamma": (int, float, type(None)),
    "synth.n_train": int, "synth.n_val": int, "synth.n_test": int,
    "train.max_epochs": int, "train.learning_rate": (int, float),
    "train.batch_size": int, "train.patience": int, "train.dtype": str,
    "flextime.n_bands": int, "flextime.filter_length": int,
    "flextime.ratio": (int, float), "flextime.iterations": int,
    "flextime.step_size": (int, float),
    "dynamask.ratio": (int, float), "dynamask.window_half_width": int,
    "dynamask.iterations": int, "dynamask.step_size": (int, float),
    "freqrise.n_masks": int, "freqrise.grid_size": int,
    "freqrise.keep_probability": (int, float),
    "gradient.ig_steps": int,
    "robustness.n_perturbations": int, "robustness.noise_std_fraction": (int, float),
    "tune.n_bands_options": list, "tune.filter_length_options": list,
    "tune.ratio_options": list, "tune.subsample_size": int,
    "tune.iterations": (int, type(None)),
}


def load_config(path: str | None, seed_override: int | None = None) -> dict:
    """Merge a JSON config over the defaults, validating structure and types."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except OSError as e:
            raise ValidationError(f"cannot read config {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ValidationError(f"config {path} is not valid JSON: {e}") from e
        if not isinstance(user, dict):
            raise ValidationError(f"config {path} must be a JSON object")
        problems = []
        for section, value in user.items():
            if section == "seed":
                if not isinstance(value, int):
                    problems.append("seed: expected integer")
                else:
                    cfg["seed"] = value
                continue
            if section not in cfg or not isinstance(cfg[section], dict):
                problems.append(f"{section}: unknown section")
                continue
            if not isinstance(value, dict):
                problems.append(f"{section}: expected object")
                continue
            for key, field in value.items():
                dotted = f"{section}.{key}"
                if dotted not in _SCHEMA_TYPES:
                    problems.append(f"{dotted}: unknown setting")
                    continue
                expected = _SCHEMA_TYPES[dotted]
                if isinstance(field, bool) or not isinstance(field, expected):
                    problems.append(f"{dotted}: expected {expected}, got {type(field).__name__}")
                    continue
                cfg[section][key] = field
        if problems:
            raise ValidationError("config validation failed:\n  " + "\n  ".join(problems))
    if seed_override is not None:
        cfg["seed"] = seed_override
    return cfg


def _synth_config(cfg: dict) -> SynthConfig:
    s = cfg["synth"]
    return SynthConfig(
        n_timesteps=s["n_timesteps"], n_bins=s["n_bins"],
        salient_bins=tuple(s["salient_bins"]), tones_per_bin=s["tones_per_bin"],
        min_active_bins=s["min_active_bins"], max_active_bins=s["max_active_bins"],
        noise_std=s["noise_std"], voigt_sigma=s["voigt_sigma"], voigt_gamma=s["voigt_gamma"],
        seed=cfg["seed"],
    )


def _flex_config(cfg: dict) -> FlexConfig:
    f = cfg["flextime"]
    return FlexConfig(n_bands=f["n_bands"], filter_length=f["filter_length"],
                      ratio=f["ratio"], iterations=f["iterations"], step_size=f["step_size"])


def _dyna_config(cfg: dict) -> DynamaskFreqConfig:
    d = cfg["dynamask"]
    return DynamaskFreqConfig(ratio=d["ratio"], window_half_width=d["window_half_width"],
                              iterations=d["iterations"], step_size=d["step_size"])


def _sample_seed(seed: int, index: int) -> int:
    return (seed * 1_000_003 + index) % (2**63)


def dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, separators=(",", ":"),
                                     allow_nan=False) + "\n")


# ---------------------------------------------------------------------------
# Dataset and model persistence
# ---------------------------------------------------------------------------

def save_split(path, samples: np.ndarray, labels: np.ndarray, gt_freq: np.ndarray) -> None:
    container.write_tensors(path, {
        "samples": samples.astype(np.float32),
        "labels": labels.astype(np.uint8),
        "ground_truth_freq": gt_freq.astype(np.uint8),
    })


def load_split(path):
    tensors = container.read_tensors(path)
    for name in ("samples", "labels", "ground_truth_freq"):
        if name not in tensors:
            raise ValidationError(f"{path}: missing tensor {name!r}")
    return (tensors["samples"].astype(np.float64),
            tensors["labels"].astype(np.int64),
            tensors["ground_truth_freq"].astype(bool))


_LAYER_TAGS = {Conv1d: "conv1d", Relu: "relu", MaxPool1d: "maxpool1d", AvgPool1d: "avgpool1d"}


def _spec_to_doc(spec: ModelSpec) -> dict:
    layers = []
    for layer in spec.layers:
        doc = {"type": _LAYER_TAGS[type(layer)]}
        for f in ("kernel", "stride", "channels", "padding"):
            if hasattr(layer, f):
                doc[f] = getattr(layer, f)
        layers.append(doc)
    return {"layers": layers, "input_length": spec.input_length,
            "in_channels": spec.in_channels, "n_classes": spec.n_classes}


def _spec_from_doc(doc: dict) -> ModelSpec:
    layers = []
    for l in doc["layers"]:
        kind = l["type"]
        if kind == "conv1d":
            layers.append(Conv1d(kernel=l["kernel"], channels=l["channels"],
                                 stride=l["stride"], padding=l["padding"]))
        elif kind == "relu":
            layers.append(Relu())
        elif kind == "maxpool1d":
            layers.append(MaxPool1d(kernel=l["kernel"], stride=l["stride"]))
        elif kind == "avgpool1d":
            layers.append(AvgPool1d(kernel=l["kernel"], stride=l["stride"]))
        else:
            raise ValidationError(f"unknown layer type {kind!r} in model sidecar")
    return ModelSpec(layers=tuple(layers), input_length=doc["input_length"],
                     in_channels=doc["in_channels"], n_classes=doc["n_classes"])


def save_model(path, spec: ModelSpec, params: ModelParams) -> None:
    tensors = {}
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        tensors[f"conv{i}_weight"] = w.astype(np.float32)
        tensors[f"conv{i}_bias"] = b.astype(np.float32)
    container.write_tensors(path, tensors)
    dump_json(str(path) + ".json", {"spec": _spec_to_doc(spec), "seed": params.seed})


def load_model(path) -> ConvNetModel:
    sidecar = Path(str(path) + ".json")
    if not sidecar.exists():
        raise ValidationError(f"missing model sidecar {sidecar}")
    doc = json.loads(sidecar.read_text())
    spec = _spec_from_doc(doc["spec"])
    tensors = container.read_tensors(path)
    n_convs = len(spec.conv_layers())
    weights, biases = [], []
    for i in range(n_convs):
        try:
            weights.append(tensors[f"conv{i}_weight"].astype(np.float64))
            biases.append(tensors[f"conv{i}_bias"].astype(np.float64))
        except KeyError as e:
            raise ValidationError(f"{path}: missing tensor {e}") from e
    return ConvNetModel(spec, ModelParams(weights, biases, doc.get("seed", 0)))


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------

def cmd_gen(args, cfg: dict) -> int:
    out_dir = Path(args.out)
    synth = _synth_config(cfg)
    s = cfg["synth"]
    train_split, val_split, test_split = generate_dataset(
        synth, s["n_train"], s["n_val"], s["n_test"])
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, split in (("train", train_split), ("val", val_split), ("test", test_split)):
        save_split(out_dir / f"{name}.flxt", split.samples, split.labels,
                   split.ground_truth_freq)
    counts = {str(c): int((test_split.labels == c).sum()) for c in range(synth.n_classes)}
    dump_json(out_dir / "manifest.json", {
        "config": {**s, "seed": cfg["seed"]},
        "splits": {"train": len(train_split), "val": len(val_split), "test": len(test_split)},
        "test_class_counts": counts,
        "n_classes": synth.n_classes,
    })
    print(f"wrote {out_dir}/train.flxt ({len(train_split)}), val.flxt ({len(val_split)}), "
          f"test.flxt ({len(test_split)})")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(args, cfg: dict) -> int:
    out_path = Path(args.out)
    if out_path.exists() and not args.force:
        raise ValidationError(f"{out_path} exists; pass --force to overwrite")
    data_dir = Path(args.data)
    tr_x, tr_y, _ = load_split(data_dir / "train.flxt")
    va_x, va_y, _ = load_split(data_dir / "val.flxt")
    t = cfg["train"]
    manifest_path = data_dir / "manifest.json"
    if manifest_path.exists():
        n_classes = json.loads(manifest_path.read_text())["n_classes"]
    else:
        n_classes = int(max(tr_y.max(), va_y.max())) + 1
    spec = default_model_spec(input_length=tr_x.shape[1], n_classes=n_classes)
    result = train(spec, LabeledDataset(tr_x, tr_y), LabeledDataset(va_x, va_y),
                   TrainConfig(max_epochs=t["max_epochs"], learning_rate=t["learning_rate"],
                               batch_size=t["batch_size"], patience=t["patience"],
                               seed=cfg["seed"], dtype=t["dtype"]))
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_model(out_path, spec, result.params)
    log = {
        "epochs": [{"epoch": r.epoch, "train_loss": r.train_loss,
                    "val_accuracy": r.val_accuracy, "best": r.epoch == result.best_epoch}
                   for r in result.history],
        "best_epoch": result.best_epoch,
        "best_val_accuracy": result.best_val_accuracy,
    }
    dump_json(str(out_path) + ".train_log.json", log)
    print(f"trained {len(result.history)} epochs; best val accuracy "
          f"{result.best_val_accuracy:.4f} at epoch {result.best_epoch}; wrote {out_path}")
    return 0


# ---------------------------------------------------------------------------
# explain
# ---------------------------------------------------------------------------

_WORKER_STATE: dict = {}


def _explain_one(model: ConvNetModel, samples: np.ndarray, index: int, method: str,
                 cfg: dict, sample_rate: float) -> dict:
    ts = TimeSeries(samples[index], sample_rate=sample_rate)
    start = time.perf_counter()
    if method == "flextime":
        _, expl = flextime_explain(model, ts, cfg=_flex_config(cfg))
    elif method == "dynamask_freq":
        expl = dynamask_freq_explain(model, ts, cfg=_dyna_config(cfg))
    elif method == "freqrise":
        f = cfg["freqrise"]
        expl = freqrise_explain(model, ts, cfg=FreqRiseConfig(
            n_masks=f["n_masks"], grid_size=f["grid_size"],
            keep_probability=f["keep_probability"], seed=_sample_seed(cfg["seed"], index)))
    elif method in ("saliency", "gxi", "ig"):
        expl = gradient_explain(method, model, ts, ig_steps=cfg["gradient"]["ig_steps"])
    else:
        raise ValidationError(f"unknown method {method!r}; expected one of {EXPLAIN_METHODS}")
    duration = time.perf_counter() - start
    doc = {
        "method": expl.method,
        "sample_index": index,
        "target_class": expl.target_class,
        "sample_rate": expl.sample_rate,
        "config": expl.config,
        "saliency": [float(v) for v in expl.saliency],
        "trace": expl.trace,
    }
    return {"doc": doc, "duration_seconds": duration, "expl": expl}


def _worker_init(model_path, samples, method, cfg, sample_rate):
    _WORKER_STATE.update(model=load_model(model_path), samples=samples, method=method,
                         cfg=cfg, sample_rate=sample_rate)


def _worker_run(index: int):
    s = _WORKER_STATE
    out = _explain_one(s["model"], s["samples"], index, s["method"], s["cfg"],
                       s["sample_rate"])
    return index, out["doc"], out["duration_seconds"]


def cmd_explain(args, cfg: dict) -> int:
    if args.method not in EXPLAIN_METHODS:
        raise ValidationError(f"unknown method {args.method!r}; expected one of {EXPLAIN_METHODS}")
    out_dir = Path(args.out)
    model = load_model(args.model)
    samples, labels, _ = load_split(Path(args.data) / f"{args.split}.flxt")
    n = samples.shape[0] if args.limit is None else min(args.limit, samples.shape[0])
    sample_rate = 1.0
    out_dir.mkdir(parents=True, exist_ok=True)

    timings = {}
    results: list[tuple[int, dict]] = []
    if args.workers > 1:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(args.workers, initializer=_worker_init,
                      initargs=(args.model, samples, args.method, cfg, sample_rate)) as pool:
            for index, doc, duration in pool.map(_worker_run, range(n)):
                results.append((index, doc))
                timings[f"sample_{index:05d}"] = duration
    else:
        for index in range(n):
            out = _explain_one(model, samples, index, args.method, cfg, sample_rate)
            results.append((index, out["doc"]))
            timings[f"sample_{index:05d}"] = out["duration_seconds"]

    freqs = np.fft.rfftfreq(samples.shape[1], d=1.0 / sample_rate)
    for index, doc in sorted(results):
        stem = out_dir / f"explanation_{index:05d}"
        dump_json(f"{stem}.json", doc)
        spectrum = np.abs(np.fft.rfft(samples[index][:, 0]))
        svg = saliency_figure(freqs, np.asarray(doc["saliency"]), spectrum,
                              title=f"{args.method} explanation, sample {index}, "
                                    f"class {doc['target_class']}",
                              x_label="frequency (cycles/sample)")
        Path(f"{stem}.svg").write_text(svg)
    # Wall-clock sidecar: intentionally outside the deterministic artifact set.
    dump_json(out_dir / "timings.json", {"method": args.method, "durations": timings})
    print(f"wrote {len(results)} explanations to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def _load_explanations(expl_dir: Path):
    files = sorted(expl_dir.glob("explanation_*.json"))
    if not files:
        raise ValidationError(f"no explanation JSONs under {expl_dir}")
    docs = [json.loads(f.read_text()) for f in files]
    return docs


def _build_explain_fn(method: str, model, cfg: dict, seed: int):
    if method == "flextime":
        flex = _flex_config(cfg)
        return lambda ts: flextime_explain(model, ts, cfg=flex)[1]
    if method == "dynamask_freq":
        dyn = _dyna_config(cfg)
        return lambda ts: dynamask_freq_explain(model, ts, cfg=dyn)
    if method == "freqrise":
        f = cfg["freqrise"]
        rise = FreqRiseConfig(n_masks=f["n_masks"], grid_size=f["grid_size"],
                              keep_probability=f["keep_probability"], seed=seed)
        return lambda ts: freqrise_explain(model, ts, cfg=rise)
    if method in ("saliency", "gxi", "ig"):
        return lambda ts: gradient_explain(method, model, ts,
                                           ig_steps=cfg["gradient"]["ig_steps"])
    raise ValidationError(f"unknown method {method!r}")


def cmd_metrics(args, cfg: dict) -> int:
    if not (len(args.model) == len(args.data) == len(args.explanations)):
        raise ValidationError("--model, --data and --explanations must be given per split")
    split_reports = []
    for model_path, data_dir, expl_dir in zip(args.model, args.data, args.explanations):
        model = load_model(model_path)
        samples, labels, gt = load_split(Path(data_dir) / f"{args.split}.flxt")
        docs = _load_explanations(Path(expl_dir))
        idx = [d["sample_index"] for d in docs]
        expls = [Explanation(saliency=np.asarray(d["saliency"]), method=d["method"],
                             target_class=d["target_class"], sample_rate=d["sample_rate"],
                             config=d.get("config", {}))
                 for d in docs]
        report = evaluate_explanations(model, samples[idx], 1.0, expls,
                                       ground_truth=gt[idx])
        summary = report.summary()
        if args.robustness:
            r = cfg["robustness"]
            sens, missing = [], 0
            for i, d in zip(idx, docs):
                fn = _build_explain_fn(d["method"], model, cfg, _sample_seed(cfg["seed"], i))
                value = robustness_max_sensitivity(
                    fn, TimeSeries(samples[i], sample_rate=1.0),
                    RobustnessConfig(n_perturbations=r["n_perturbations"],
                                     noise_std_fraction=r["noise_std_fraction"],
                                     seed=_sample_seed(cfg["seed"], i)))
                if value is None:
                    missing += 1
                else:
                    sens.append(value)
            summary["max_sensitivity"] = float(np.mean(sens)) if sens else None
            summary["sensitivity_missing"] = missing
        split_reports.append(summary)

    metric_keys = [k for k in split_reports[0]
                   if isinstance(split_reports[0][k], (int, float)) and k != "n_samples"]
    aggregate = {
        "splits": split_reports,
        "mean": {k: float(np.mean([s[k] for s in split_reports])) for k in metric_keys},
        "std": {k: float(np.std([s[k] for s in split_reports])) for k in metric_keys},
    }
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_json(out_dir / "report.json", aggregate)
    header = ["method", "n_samples"] + [k for k in metric_keys] + [f"{k}_std" for k in metric_keys]
    row = [split_reports[0]["method"], str(sum(s["n_samples"] for s in split_reports))]
    row += [repr(aggregate["mean"][k]) for k in metric_keys]
    row += [repr(aggregate["std"][k]) for k in metric_keys]
    (out_dir / "report.csv").write_text(",".join(header) + "\n" + ",".join(row) + "\n")
    print(json.dumps(aggregate["mean"], sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# tune
# ---------------------------------------------------------------------------

def cmd_tune(args, cfg: dict) -> int:
    model = load_model(args.model)
    samples, _, _ = load_split(Path(args.data) / f"{args.split}.flxt")
    t = cfg["tune"]
    grid = TuneGrid(n_bands_options=tuple(t["n_bands_options"]),
                    filter_length_options=tuple(t["filter_length_options"]),
                    ratio_options=tuple(t["ratio_options"]),
                    subsample_size=t["subsample_size"], seed=cfg["seed"])
    best, results = tune_hyperparameters(args.method, model, samples, 1.0, grid,
                                         iterations=t["iterations"])
    if args.method == "flextime":
        chosen = {"method": "flextime", "L": best.n_bands, "N": best.filter_length,
                  "r": best.ratio}
    else:
        chosen = {"method": "dynamask_freq", "r": best.ratio}
    chosen["candidates"] = [
        {"config": {k: v for k, v in r["config"].__dict__.items()},
         "faithfulness": r["faithfulness"], "complexity": r["complexity"]}
        for r in results
    ]
    dump_json(args.out, chosen)
    print(json.dumps({k: v for k, v in chosen.items() if k != "candidates"}, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# demo-gibbs
# ---------------------------------------------------------------------------

def cmd_demo_gibbs(args, cfg: dict) -> int:
    try:
        low, high = (float(v) for v in args.band.split(","))
    except ValueError as e:
        raise ValidationError(f"--band must be 'low,high', got {args.band!r}") from e
    n_taps = args.taps
    sample_rate = args.sample_rate
    out_dir = Path(args.out)
    comparison = stopband_comparison(n_taps, (low, high), sample_rate)
    out_dir.mkdir(parents=True, exist_ok=True)

    # Demo signal: an in-band tone plus out-of-band interference and noise.
    rng = np.random.default_rng(cfg["seed"])
    t_len = max(4 * n_taps, 4096)
    t = np.arange(t_len)
    f_mid = (low + high) / 2
    x = (np.sin(2 * np.pi * f_mid * t / sample_rate)
         + 0.8 * np.sin(2 * np.pi * 0.45 * t + 1.0)
         + 0.5 * np.sin(2 * np.pi * 0.02 * t)
         + 0.1 * rng.standard_normal(t_len))
    ts = TimeSeries(x, sample_rate=sample_rate)

    from .filterbank import _windowed_sinc_lowpass, _truncated_ideal_bandpass, \
        _convolve_same_compensated
    fir_taps = (_windowed_sinc_lowpass(high, n_taps, sample_rate)
                - _windowed_sinc_lowpass(low, n_taps, sample_rate))
    fir_out = _convolve_same_compensated(ts.samples, fir_taps)[:, 0]
    spec = forward_dft(ts)
    keep = (spec.frequencies >= low) & (spec.frequencies <= high)
    dft_out = dft_mask_apply(spec, FrequencyMask(keep.astype(float))).samples[:, 0]

    window = slice(0, min(t_len, 1500))
    time_svg = line_plot(
        [(t[window], x[window], "original"),
         (t[window], fir_out[window], "windowed FIR bandpass"),
         (t[window], dft_out[window], "DFT bin zeroing")],
        title="Bandpass filtering: windowed FIR vs DFT bin zeroing",
        x_label="sample", y_label="amplitude",
    )
    (out_dir / "time_domain.svg").write_text(time_svg)

    freqs = response_grid(sample_rate, 4096)
    ideal_taps = _truncated_ideal_bandpass(low, high, n_taps, sample_rate)
    eps = 1e-12
    fir_db = 20 * np.log10(np.abs(frequency_response(fir_taps, freqs, sample_rate)) + eps)
    ideal_db = 20 * np.log10(np.abs(frequency_response(ideal_taps, freqs, sample_rate)) + eps)
    resp_svg = line_plot(
        [(freqs, np.clip(fir_db, -120, 10), "windowed FIR"),
         (freqs, np.clip(ideal_db, -120, 10), "truncated ideal (DFT zeroing)")],
        title="Magnitude response: ripple from zeroing frequency bins",
        x_label="frequency", y_label="dB", y_range=(-120, 10),
    )
    (out_dir / "response.svg").write_text(resp_svg)

    report = {
        "band": [low, high],
        "n_taps": n_taps,
        "sample_rate": sample_rate,
        "fir_attenuation_db": comparison.fir_attenuation_db,
        "dft_zeroing_attenuation_db": comparison.dft_zeroing_attenuation_db,
    }
    dump_json(out_dir / "attenuation.json", report)
    print(json.dumps(report, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _env_default(name: str, fallback, cast):
    raw = os.environ.get(ENV_PREFIX + name)
    if raw is None:
        return fallback
    try:
        return cast(raw)
    except ValueError:
        raise ValidationError(f"environment variable {ENV_PREFIX}{name}={raw!r} is invalid")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flexband",
        description="Frequency-band explanations for time-series classifiers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="JSON config path")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--workers", type=int, default=None, help="worker process count")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")

    p = sub.add_parser("gen", help="generate the synthetic dataset splits")
    p.add_argument("--out", required=True)
    common(p)

    p = sub.add_parser("train", help="train the classifier on a generated dataset")
    p.add_argument("--data", required=True, help="dataset directory from gen")
    p.add_argument("--out", required=True, help="model file to write")
    common(p)

    p = sub.add_parser("explain", help="explain samples of a split")
    p.add_argument("--method", required=True, choices=EXPLAIN_METHODS)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out", required=True)
    p.add_argument("--limit", type=int, default=None)
    common(p)

    p = sub.add_parser("metrics", help="score explanations against a split")
    p.add_argument("--model", action="append", required=True)
    p.add_argument("--data", action="append", required=True)
    p.add_argument("--explanations", action="append", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out", required=True)
    p.add_argument("--robustness", action="store_true",
                   help="also compute max-sensitivity (re-runs the explainer)")
    common(p)

    p = sub.add_parser("tune", help="grid-search explainer hyperparameters")
    p.add_argument("--method", required=True, choices=("flextime", "dynamask_freq"))
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="val", choices=("train", "val", "test"))
    p.add_argument("--out", required=True)
    common(p)

    p = sub.add_parser("demo-gibbs", help="windowed FIR vs DFT-zeroing comparison")
    p.add_argument("--band", required=True, help="passband as 'low,high'")
    p.add_argument("--taps", type=int, default=1025)
    p.add_argument("--sample-rate", type=float, default=1.0)
    p.add_argument("--out", required=True)
    common(p)
    return parser


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "explain": cmd_explain,
    "metrics": cmd_metrics,
    "tune": cmd_tune,
    "demo-gibbs": cmd_demo_gibbs,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.config is None:
            args.config = _env_default("CONFIG", None, str)
        if args.seed is None:
            args.seed = _env_default("SEED", None, int)
        if args.workers is None:
            args.workers = _env_default("WORKERS", 1, int)
        if not args.force:
            args.force = bool(_env_default("FORCE", 0, int))
        cfg = load_config(args.config, seed_override=args.seed)
        return COMMANDS[args.command](args, cfg)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
