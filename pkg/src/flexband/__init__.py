"""Frequency-band explanations for time-series classifiers.

The package splits a signal into FIR filterbank bands and learns which bands
a black-box classifier actually relies on, alongside per-bin DFT masking,
randomized-sampling and gradient baselines, plus the metrics to score them.
"""

from ._alloc import tune_allocator

tune_allocator()

from .errors import NumericError, UnsupportedMethodError, ValidationError
from .explain import (
    DynamaskFreqConfig,
    Explanation,
    FlexConfig,
    FreqRiseConfig,
    dynamask_freq_explain,
    flextime_explain,
    flextime_explain_batch,
    freqrise_explain,
    gradient_explain,
)
from .filterbank import (
    BandDecomposition,
    BandMask,
    Filterbank,
    FirFilter,
    collected_response,
    decompose,
    design_filterbank,
    design_lowpass,
    masked_reconstruct,
    stopband_comparison,
)
from .metrics import (
    LocalizationScores,
    RobustnessConfig,
    TuneGrid,
    complexity,
    faithfulness,
    localization,
    robustness_max_sensitivity,
    tune_hyperparameters,
)
from .model import (
    ConvNetModel,
    LabeledDataset,
    ModelParams,
    ModelSpec,
    PredictionDistribution,
    TrainConfig,
    default_model_spec,
    forward,
    predict_batch,
    train,
)
from .signal import (
    FrequencyMask,
    PerturbationSpectrum,
    Spectrum,
    TimeSeries,
    dft_mask_apply,
    forward_dft,
    inverse_dft,
    moving_average_perturbation,
)
from .synthdata import SynthConfig, SynthSample, generate_dataset, generate_sample

__version__ = "0.1.0"
