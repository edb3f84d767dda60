"""Explain time-series classifiers in time, frequency, and time-frequency domains.

The package propagates local attribution scores (LRP, sensitivity, gradient
times input, integrated gradients) through virtual inverse-Fourier input
layers, so a model trained on raw waveforms can be inspected on the spectral
representation of its input without retraining and without changing its
decision function.
"""

__version__ = "0.1.0"

from .attribution import (  # noqa: F401
    AugmentedNetwork,
    LrpEpsilon,
    LrpGamma,
    LrpZero,
    RelevanceMap,
    ZPlus,
    augment_with_inverse_fourier,
    gradient_x_input,
    integrated_gradients,
    lrp,
    sensitivity,
)
from .evalharness import (  # noqa: F401
    BenchmarkConfig,
    EvalReport,
    FlipCurve,
    complexity,
    feature_flip,
    flip_auc,
    localization,
    run_benchmark,
)
from .inspection import dft_lrp, fold_symmetric, stdft_lrp  # noqa: F401
from .net import Network, TrainConfig, build_mlp, load_network, save_network, train  # noqa: F401
from .spectral import (  # noqa: F401
    Signal,
    Spectrogram,
    Spectrum,
    WindowSpec,
    dft,
    idft,
    istdft_cola,
    istdft_wola,
    stdft,
    window_weights,
)
from .synth import Dataset, SynthConfig, generate, preset  # noqa: F401
