"""deeprink: deterministic 3D-CNN multi-label action recognition on video windows.

A small numpy-only library covering the whole loop: synthetic labeled video
generation, sliding-window preprocessing, class-imbalance handling (log
class weights, threshold softening, oversampling), two training strategies
(single k-output network vs an ensemble of per-class binary networks), and
per-class F1 evaluation.
"""

from .dataio import (
    DatasetManifest,
    FrameSequence,
    ManifestEntry,
    SynthConfig,
    load_sequences,
    read_labels,
    read_manifest,
    read_video,
    synth_dataset,
    write_labels,
    write_manifest,
    write_video,
)
from .errors import (
    ArchitectureError,
    ConfigError,
    DeeprinkError,
    FormatError,
    ShapeError,
    TrainingError,
)
from .imbalance import (
    CalibrationState,
    LabelStats,
    class_weights,
    label_stats,
    max_confidences,
    oversample_binary,
    soften_thresholds,
)
from .kernels import (
    conv3d,
    conv3d_grad,
    maxpool3d,
    maxpool3d_grad,
    naive_conv3d,
    naive_maxpool3d,
)
from .metrics import (
    MetricsReport,
    confusion_counts,
    evaluate_predictions,
    macro_f1,
    prf1,
    render_report,
)
from .nn import (
    ArchitectureSpec,
    Hyperparameters,
    Model,
    arch_from_text,
    arch_to_text,
    build_model,
    default_architecture,
    forward,
    grad_check,
    param_count,
    sgd_step,
    weighted_bce,
)
from .pipeline import (
    Normalizer,
    WindowSample,
    downscale,
    fit_normalizer,
    majority_label,
    normalize,
    preprocess_sequences,
    split_samples,
    window_starts,
    windowize,
)
from .strategy import (
    TrainedSystem,
    evaluate,
    load_system,
    predict,
    save_system,
    train_ensemble,
    train_single,
)

__version__ = "0.1.0"
