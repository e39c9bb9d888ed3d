"""awbkit: sensor-independent illuminant estimation for linear raw-RGB images.

An image-specific 3x3 matrix maps camera raw-RGB into a learned working
space, a second network estimates the illuminant there, and the estimate is
mapped back through the matrix inverse — so one trained model serves unseen
camera sensors. Classical estimators (Gray-World family), a differentiable
log-chroma histogram feature, a tiny reverse-mode autodiff engine, dataset
tooling, and a train/eval CLI round out the toolkit.
"""

from .autodiff import DEFAULT_DTYPE, Tensor, gradcheck, no_grad
from .baselines import METHODS, BaselineConfig, baseline_suite, estimate_baseline
from .dataio import (
    DatasetManifest,
    FoldPlan,
    ManifestEntry,
    RawImage,
    area_resize,
    load_image,
    load_image_file,
    load_manifest,
    make_folds,
    read_rawf,
    save_manifest,
    scene_key,
    split_by_cameras,
    synth_generate,
    write_rawf,
)
from .exceptions import (
    AwbError,
    CheckpointCorruptError,
    CheckpointError,
    CheckpointFormatError,
    CheckpointVersionError,
    ImageFormatError,
    InvalidArgumentError,
    InvalidStateError,
    ManifestError,
    NumericDomainError,
    SingularMatrixError,
    TrainingAbort,
)
from .histogram import HistogramBlock, HistogramConfig, compute_histogram
from .metrics import (
    ErrorStats,
    aggregate,
    angular_loss,
    recovery_angular_error,
    reproduction_angular_error,
)
from .networks import (
    IlluminantEstimate,
    IlluminantEstimator,
    ModelConfig,
    build_mapping_matrix,
    default_config,
    desk_config,
    forward,
    invert_with_jitter,
    predict_batch,
    toy_config,
)
from .optim import Parameter, adam_step, xavier_init
from .report import (
    EvalReport,
    evaluate_manifest,
    evaluate_results,
    write_per_image_csv,
    write_stats_csv,
)
from .training import (
    TrainConfig,
    Trainer,
    load_checkpoint,
    resume_trainer,
    save_checkpoint,
    trainer_from_manifest,
)

__version__ = "0.1.0"
