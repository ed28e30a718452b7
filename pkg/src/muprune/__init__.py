"""muprune: train small dense networks, estimate per-weight uncertainty,
and prune by magnitude scaled against that uncertainty.

The criterion is tau = |w| / (lambda + sigma): lambda large recovers
plain magnitude pruning, lambda zero recovers the Wald statistic, and
the default in between keeps weights that are large relative to both
their layer and their own wobble.
"""

__version__ = "0.1.0"

from .core import derive_rng, derive_seed, make_rng, matmul, reduce_std, sample_minibatch
from .data import (
    Dataset,
    SplitSpec,
    balanced_subset,
    bootstrap_resample,
    dataset_to_csv,
    load_idx,
    load_mnist,
    synth_blobs,
    synth_regression,
    train_validation_split,
    write_idx,
)
from .errors import (
    AlignmentError,
    BootstrapReplicaError,
    HookError,
    IdxParseError,
    InsufficientIterationsError,
    NonFiniteActivationError,
    PruneRoundError,
    ShapeMismatchError,
    TrainingDivergedError,
    UnsupportedModelError,
)
from .experiment import (
    ExperimentConfig,
    ExperimentResult,
    ResultRow,
    SummaryRow,
    emit_outputs,
    read_results_csv,
    run_experiment,
    summarize,
)
from .model import (
    ORDERING_VERSION,
    DenseLayer,
    MlpModel,
    flat_layer_ids,
    get_flat_params,
    layer_slices,
    load_checkpoint,
    loss_and_grad,
    per_sample_score,
    prunable_partition,
    save_checkpoint,
    set_flat_params,
)
from .pruning import (
    CriterionConfig,
    PruneMask,
    ScoreVector,
    apply_mask,
    iterative_prune,
    mu_score,
    resolve_lambda,
    score,
    select_prune_set,
)
from .train import (
    EvalResult,
    IterationEvent,
    OptimizerState,
    TrainConfig,
    TrainReport,
    evaluate,
    rmsprop_step,
    train,
)
from .uncertainty import (
    MlCovariance,
    UncertaintyMap,
    WeightTrace,
    analytic_ml_covariance,
    bootstrap_sigma,
    covariance_to_uncertainty,
    mean_score_norm,
    normal_cdf,
    pseudo_bootstrap_sigma,
    train_with_trace,
    wald_p_value,
    wald_statistic,
)
