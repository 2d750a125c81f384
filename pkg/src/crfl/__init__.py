"""Deterministic federated-learning simulator with server-side clipping and
Gaussian perturbation, single-round model-replacement backdoor injection, and
per-sample robustness certification via parameter smoothing."""

from .analysis import (
    AttackerProfile,
    ClosenessRecord,
    ClosenessTrace,
    RadiusContext,
    StudyRow,
    certified_radius,
    closeness_kl_bound,
    contraction_coefficient,
    epsilon_threshold,
    kl_gaussian_shared_sigma,
    radius_detail,
    radius_vs_rounds_study,
    run_closeness_experiment,
)
from .attack import (
    AttackConfig,
    AttackDirective,
    PoisonPlan,
    attack_success_rate,
    build_poison_plan,
    compose_poisoned_batch,
    scale_update,
)
from .certify import (
    CertificationResult,
    SmoothedModelEnsemble,
    VoteCounts,
    build_ensemble,
    certified_accuracy,
    certified_rate,
    certify_sample,
    certify_set,
    critical_radius,
    hoeffding_bounds,
    vote_counts,
)
from .data import (
    ClientDataset,
    LabeledSample,
    SampleSet,
    TriggerPattern,
    apply_trigger,
    default_mnist_trigger,
    generate_synthetic,
    load_mnist_idx,
    partition_iid,
)
from .engine import (
    AffineSchedule,
    FederationConfig,
    RoundTrace,
    TrainingResult,
    aggregate_fedavg,
    aggregate_rfa,
    clip_params,
    local_sgd,
    perturb_params,
    run_training,
)
from .errors import (
    ConfigurationError,
    DataConsistencyError,
    DataFormatError,
    DivergenceError,
)
from .model import (
    Batch,
    ModelParams,
    accuracy,
    cross_entropy_loss,
    data_lipschitz_constant,
    gradient,
    load_params,
    param_l2_norm,
    predict,
    save_params,
    softmax_probs,
)
from .numerics import std_normal_cdf

__version__ = "0.1.0"
