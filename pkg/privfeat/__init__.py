from . import __meta__

__version__ = __meta__.version

from .accountant import (
    DEFAULT_ORDERS,
    Calibration,
    RdpCurve,
    SgdPrivacySpec,
    calibrate,
    calibrate_sigma,
    gaussian_epsilon,
    gaussian_sigma,
    rdp_to_epsilon,
    sgd_epsilon,
    sgd_rdp_curve,
    sgm_rdp,
)
from .base import (
    ArrayRecord,
    FeatureMatrix,
    PrivacyBudget,
    SeededRng,
    ensure_rng,
)
from .dre import (
    Discriminator,
    DreConfig,
    WeightedPublicModel,
    compute_weights,
    density_ratio,
    density_ratios,
    sample_dre,
    superclass_weight,
    train_dp_dre,
    uniform_public_model,
)
from .enums import (
    FileFormat,
    GpStyle,
    LossKind,
    Method,
    MetricName,
    OutputActivation,
    ReportFormat,
)
from .exceptions import (
    CalibrationError,
    ConfigurationError,
    ContractViolation,
    DimensionMismatch,
    FeatureFormatError,
    FeatureIOError,
    MissingLabels,
    NonFiniteFeatures,
    NumericalError,
    OracleError,
    PrivacyDomainError,
    PrivFeatError,
    TrainingDiverged,
)
from .features import load_features, project_to_unit_ball, save_features
from .gan import (
    GanConfig,
    LatentGan,
    init_latent_gan,
    pretrain_public_gan,
    sample_gan,
    train_dp_latent_gan,
)
from .harness import (
    ExperimentConfig,
    PrivacyConfig,
    ResultRow,
    ResultTable,
    RunConfig,
    emit_report,
    emit_reports,
    load_config,
    parse_config,
    run_experiment,
)
from .metrics import (
    KMeansResult,
    MetricsConfig,
    MetricsReport,
    NdbBin,
    evaluate,
    fid,
    kmeans,
    ndb,
    prd_precision_recall,
)
from .mge import GaussianModel, MgeConfig, fit_dp_mge, mge_statistics, sample_mge
from .nn import (
    AdamState,
    DpSgdConfig,
    LossSpec,
    Mlp,
    MlpCheckpoint,
    adam_update,
    dp_step,
    forward,
    forward_batch,
    grad_wrt_input,
    per_example_grad,
    per_example_grads,
)
from .oracle import OracleConfig, gen_synthetic, split_private
from .serializer import dict_decode, dict_encode, json_decode, json_encode, load_record, save_record
