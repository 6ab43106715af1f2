"""Unsupervised clothing-change person re-identification on synthetic worlds.

The package trains a small encoder without any identity labels: per-epoch
density clustering provides pseudo labels, dual momentum memory banks
provide contrastive candidates, and clothing-swapped synthetic samples tie
differently-dressed views of one person together.
"""

from .autodiff import Node, Tape
from .clustering import NOISE, PseudoLabeling, cluster_members, dbscan
from .contrast import (
    LossBreakdown,
    SyncGroup,
    TrainBatch,
    info_nce,
    info_nce_instances,
    nce_terms,
    pk_sample,
    self_identity_loss,
    total_loss,
)
from .encoder import (
    EncoderParams,
    LrSchedule,
    OptimizerState,
    adam_step,
    encode,
    encode_batch,
    init_encoder,
    init_optimizer,
    load_checkpoint,
    save_checkpoint,
    warmup_lr,
)
from .errors import (
    CheckpointFormatError,
    ConfigurationError,
    DatasetFormatError,
    DimensionMismatchError,
    EmptyBatchError,
    EmptyClusterError,
    EmptyInputError,
    EmptyTemplateBankError,
    InvalidConfigError,
    InvalidEpsError,
    InvalidTemperatureError,
    MalformedGroupError,
    NonFiniteGradientError,
    NonFiniteLossError,
    NoValidMatchError,
    NotScalarRootError,
    NumericRuntimeError,
    ReIDError,
    ShapeMismatchError,
    SupportViolationError,
    SyntheticInputError,
    TooFewClustersError,
    UnknownClusterError,
    WrongBatchSizeError,
    ZeroVectorError,
)
from .evaluation import (
    EvalProtocol,
    EvalRecord,
    EvalResult,
    build_protocol_split,
    cmc,
    distance_matrix,
    evaluate,
    match_and_junk_flags,
    mean_ap,
    write_ap_csv,
    write_metrics_report,
)
from .memory import (
    DualMemory,
    InstanceMemory,
    hardest_index,
    init_memory,
    update_average,
    update_hard,
)
from .numerics import (
    cosine_distance,
    kl_divergence,
    l2_normalize,
    normalize_rows,
    softmax,
)
from .pipeline import (
    EpochReport,
    PipelineConfig,
    TrainingResult,
    eval_records,
    parse_config_file,
    run_epoch,
    run_training,
    write_reports_csv,
)
from .world import (
    Sample,
    StyleTemplate,
    World,
    WorldConfig,
    export_csv,
    generate_sync,
    generate_world,
    make_style_templates,
    read_dataset,
    write_dataset,
)

__version__ = "0.1.0"
