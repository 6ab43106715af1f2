"""The training loop: cluster, remember, contrast, repeat.

Each epoch re-encodes the train split, clusters the features into pseudo
labels, and seeds both memory banks from one random member per cluster.
Mini-batches are then drawn cluster-balanced; every sampled original is
expanded with clothing-swapped synthetics, the combined loss is
backpropagated through the encoder, and the banks are refreshed with
momentum.  Everything is driven by two named generators (init and
sampling), so runs are reproducible bit for bit.
"""

import dataclasses
import math
import time
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape
from .clustering import NOISE, dbscan
from .contrast import (
    SyncGroup,
    TrainBatch,
    info_nce,
    info_nce_instances,
    pk_sample,
    self_identity_loss,
    total_loss,
)
from .encoder import (
    LrSchedule,
    adam_step,
    encode_batch,
    init_encoder,
    init_optimizer,
    save_checkpoint,
    warmup_lr,
)
from .errors import (
    EmptyInputError,
    InvalidConfigError,
    NonFiniteLossError,
    TooFewClustersError,
)
from .evaluation import EvalRecord
from .memory import (
    InstanceMemory,
    init_memory,
    update_average,
    update_hard,
)
from .world import make_style_templates, generate_sync

SAMPLING_MODES = ("both", "average", "hardest", "none")
SELF_LOSS_DENOMINATORS = ("pairs", "grouped")


@dataclass(frozen=True)
class PipelineConfig:
    """Every knob of one training run.

    sampling_mode picks the contrastive candidates: "both" uses the average
    and hardest banks together, "average"/"hardest" one bank alone, "none"
    replaces the banks with per-instance slots.  use_self_identity requires
    use_augmentation, since the consistency loss compares a sample against
    its own synthetics.  Each sampled original draws synthetics_per_sample
    distinct styles at random from a bank of template_bank_size; a bank
    larger than one batch's worth keeps the swapped clothing decorrelated
    across groups.
    """

    clusters_per_batch: int = 8
    instances_per_cluster: int = 4
    synthetics_per_sample: int = 4
    template_bank_size: int = 16
    momentum: float = 0.3
    alpha: float = 0.3
    temperature: float = 0.05
    cluster_eps: float = 0.4
    cluster_min_samples: int = 4
    max_epochs: int = 120
    warmup_epochs: int = 20
    base_lr: float = 0.00035
    weight_decay: float = 0.0005
    use_augmentation: bool = True
    use_self_identity: bool = True
    sampling_mode: str = "both"
    self_loss_denominator: str = "pairs"
    hidden_widths: tuple = (64,)
    feature_dim: int = 64
    init_seed: int = 0
    sampling_seed: int = 0

    def __post_init__(self):
        for name in (
            "clusters_per_batch",
            "instances_per_cluster",
            "max_epochs",
            "warmup_epochs",
            "feature_dim",
        ):
            if int(getattr(self, name)) < 1:
                raise InvalidConfigError(
                    f"{name} must be >= 1, got {getattr(self, name)}"
                )
        if self.feature_dim < 2:
            raise InvalidConfigError("feature_dim must be >= 2")
        if self.synthetics_per_sample < 0:
            raise InvalidConfigError("synthetics_per_sample must be >= 0")
        if self.use_augmentation and self.synthetics_per_sample < 1:
            raise InvalidConfigError(
                "use_augmentation requires synthetics_per_sample >= 1"
            )
        if self.use_augmentation and self.template_bank_size < self.synthetics_per_sample:
            raise InvalidConfigError(
                "template_bank_size must be >= synthetics_per_sample: each "
                "sample draws its synthetics from distinct templates"
            )
        if self.use_self_identity and not self.use_augmentation:
            raise InvalidConfigError(
                "use_self_identity requires use_augmentation: the consistency "
                "loss needs synthetic groups of at least two features"
            )
        for name in ("momentum", "alpha"):
            value = float(getattr(self, name))
            if not np.isfinite(value) or not 0.0 <= value <= 1.0:
                raise InvalidConfigError(f"{name} must lie in [0, 1], got {value}")
        for name in ("temperature", "cluster_eps", "base_lr"):
            value = float(getattr(self, name))
            if not np.isfinite(value) or value <= 0.0:
                raise InvalidConfigError(f"{name} must be positive, got {value}")
        if not np.isfinite(self.weight_decay) or self.weight_decay < 0.0:
            raise InvalidConfigError("weight_decay must be non-negative")
        if self.cluster_min_samples < 1:
            raise InvalidConfigError("cluster_min_samples must be >= 1")
        if self.sampling_mode not in SAMPLING_MODES:
            raise InvalidConfigError(
                f"sampling_mode must be one of {SAMPLING_MODES}, "
                f"got {self.sampling_mode!r}"
            )
        if self.self_loss_denominator not in SELF_LOSS_DENOMINATORS:
            raise InvalidConfigError(
                f"self_loss_denominator must be one of {SELF_LOSS_DENOMINATORS}"
            )
        if any(int(w) < 1 for w in self.hidden_widths):
            raise InvalidConfigError("hidden widths must all be >= 1")

    def encoder_widths(self, input_dim):
        return [int(input_dim), *map(int, self.hidden_widths), int(self.feature_dim)]


def _coerce(name, text, default):
    if isinstance(default, bool):
        lowered = text.lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise InvalidConfigError(f"{name}: expected a boolean, got {text!r}")
    if isinstance(default, int):
        try:
            return int(text)
        except ValueError as err:
            raise InvalidConfigError(f"{name}: expected an integer, got {text!r}") from err
    if isinstance(default, float):
        try:
            return float(text)
        except ValueError as err:
            raise InvalidConfigError(f"{name}: expected a float, got {text!r}") from err
    if isinstance(default, tuple):
        parts = [p.strip() for p in text.split(",") if p.strip()]
        try:
            return tuple(int(p) for p in parts)
        except ValueError as err:
            raise InvalidConfigError(
                f"{name}: expected comma-separated integers, got {text!r}"
            ) from err
    return text


def parse_config_file(path):
    """Read key=value lines (# comments allowed) into a PipelineConfig."""
    defaults = PipelineConfig()
    known = {f.name: getattr(defaults, f.name) for f in dataclasses.fields(PipelineConfig)}
    overrides = {}
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw_line in enumerate(handle, start=1):
            line = raw_line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidConfigError(f"line {lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in known:
                raise InvalidConfigError(f"line {lineno}: unknown option {key!r}")
            if key in overrides:
                raise InvalidConfigError(f"line {lineno}: duplicate option {key!r}")
            overrides[key] = _coerce(key, value, known[key])
    return PipelineConfig(**overrides)


@dataclass(frozen=True)
class EpochReport:
    """Summary numbers of one epoch."""

    epoch: int
    num_clusters: int
    num_noise: int
    mean_contrastive: float
    mean_consistency: float
    learning_rate: float
    wall_time: float


REPORT_COLUMNS = (
    "epoch",
    "num_clusters",
    "num_noise",
    "mean_contrastive",
    "mean_consistency",
    "learning_rate",
    "wall_time",
)


def write_reports_csv(path, reports):
    """Write epoch reports as CSV with full-precision floats."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(",".join(REPORT_COLUMNS) + "\n")
        for report in reports:
            handle.write(
                f"{report.epoch},{report.num_clusters},{report.num_noise},"
                f"{report.mean_contrastive:.17g},{report.mean_consistency:.17g},"
                f"{report.learning_rate:.17g},{report.wall_time:.17g}\n"
            )


@dataclass
class TrainingResult:
    """Everything a finished run leaves behind."""

    params: object
    optimizer: object
    reports: list
    templates: list
    config: PipelineConfig


def _build_memory(config, features, labeling, rng_init):
    if config.sampling_mode == "none":
        keep = labeling.labels != NOISE
        return InstanceMemory(
            features=features[keep],
            labels=labeling.labels[keep],
            momentum=config.momentum,
        )
    cluster_features = [
        features[labeling.members(c)] for c in range(labeling.num_clusters)
    ]
    return init_memory(cluster_features, config.momentum, rng_init)


def _train_iteration(
    params, optimizer, world, config, templates, memory, labeling,
    train_samples, slot_of_train_index, epoch, iteration, lr, rng_sampling,
):
    selection = pk_sample(
        labeling,
        config.clusters_per_batch,
        config.instances_per_cluster,
        rng_sampling,
    )
    groups = []
    originals = []
    for cluster_id, indices in selection:
        for index in indices:
            original = train_samples[int(index)]
            if config.use_augmentation:
                picks = rng_sampling.choice(
                    len(templates), size=config.synthetics_per_sample, replace=False
                )
                synthetics = generate_sync(
                    world, original, [templates[int(p)] for p in picks]
                )
            else:
                synthetics = []
            groups.append(SyncGroup(original, synthetics, cluster_id))
            originals.append(int(index))
    batch = TrainBatch(groups=groups)

    tape = Tape()
    batch.feature_node = encode_batch(params, batch.stacked_raw(), tape=tape)
    if config.sampling_mode == "none":
        own_slots = slot_of_train_index[np.asarray(originals)]
        contrastive = info_nce_instances(
            batch, memory, config.temperature, tape, own_slots
        )
    else:
        contrastive = info_nce(
            batch, memory, config.temperature, tape, mode=config.sampling_mode
        )
    if config.use_self_identity:
        consistency = self_identity_loss(
            batch, tape, denominator=config.self_loss_denominator
        )
        loss_node = tape.add(contrastive, tape.scale(consistency, config.alpha))
        consistency_value = float(consistency.value)
        alpha = config.alpha
    else:
        loss_node = contrastive
        consistency_value = 0.0
        alpha = 0.0
    try:
        breakdown = total_loss(float(contrastive.value), consistency_value, alpha)
    except NonFiniteLossError as err:
        raise NonFiniteLossError(
            f"epoch {epoch}, iteration {iteration}: {err}"
        ) from err

    tape.backward(loss_node)
    gradients = [tape.gradient(leaf) for leaf in tape.leaves]
    adam_step(optimizer, params, gradients, lr)

    feature_rows = batch.feature_node.value
    group_size = batch.group_size
    if config.sampling_mode == "none":
        for position, train_index in enumerate(originals):
            slot = slot_of_train_index[train_index]
            memory.update(int(slot), feature_rows[position * group_size])
    else:
        synth_count = config.synthetics_per_sample if config.use_augmentation else 0
        rows_of_cluster = {}
        for position, group in enumerate(batch.groups):
            start = position * group_size
            rows_of_cluster.setdefault(group.pseudo_label, []).append(
                feature_rows[start : start + group_size]
            )
        for cluster_id in sorted(rows_of_cluster):
            stacked = np.vstack(rows_of_cluster[cluster_id])
            update_hard(memory, cluster_id, stacked)
            update_average(
                memory,
                cluster_id,
                stacked,
                synth_count=synth_count,
                k_count=config.instances_per_cluster,
            )
    return breakdown


def run_epoch(params, optimizer, world, config, templates, epoch, rng_init, rng_sampling):
    """Run one full epoch; returns its EpochReport.

    Mutates params and optimizer in place and advances both generators.
    """
    start = time.perf_counter()
    train_samples = [world.samples[i] for i in world.train_indices]
    if not train_samples:
        raise EmptyInputError("world has no train samples")
    raws = np.stack([s.raw for s in train_samples])
    features = encode_batch(params, raws)
    labeling = dbscan(features, config.cluster_eps, config.cluster_min_samples)
    if labeling.num_clusters < config.clusters_per_batch:
        raise TooFewClustersError(
            f"epoch {epoch}: {labeling.num_clusters} clusters found, "
            f"need {config.clusters_per_batch}; loosen cluster_eps or lower "
            f"clusters_per_batch"
        )
    memory = _build_memory(config, features, labeling, rng_init)
    slot_of_train_index = None
    if config.sampling_mode == "none":
        keep = labeling.labels != NOISE
        slot_of_train_index = np.full(len(train_samples), -1, dtype=np.int64)
        slot_of_train_index[keep] = np.arange(int(keep.sum()))

    num_active = len(train_samples) - labeling.num_noise
    batch_originals = config.clusters_per_batch * config.instances_per_cluster
    iterations = max(1, math.ceil(num_active / batch_originals))
    lr = warmup_lr(LrSchedule(config.base_lr, config.warmup_epochs), epoch)

    sum_contrastive = 0.0
    sum_consistency = 0.0
    for iteration in range(iterations):
        breakdown = _train_iteration(
            params, optimizer, world, config, templates, memory, labeling,
            train_samples, slot_of_train_index, epoch, iteration, lr, rng_sampling,
        )
        sum_contrastive += breakdown.contrastive
        sum_consistency += breakdown.consistency
    return EpochReport(
        epoch=epoch,
        num_clusters=labeling.num_clusters,
        num_noise=labeling.num_noise,
        mean_contrastive=sum_contrastive / iterations,
        mean_consistency=sum_consistency / iterations,
        learning_rate=lr,
        wall_time=time.perf_counter() - start,
    )


def run_training(config, world, checkpoint_path=None, checkpoint_every=0):
    """Train an encoder on the world's train split from scratch.

    Returns a TrainingResult.  When checkpoint_path is given the final
    state is always saved there; checkpoint_every > 0 additionally saves
    every that-many epochs.
    """
    if world.train_indices.size == 0:
        raise EmptyInputError(
            "world has no train samples; increase clothes_per_identity"
        )
    rng_init = np.random.default_rng(config.init_seed)
    rng_sampling = np.random.default_rng(config.sampling_seed)
    params = init_encoder(config.encoder_widths(world.config.dim), rng_init)
    optimizer = init_optimizer(params, weight_decay=config.weight_decay)
    templates = (
        make_style_templates(world, config.template_bank_size, rng_init)
        if config.use_augmentation
        else []
    )
    reports = []
    for epoch in range(1, config.max_epochs + 1):
        report = run_epoch(
            params, optimizer, world, config, templates, epoch, rng_init, rng_sampling
        )
        reports.append(report)
        if (
            checkpoint_path is not None
            and checkpoint_every > 0
            and epoch % checkpoint_every == 0
        ):
            save_checkpoint(checkpoint_path, params, optimizer)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, params, optimizer)
    return TrainingResult(
        params=params,
        optimizer=optimizer,
        reports=reports,
        templates=templates,
        config=config,
    )


def eval_records(params, world):
    """Encode the query and gallery splits into evaluation records."""
    records = []
    for role, indices in (
        ("query", world.query_indices),
        ("gallery", world.gallery_indices),
    ):
        if indices.size == 0:
            raise EmptyInputError(f"world has no {role} samples")
        raws = np.stack([world.samples[i].raw for i in indices])
        features = encode_batch(params, raws)
        for row, index in enumerate(indices):
            sample = world.samples[index]
            records.append(
                EvalRecord(
                    feature=features[row],
                    identity_id=sample.identity_id,
                    clothing_id=sample.clothing_id,
                    camera_id=sample.camera_id,
                    role=role,
                )
            )
    return records
