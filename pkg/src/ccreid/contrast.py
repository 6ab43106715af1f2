"""Batch sampling and the two training losses.

A mini-batch is built from P clusters with K sampled instances each; every
instance brings S clothing-swapped synthetics, forming a group of S+1
feature rows.  Rows are laid out group-major: group g occupies rows
[g*(S+1), (g+1)*(S+1)), original first.

Losses are recorded on an autodiff tape and return scalar nodes.  Memory
entries act as constants; gradients only flow into the encoder features.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyBatchError,
    InvalidTemperatureError,
    MalformedGroupError,
    NonFiniteLossError,
    TooFewClustersError,
    UnknownClusterError,
)


def pk_sample(labeling, p_count, k_count, rng):
    """Draw P clusters without replacement and K instances from each.

    Instances are drawn without replacement when the cluster has at least
    K members, with replacement otherwise.  Returns a list of
    (cluster_id, sample_indices) pairs in draw order.
    """
    if p_count < 1 or k_count < 1:
        raise ValueError(f"P and K must be >= 1, got {p_count}, {k_count}")
    if labeling.num_clusters < p_count:
        raise TooFewClustersError(
            f"need {p_count} clusters, labeling has {labeling.num_clusters} "
            f"({labeling.num_noise} noise points)"
        )
    chosen = rng.choice(labeling.num_clusters, size=p_count, replace=False)
    selection = []
    for cluster_id in chosen:
        members = labeling.members(int(cluster_id))
        replace = members.size < k_count
        picks = rng.choice(members.size, size=k_count, replace=replace)
        selection.append((int(cluster_id), members[picks]))
    return selection


@dataclass
class SyncGroup:
    """One sampled original plus its synthetics, sharing a pseudo label."""

    original: object
    synthetics: list
    pseudo_label: int


@dataclass
class TrainBatch:
    """Group-major mini-batch; feature_node is filled in after encoding."""

    groups: list
    feature_node: object = None

    def __post_init__(self):
        if not self.groups:
            raise EmptyBatchError("a batch needs at least one group")
        counts = {len(g.synthetics) for g in self.groups}
        if len(counts) != 1:
            raise MalformedGroupError(f"groups disagree on synthetic count: {counts}")

    @property
    def num_groups(self):
        return len(self.groups)

    @property
    def group_size(self):
        return len(self.groups[0].synthetics) + 1

    @property
    def num_rows(self):
        return self.num_groups * self.group_size

    @property
    def group_labels(self):
        return np.asarray([g.pseudo_label for g in self.groups], dtype=np.int64)

    @property
    def row_labels(self):
        return np.repeat(self.group_labels, self.group_size)

    def stacked_raw(self):
        rows = []
        for group in self.groups:
            rows.append(group.original.raw)
            rows.extend(s.raw for s in group.synthetics)
        return np.asarray(rows, dtype=np.float64)

    def _checked_features(self):
        if self.feature_node is None:
            raise MalformedGroupError("batch has no encoded features yet")
        rows = self.feature_node.value.shape[0]
        if rows != self.num_rows:
            raise MalformedGroupError(
                f"feature rows {rows} != groups*group_size {self.num_rows}"
            )
        return self.feature_node


def nce_terms(feat_node, candidates, positive_columns, tau, tape):
    """Mean over (row, positive) pairs of -log softmax similarity.

    candidates is a constant (C, F) matrix; positive_columns[i] lists the
    candidate columns that count as positives for feature row i, each
    contributing its own term with the full-row denominator.
    """
    if tau <= 0.0 or not np.isfinite(tau):
        raise InvalidTemperatureError(f"temperature must be positive, got {tau}")
    candidates = np.asarray(candidates, dtype=np.float64)
    if candidates.ndim != 2 or candidates.shape[0] == 0:
        raise EmptyBatchError("candidate matrix is empty")
    rows, cols = [], []
    for row, columns in enumerate(positive_columns):
        for col in columns:
            if not 0 <= int(col) < candidates.shape[0]:
                raise UnknownClusterError(
                    f"positive column {col} outside candidate matrix"
                )
            rows.append(row)
            cols.append(int(col))
    if not rows:
        raise EmptyBatchError("no (feature, positive) pairs")
    logits = tape.scale(tape.matmul(feat_node, candidates.T.copy()), 1.0 / tau)
    lse = tape.logsumexp_rows(logits)
    picked = tape.take_entries(logits, np.asarray(rows), np.asarray(cols))
    terms = tape.sub(tape.gather_rows(lse, np.asarray(rows)), picked)
    return tape.mean(terms)


def info_nce(batch, mem, tau, tape, mode="both"):
    """Cluster-contrastive loss against the memory banks.

    mode "both" uses the average and hardest entries of the feature's own
    cluster as two separate positives over all 2N candidates; "average" and
    "hardest" restrict candidates and positive to the one bank.
    """
    feat = batch._checked_features()
    labels = batch.row_labels
    n = mem.num_clusters
    if np.any(labels < 0) or np.any(labels >= n):
        raise UnknownClusterError("batch pseudo label outside memory range")
    candidates = mem.candidates(mode)
    if mode == "both":
        positive_columns = [[int(l), n + int(l)] for l in labels]
    else:
        positive_columns = [[int(l)] for l in labels]
    return nce_terms(feat, candidates, positive_columns, tau, tape)


def info_nce_instances(batch, instance_mem, tau, tape, own_slots):
    """Ablation loss: candidates are individual stored instance features.

    own_slots[g] is the stored-instance slot of group g's original sample;
    every row of the group (original and synthetics alike) treats that one
    slot as its positive, against all stored instances as candidates.
    """
    feat = batch._checked_features()
    own_slots = np.asarray(own_slots, dtype=np.int64)
    if own_slots.shape != (batch.num_groups,):
        raise MalformedGroupError(
            f"own_slots has shape {own_slots.shape}, expected ({batch.num_groups},)"
        )
    total = instance_mem.features.shape[0]
    if np.any(own_slots < 0) or np.any(own_slots >= total):
        raise UnknownClusterError("own slot index outside stored instances")
    positive_columns = [
        [int(slot)] for slot in np.repeat(own_slots, batch.group_size)
    ]
    return nce_terms(feat, instance_mem.features, positive_columns, tau, tape)


def self_identity_loss(batch, tape, denominator="pairs"):
    """Mean KL divergence between softmax features within each group.

    All ordered pairs (a, b), a != b, inside a group contribute
    KL(softmax(f_a) || softmax(f_b)).  denominator "pairs" averages over
    all contributed pairs; "grouped" divides the sum by groups*(S+1),
    reproducing a coarser normalization some trainers use.
    """
    if denominator not in ("pairs", "grouped"):
        raise ValueError(f"unknown denominator {denominator!r}")
    feat = batch._checked_features()
    size = batch.group_size
    if size < 2:
        raise MalformedGroupError("self-identity loss needs groups of >= 2 features")
    first, second = [], []
    for g in range(batch.num_groups):
        base = g * size
        for a in range(size):
            for b in range(size):
                if a != b:
                    first.append(base + a)
                    second.append(base + b)
    first = np.asarray(first)
    second = np.asarray(second)
    probs = tape.softmax_rows(feat)
    logp = tape.log_softmax_rows(feat)
    gap = tape.sub(tape.gather_rows(logp, first), tape.gather_rows(logp, second))
    kl_per_pair = tape.row_sum(tape.mul(tape.gather_rows(probs, first), gap))
    if denominator == "pairs":
        return tape.mean(kl_per_pair)
    return tape.scale(tape.total_sum(kl_per_pair), 1.0 / (batch.num_groups * size))


@dataclass(frozen=True)
class LossBreakdown:
    """Scalar loss values of one iteration, for reporting."""

    contrastive: float
    consistency: float
    alpha: float
    total: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(
            self, "total", self.contrastive + self.alpha * self.consistency
        )
        for name in ("contrastive", "consistency", "alpha", "total"):
            if not np.isfinite(getattr(self, name)):
                raise NonFiniteLossError(f"{name} is not finite")


def total_loss(contrastive, consistency, alpha):
    """Combine loss terms: total = contrastive + alpha * consistency."""
    return LossBreakdown(
        contrastive=float(contrastive),
        consistency=float(consistency),
        alpha=float(alpha),
    )
