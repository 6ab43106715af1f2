"""Cluster feature memories with momentum updates.

Two banks, one entry per cluster: the "average" bank follows the mean of
each cluster's batch features, the "hardest" bank follows the batch feature
most dissimilar (largest KL between softmax distributions) from the entry
it replaces.  Both banks are seeded from the same uniformly drawn member
feature of each cluster.  Every entry stays unit-norm: updates blend with
momentum and renormalize.

InstanceMemory is the ablation fallback: one slot per clustered sample,
updated individually with the same momentum rule.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    EmptyBatchError,
    EmptyClusterError,
    UnknownClusterError,
    WrongBatchSizeError,
)
from .numerics import (
    kl_divergence_rows,
    l2_normalize,
    softmax,
    softmax_rows,
)


@dataclass
class DualMemory:
    """Per-cluster average and hardest feature entries, both (N, F)."""

    average: np.ndarray
    hardest: np.ndarray
    momentum: float

    @property
    def num_clusters(self):
        return self.average.shape[0]

    def candidates(self, mode):
        """Candidate matrix for the contrastive loss under a sampling mode."""
        if mode == "both":
            return np.vstack([self.average, self.hardest])
        if mode == "average":
            return self.average.copy()
        if mode == "hardest":
            return self.hardest.copy()
        raise ValueError(f"no candidate set for mode {mode!r}")

    def copy(self):
        return DualMemory(self.average.copy(), self.hardest.copy(), self.momentum)


def _check_cluster(mem_rows, cluster_id):
    if not 0 <= cluster_id < mem_rows:
        raise UnknownClusterError(f"cluster {cluster_id} outside 0..{mem_rows - 1}")


def _as_batch(batch_feats):
    batch = np.asarray(batch_feats, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[0] == 0:
        raise EmptyBatchError(f"expected a non-empty 2-d batch, got shape {batch.shape}")
    return batch


def init_memory(cluster_features, momentum, rng):
    """Seed both banks with one uniformly drawn feature per cluster.

    cluster_features is a sequence of (k_i, F) arrays, one per cluster id.
    The same drawn feature goes into both banks, so a re-init with the same
    rng state erases any previous update history.
    """
    if not 0.0 <= momentum <= 1.0:
        raise ValueError(f"momentum must be in [0, 1], got {momentum}")
    if len(cluster_features) == 0:
        raise EmptyClusterError("no clusters to initialize from")
    rows = []
    for cluster_id, feats in enumerate(cluster_features):
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] == 0:
            raise EmptyClusterError(f"cluster {cluster_id} has no features")
        choice = int(rng.integers(feats.shape[0]))
        rows.append(feats[choice].copy())
    stacked = np.asarray(rows)
    return DualMemory(average=stacked.copy(), hardest=stacked.copy(), momentum=momentum)


def hardest_index(entry, batch):
    """Index of the batch feature with the largest KL(softmax(f) || softmax(entry)).

    Ties resolve to the lowest batch index (argmax takes the first max).
    """
    divergences = kl_divergence_rows(softmax_rows(batch), softmax(entry))
    return int(np.argmax(divergences))


def _blend(old, new, momentum):
    return l2_normalize(momentum * old + (1.0 - momentum) * new)


def update_hard(mem, cluster_id, batch_feats):
    """Momentum-update the hardest bank entry for one cluster, in place.

    The batch should contain every feature of the cluster in the current
    mini-batch, synthetic ones included; the selection compares against the
    entry value from before this update.
    """
    _check_cluster(mem.hardest.shape[0], cluster_id)
    batch = _as_batch(batch_feats)
    pick = hardest_index(mem.hardest[cluster_id], batch)
    mem.hardest[cluster_id] = _blend(mem.hardest[cluster_id], batch[pick], mem.momentum)
    return mem


def update_average(mem, cluster_id, batch_feats, synth_count, k_count):
    """Momentum-update the average bank entry for one cluster, in place.

    The batch must hold exactly (synth_count + 1) * k_count features: the
    k_count sampled originals plus synth_count synthetics for each.
    """
    _check_cluster(mem.average.shape[0], cluster_id)
    batch = _as_batch(batch_feats)
    expected = (int(synth_count) + 1) * int(k_count)
    if batch.shape[0] != expected:
        raise WrongBatchSizeError(
            f"cluster {cluster_id}: got {batch.shape[0]} features, "
            f"expected (S+1)*K = {expected}"
        )
    mean = batch.sum(axis=0) / expected
    mem.average[cluster_id] = _blend(mem.average[cluster_id], mean, mem.momentum)
    return mem


class InstanceMemory:
    """One memory slot per clustered sample, for the no-bank ablation."""

    def __init__(self, features, labels, momentum):
        features = np.asarray(features, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if features.ndim != 2 or features.shape[0] == 0:
            raise EmptyClusterError("instance memory needs at least one feature")
        if labels.shape != (features.shape[0],):
            raise WrongBatchSizeError("labels must match features one to one")
        self.features = features.copy()
        self.labels = labels.copy()
        self.momentum = float(momentum)

    @property
    def num_slots(self):
        return self.features.shape[0]

    def update(self, slot, feature):
        if not 0 <= slot < self.num_slots:
            raise UnknownClusterError(f"slot {slot} outside 0..{self.num_slots - 1}")
        self.features[slot] = _blend(
            self.features[slot], np.asarray(feature, dtype=np.float64), self.momentum
        )

    def positives_of(self, label):
        """Slot indices holding entries of one cluster."""
        return np.nonzero(self.labels == int(label))[0]
