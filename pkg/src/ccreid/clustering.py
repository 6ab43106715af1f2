"""Density clustering over unit-norm feature vectors with cosine distance.

Semantics, fixed by tests against a loop-based oracle:
  - neighborhoods use distance <= eps and count the point itself;
  - a point is core when its neighborhood has at least min_samples points;
  - clusters are connected components of core points, plus border points
    (non-core points within eps of some core point);
  - a border point reachable from several clusters joins the cluster of its
    lowest-index core neighbor;
  - noise points get the label NOISE (-1); cluster ids are 0..N-1, gapless,
    numbered by each component's lowest core point index.

Distances are computed exactly as a dense n x n matrix; no spatial index.
"""

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError, InvalidEpsError, UnknownClusterError

NOISE = -1

# Features are produced by unit-norm encoders; allow modest drift.
_UNIT_NORM_ATOL = 1e-6


@dataclass
class PseudoLabeling:
    """Cluster assignment for one epoch: labels[i] is a cluster id or NOISE."""

    labels: np.ndarray
    num_clusters: int

    @property
    def num_noise(self):
        return int(np.count_nonzero(self.labels == NOISE))

    def members(self, cluster_id):
        """Sorted sample indices belonging to one cluster."""
        if not 0 <= cluster_id < self.num_clusters:
            raise UnknownClusterError(
                f"cluster {cluster_id} outside 0..{self.num_clusters - 1}"
            )
        return np.nonzero(self.labels == cluster_id)[0]


def cluster_members(labeling, cluster_id):
    return labeling.members(cluster_id)


def dbscan(features, eps, min_samples):
    """Cluster unit-norm feature rows; returns a PseudoLabeling.

    features may be a (n, dim) array or a sequence of 1-d vectors.
    """
    if eps <= 0.0 or not np.isfinite(eps):
        raise InvalidEpsError(f"eps must be positive and finite, got {eps}")
    if int(min_samples) < 1:
        raise InvalidEpsError(f"min_samples must be >= 1, got {min_samples}")
    matrix = np.asarray(features, dtype=np.float64)
    if matrix.size == 0:
        raise EmptyInputError("no features to cluster")
    if matrix.ndim != 2:
        raise ValueError(f"expected 2-d features, got shape {matrix.shape}")
    norms = np.linalg.norm(matrix, axis=1)
    if np.any(np.abs(norms - 1.0) > _UNIT_NORM_ATOL):
        bad = int(np.argmax(np.abs(norms - 1.0)))
        raise ValueError(f"feature {bad} is not unit-norm (|f| = {norms[bad]!r})")

    n = matrix.shape[0]
    distances = 1.0 - matrix @ matrix.T
    adjacency = distances <= eps
    core = adjacency.sum(axis=1) >= int(min_samples)

    labels = np.full(n, NOISE, dtype=np.int64)
    num_clusters = 0
    visited = np.zeros(n, dtype=bool)
    for start in range(n):
        if not core[start] or visited[start]:
            continue
        # breadth-first expansion over core points only
        component = np.zeros(n, dtype=bool)
        frontier = np.zeros(n, dtype=bool)
        frontier[start] = True
        while frontier.any():
            component |= frontier
            reached = adjacency[frontier].any(axis=0)
            frontier = reached & core & ~component
        labels[component] = num_clusters
        visited |= component
        num_clusters += 1

    # border points: non-core, adjacent to at least one core point, assigned
    # to the cluster of the lowest-index core neighbor
    core_indices = np.nonzero(core)[0]
    if core_indices.size:
        border_mask = ~core & adjacency[:, core_indices].any(axis=1)
        for i in np.nonzero(border_mask)[0]:
            neighbor_cores = core_indices[adjacency[i, core_indices]]
            labels[i] = labels[neighbor_cores[0]]
    return PseudoLabeling(labels=labels, num_clusters=num_clusters)
