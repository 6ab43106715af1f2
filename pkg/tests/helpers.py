"""Shared oracles and utilities for the test suite.

Everything here is deliberately written as straight-line loop code, kept
independent from the vectorized implementations it is used to check.
"""

import math

import numpy as np

FD_STEP = 1e-5
# Relative error floor: gradients smaller than this are compared absolutely,
# since the relative error of a near-zero gradient is dominated by the
# finite-difference noise floor (~1e-10 for losses of order one).
FD_REL_FLOOR = 1e-4


def relative_error(analytic, numeric):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), FD_REL_FLOOR)


def central_difference(fn, array, index, step=FD_STEP):
    """Central finite difference of scalar fn w.r.t. array[index] in place."""
    original = array[index]
    array[index] = original + step
    up = fn()
    array[index] = original - step
    down = fn()
    array[index] = original
    return (up - down) / (2.0 * step)


def softmax_oracle(values):
    """Plain-math softmax used to cross-check the library one."""
    values = list(map(float, values))
    high = max(values)
    exps = [math.exp(v - high) for v in values]
    total = sum(exps)
    return [e / total for e in exps]


def kl_oracle(p, q):
    """Loop KL divergence with the 0 ln 0 = 0 convention."""
    total = 0.0
    for pi, qi in zip(p, q):
        if pi > 0.0:
            total += pi * math.log(pi / qi)
    return total


def unit_rows(rng, count, dim):
    """Random unit-norm float64 rows."""
    rows = rng.standard_normal((count, dim))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def dbscan_oracle(features, eps, min_samples):
    """Brute-force density clustering oracle.

    Pure loop implementation: explicit neighbor lists (cosine distance,
    self-inclusive counting), BFS over core points, border points assigned
    to the cluster of their lowest-index core neighbor.  Returns labels with
    -1 for noise and cluster ids renumbered by order of first appearance of
    each component's lowest-index core point.
    """
    n = len(features)
    norms = [math.sqrt(sum(x * x for x in row)) for row in features]
    neighbors = []
    for i in range(n):
        row = []
        for j in range(n):
            dot = float(np.dot(features[i], features[j]))
            dist = 1.0 - dot / (norms[i] * norms[j])
            if dist <= eps:
                row.append(j)
        neighbors.append(row)
    core = [len(neighbors[i]) >= min_samples for i in range(n)]

    labels = [-1] * n
    component_of_core = {}
    next_component = 0
    for start in range(n):
        if not core[start] or start in component_of_core:
            continue
        queue = [start]
        component_of_core[start] = next_component
        while queue:
            node = queue.pop()
            for other in neighbors[node]:
                if core[other] and other not in component_of_core:
                    component_of_core[other] = next_component
                    queue.append(other)
        next_component += 1
    for idx, comp in component_of_core.items():
        labels[idx] = comp

    for i in range(n):
        if core[i]:
            continue
        core_neighbors = [j for j in neighbors[i] if core[j]]
        if core_neighbors:
            labels[i] = component_of_core[min(core_neighbors)]
    return np.asarray(labels, dtype=np.int64)


def canonical_labels(labels):
    """Renumber cluster ids by first appearance; noise stays -1."""
    mapping = {}
    out = []
    for label in labels:
        label = int(label)
        if label == -1:
            out.append(-1)
            continue
        if label not in mapping:
            mapping[label] = len(mapping)
        out.append(mapping[label])
    return np.asarray(out, dtype=np.int64)


def cmc_map_oracle(distmat, match_flags, ranks, junk_flags=None):
    """Exhaustive CMC / mAP oracle on explicit sorted lists.

    Sorting is by (distance, gallery index); junk columns are dropped from
    each query's ranking before scoring.  Returns (cmc accuracies, mAP,
    per-query APs).
    """
    num_q, num_g = distmat.shape
    hits_at = [0] * len(ranks)
    average_precisions = []
    for qi in range(num_q):
        order = sorted(range(num_g), key=lambda gj: (distmat[qi, gj], gj))
        kept = []
        for gj in order:
            if junk_flags is not None and junk_flags[qi, gj]:
                continue
            kept.append(bool(match_flags[qi, gj]))
        first_hit = None
        precisions = []
        seen = 0
        for position, is_match in enumerate(kept, start=1):
            if is_match:
                seen += 1
                precisions.append(seen / position)
                if first_hit is None:
                    first_hit = position
        assert first_hit is not None, "oracle given a query with no match"
        for ri, rank in enumerate(ranks):
            if first_hit <= rank:
                hits_at[ri] += 1
        average_precisions.append(sum(precisions) / len(precisions))
    cmc = [h / num_q for h in hits_at]
    mean_ap = sum(average_precisions) / len(average_precisions)
    return np.asarray(cmc), mean_ap, np.asarray(average_precisions)
