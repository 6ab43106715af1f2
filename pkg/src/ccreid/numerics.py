"""Dense float64 vector math: normalization, cosine distance, softmax, KL.

All functions accept anything np.asarray can turn into a float64 array and
always compute in 64-bit.  Probability vectors ("distributions") must be
non-negative and sum to one within 1e-9; the convention 0 * ln 0 = 0 is
applied everywhere.
"""

import numpy as np

from .errors import (
    DimensionMismatchError,
    SupportViolationError,
    ZeroVectorError,
)

# Norms below this are treated as zero: direction is meaningless.
ZERO_NORM_FLOOR = 1e-12

# Tolerance for "sums to one" checks on probability vectors.
DISTRIBUTION_ATOL = 1e-9


def as_float64(values, name="input"):
    """Convert to a float64 array, rejecting non-finite entries."""
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or infinite entries")
    return arr


def l2_normalize(v):
    """Return v / ||v||_2.

    Raises ZeroVectorError when ||v|| is below ZERO_NORM_FLOOR.
    """
    arr = as_float64(v, "vector")
    norm = float(np.linalg.norm(arr))
    if norm < ZERO_NORM_FLOOR:
        raise ZeroVectorError(f"cannot normalize vector with norm {norm:.3e}")
    return arr / norm


def normalize_rows(matrix):
    """L2-normalize each row of a 2-d array.

    Raises ZeroVectorError if any row norm is below ZERO_NORM_FLOOR.
    """
    arr = as_float64(matrix, "matrix")
    if arr.ndim != 2:
        raise DimensionMismatchError(f"expected 2-d array, got shape {arr.shape}")
    norms = np.linalg.norm(arr, axis=1, keepdims=True)
    if np.any(norms < ZERO_NORM_FLOOR):
        bad = int(np.argmax(norms < ZERO_NORM_FLOOR))
        raise ZeroVectorError(f"row {bad} has near-zero norm")
    return arr / norms


def cosine_distance(a, b):
    """1 - cos(a, b), clipped to [0, 2].

    Raises ZeroVectorError if either vector has near-zero norm and
    DimensionMismatchError if the vectors differ in length.
    """
    va = as_float64(a, "a")
    vb = as_float64(b, "b")
    if va.shape != vb.shape:
        raise DimensionMismatchError(f"shapes {va.shape} and {vb.shape} differ")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na < ZERO_NORM_FLOOR or nb < ZERO_NORM_FLOOR:
        raise ZeroVectorError("cosine distance of a near-zero vector is undefined")
    sim = float(np.dot(va, vb)) / (na * nb)
    return float(np.clip(1.0 - sim, 0.0, 2.0))


def softmax(v):
    """Numerically stable softmax of a 1-d vector (max subtracted first)."""
    arr = as_float64(v, "logits")
    if arr.ndim != 1:
        raise DimensionMismatchError(f"expected 1-d vector, got shape {arr.shape}")
    shifted = arr - arr.max()
    exps = np.exp(shifted)
    return exps / exps.sum()


def softmax_rows(matrix):
    """Row-wise stable softmax of a 2-d array."""
    arr = as_float64(matrix, "logits")
    if arr.ndim != 2:
        raise DimensionMismatchError(f"expected 2-d array, got shape {arr.shape}")
    shifted = arr - arr.max(axis=1, keepdims=True)
    exps = np.exp(shifted)
    return exps / exps.sum(axis=1, keepdims=True)


def _check_distribution(p, name):
    if p.ndim != 1:
        raise DimensionMismatchError(f"{name} must be 1-d, got shape {p.shape}")
    if np.any(p < -DISTRIBUTION_ATOL):
        raise ValueError(f"{name} has negative entries")
    total = float(p.sum())
    if abs(total - 1.0) > DISTRIBUTION_ATOL:
        raise ValueError(f"{name} sums to {total!r}, not 1")


def kl_divergence(p, q):
    """KL(p || q) = sum_i p_i ln(p_i / q_i) with 0 * ln 0 = 0.

    Both arguments must be probability vectors of the same length.
    Raises SupportViolationError when p puts mass where q has none.
    The result is clipped at 0 to absorb rounding when p == q.
    """
    vp = as_float64(p, "p")
    vq = as_float64(q, "q")
    _check_distribution(vp, "p")
    _check_distribution(vq, "q")
    if vp.shape != vq.shape:
        raise DimensionMismatchError(f"shapes {vp.shape} and {vq.shape} differ")
    support = vp > 0.0
    if np.any(support & (vq <= 0.0)):
        raise SupportViolationError("p has mass where q is zero")
    terms = vp[support] * (np.log(vp[support]) - np.log(vq[support]))
    return max(float(terms.sum()), 0.0)


def kl_divergence_rows(p_rows, q_row):
    """KL of each row of p_rows against a single distribution q_row.

    Inputs must already be valid distributions (rows of a softmax); this
    is the vectorized inner loop used by memory updates, so it skips the
    per-call validation that kl_divergence performs.
    """
    p = np.asarray(p_rows, dtype=np.float64)
    q = np.asarray(q_row, dtype=np.float64)
    if p.ndim != 2 or q.ndim != 1 or p.shape[1] != q.shape[0]:
        raise DimensionMismatchError(
            f"incompatible shapes {p.shape} and {q.shape}"
        )
    if np.any(q <= 0.0):
        raise SupportViolationError("q has zero entries")
    logp = np.where(p > 0.0, np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    terms = np.where(p > 0.0, p * (logp - np.log(q)), 0.0)
    return np.maximum(terms.sum(axis=1), 0.0)
