"""Retrieval evaluation: protocol splits, cosine ranking, CMC and mAP.

A query's ranking over the gallery is scored per protocol.  Gallery records
sharing the query's identity are either valid matches (clothing and camera
rules satisfied) or junk (excluded from the ranking entirely); records of
other identities are always negatives.  Ties in distance are broken by
gallery index, so scores are reproducible bit for bit.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptyInputError,
    InvalidConfigError,
    NoValidMatchError,
)
from .numerics import as_float64, normalize_rows

SETTINGS = ("clothing_change", "same_clothing", "any")
SHOTS = ("all", "single")
DEFAULT_RANKS = (1, 5, 10, 20)


@dataclass
class EvalRecord:
    """One encoded sample with the metadata the protocol needs."""

    feature: np.ndarray
    identity_id: int
    clothing_id: int
    camera_id: int
    role: str

    def __post_init__(self):
        self.feature = as_float64(self.feature, "feature")
        if self.feature.ndim != 1:
            raise DimensionMismatchError(
                f"record feature must be 1-d, got shape {self.feature.shape}"
            )
        if self.role not in ("query", "gallery"):
            raise InvalidConfigError(f"unknown record role {self.role!r}")


@dataclass(frozen=True)
class EvalProtocol:
    """Which gallery records count as matches, and how many are kept.

    setting selects the clothing rule: "clothing_change" accepts only
    differently-clothed matches, "same_clothing" only identically-clothed
    ones, "any" ignores clothing.  shot "single" keeps one gallery record
    per identity, drawn with the protocol seed.
    """

    setting: str = "clothing_change"
    shot: str = "all"
    exclude_same_camera: bool = True
    ranks: tuple = DEFAULT_RANKS
    seed: int = 0

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise InvalidConfigError(f"unknown setting {self.setting!r}")
        if self.shot not in SHOTS:
            raise InvalidConfigError(f"unknown shot mode {self.shot!r}")
        if not self.ranks or any(r < 1 for r in self.ranks):
            raise InvalidConfigError(f"ranks must be positive, got {self.ranks}")


def _is_valid_match(query, gallery, protocol):
    if query.identity_id != gallery.identity_id:
        return False
    if protocol.setting == "clothing_change":
        if query.clothing_id == gallery.clothing_id:
            return False
    elif protocol.setting == "same_clothing":
        if query.clothing_id != gallery.clothing_id:
            return False
    if protocol.exclude_same_camera and query.camera_id == gallery.camera_id:
        return False
    return True


def build_protocol_split(records, protocol, rng=None):
    """Partition records by role and apply the shot rule.

    Returns (queries, galleries).  Raises NoValidMatchError, naming the
    identities involved, when some query would have no valid match.
    """
    queries = [r for r in records if r.role == "query"]
    galleries = [r for r in records if r.role == "gallery"]
    if not queries:
        raise EmptyInputError("no query records")
    if not galleries:
        raise EmptyInputError("no gallery records")
    if protocol.shot == "single":
        if rng is None:
            rng = np.random.default_rng(protocol.seed)
        by_identity = {}
        for record in galleries:
            by_identity.setdefault(record.identity_id, []).append(record)
        kept = []
        for identity in sorted(by_identity):
            group = by_identity[identity]
            kept.append(group[int(rng.integers(len(group)))])
        galleries = kept
    orphans = sorted(
        {
            q.identity_id
            for q in queries
            if not any(_is_valid_match(q, g, protocol) for g in galleries)
        }
    )
    if orphans:
        raise NoValidMatchError(
            f"{len(orphans)} identities have queries with no valid gallery match",
            identity_ids=tuple(orphans),
        )
    return queries, galleries


def match_and_junk_flags(queries, galleries, protocol):
    """Boolean (num_query, num_gallery) matrices of valid and junk pairs.

    Junk pairs share the query's identity but fail a clothing or camera
    rule; they are removed from the ranking rather than counted as misses.
    """
    match = np.zeros((len(queries), len(galleries)), dtype=bool)
    junk = np.zeros_like(match)
    for qi, query in enumerate(queries):
        for gj, gallery in enumerate(galleries):
            if query.identity_id != gallery.identity_id:
                continue
            if _is_valid_match(query, gallery, protocol):
                match[qi, gj] = True
            else:
                junk[qi, gj] = True
    return match, junk


def distance_matrix(query_features, gallery_features):
    """Pairwise cosine distances, rows normalized first, clipped to [0, 2]."""
    queries = as_float64(query_features, "query features")
    galleries = as_float64(gallery_features, "gallery features")
    if queries.ndim != 2 or galleries.ndim != 2:
        raise DimensionMismatchError("feature matrices must be 2-d")
    if queries.shape[0] == 0 or galleries.shape[0] == 0:
        raise EmptyInputError("empty feature matrix")
    if queries.shape[1] != galleries.shape[1]:
        raise DimensionMismatchError(
            f"feature dims differ: {queries.shape[1]} vs {galleries.shape[1]}"
        )
    similarities = normalize_rows(queries) @ normalize_rows(galleries).T
    return np.clip(1.0 - similarities, 0.0, 2.0)


def _ranked_matches(distances, match_row, junk_row):
    order = np.argsort(distances, kind="stable")
    if junk_row is not None:
        order = order[~junk_row[order]]
    return match_row[order]


def cmc(distmat, match_flags, ranks=DEFAULT_RANKS, junk_flags=None):
    """Cumulative match accuracy at each requested rank.

    Per query, gallery entries are sorted by (distance, index), junk entries
    dropped, and the position of the first valid match recorded.
    """
    distmat = as_float64(distmat, "distance matrix")
    match_flags = np.asarray(match_flags, dtype=bool)
    if distmat.shape != match_flags.shape:
        raise DimensionMismatchError(
            f"distance {distmat.shape} vs match flags {match_flags.shape}"
        )
    if distmat.size == 0:
        raise EmptyInputError("empty distance matrix")
    hits = np.zeros(len(ranks), dtype=np.int64)
    for qi in range(distmat.shape[0]):
        kept = _ranked_matches(
            distmat[qi], match_flags[qi], None if junk_flags is None else junk_flags[qi]
        )
        positions = np.flatnonzero(kept)
        if positions.size == 0:
            raise NoValidMatchError(f"query {qi} has no valid match in the gallery")
        first = positions[0] + 1
        hits += first <= np.asarray(ranks)
    return hits / distmat.shape[0]


def mean_ap(distmat, match_flags, junk_flags=None):
    """Mean average precision; returns (mAP, per-query average precisions)."""
    distmat = as_float64(distmat, "distance matrix")
    match_flags = np.asarray(match_flags, dtype=bool)
    if distmat.shape != match_flags.shape:
        raise DimensionMismatchError(
            f"distance {distmat.shape} vs match flags {match_flags.shape}"
        )
    if distmat.size == 0:
        raise EmptyInputError("empty distance matrix")
    average_precisions = np.zeros(distmat.shape[0])
    for qi in range(distmat.shape[0]):
        kept = _ranked_matches(
            distmat[qi], match_flags[qi], None if junk_flags is None else junk_flags[qi]
        )
        positions = np.flatnonzero(kept)
        if positions.size == 0:
            raise NoValidMatchError(f"query {qi} has no valid match in the gallery")
        hits = np.arange(1, positions.size + 1)
        average_precisions[qi] = np.mean(hits / (positions + 1))
    return float(np.mean(average_precisions)), average_precisions


@dataclass(frozen=True)
class EvalResult:
    """Retrieval scores for one protocol run."""

    protocol: EvalProtocol
    cmc_scores: np.ndarray
    mean_average_precision: float
    per_query_ap: np.ndarray
    num_query: int
    num_gallery: int
    metrics: dict = field(init=False)

    def __post_init__(self):
        named = {
            f"rank{r}": float(v)
            for r, v in zip(self.protocol.ranks, self.cmc_scores)
        }
        named["mAP"] = float(self.mean_average_precision)
        object.__setattr__(self, "metrics", named)


def evaluate(records, protocol, rng=None):
    """Score a record set under a protocol; returns an EvalResult."""
    queries, galleries = build_protocol_split(records, protocol, rng=rng)
    distmat = distance_matrix(
        np.stack([q.feature for q in queries]),
        np.stack([g.feature for g in galleries]),
    )
    match, junk = match_and_junk_flags(queries, galleries, protocol)
    scores = cmc(distmat, match, ranks=protocol.ranks, junk_flags=junk)
    ap_mean, per_query = mean_ap(distmat, match, junk_flags=junk)
    return EvalResult(
        protocol=protocol,
        cmc_scores=scores,
        mean_average_precision=ap_mean,
        per_query_ap=per_query,
        num_query=len(queries),
        num_gallery=len(galleries),
    )


def write_metrics_report(path, result):
    """Write metrics as key=value lines, one metric per line."""
    with open(path, "w", encoding="utf-8") as handle:
        for key, value in result.metrics.items():
            handle.write(f"{key}={value:.17g}\n")
        handle.write(f"num_query={result.num_query}\n")
        handle.write(f"num_gallery={result.num_gallery}\n")


def write_ap_csv(path, result):
    """Write per-query average precisions as a two-column CSV."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["query_index", "average_precision"])
        for index, value in enumerate(result.per_query_ap):
            writer.writerow([index, f"{value:.17g}"])
