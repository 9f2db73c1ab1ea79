"""Exact dot-product image index with descriptor-based re-ranking.

Records are kept sorted by ``image_id`` so that ties in any score are broken
by ascending id simply by using stable sorts over record positions.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np

from .embedding import UNIT_TOL
from .errors import (
    DimensionMismatch,
    DuplicateId,
    EmptyInput,
    EmptyFeatureSet,
    EmptyIndex,
    MissingQueryDescriptor,
    NonFiniteInput,
    NotUnitNorm,
    ValidationError,
    WindowTooLarge,
)
from .learner import Mapper, embed, forward

DESCRIPTOR_DIM = 40


@dataclass
class ImageRecord:
    """One image: raw features and/or its mapped unit embedding."""

    image_id: str
    raw_features: np.ndarray | None = None
    embedding: np.ndarray | None = None
    label: str | None = None
    rerank_descriptor: np.ndarray | None = None


class Hit(NamedTuple):
    image_id: str
    score: float
    rerank_score: float | None = None


class Index:
    """Immutable image dictionary: ids, unit embeddings, optional descriptors."""

    def __init__(
        self,
        image_ids: Sequence[str],
        embeddings: np.ndarray,
        labels: Sequence[str | None],
        descriptors: np.ndarray | None = None,
        manifest: dict | None = None,
    ):
        self.image_ids = tuple(image_ids)
        self.embeddings = np.asarray(embeddings, dtype=np.float64)
        self.labels = tuple(labels)
        # rows of NaN mark records without a descriptor
        self.descriptors = None if descriptors is None else np.asarray(descriptors, dtype=np.float64)
        self.manifest = dict(manifest or {})
        self._pos = {iid: i for i, iid in enumerate(self.image_ids)}
        for arr in (self.embeddings, self.descriptors):
            if arr is not None:
                arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.image_ids)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    @property
    def rerank_dim(self) -> int | None:
        return None if self.descriptors is None else self.descriptors.shape[1]

    def position(self, image_id: str) -> int:
        return self._pos[image_id]

    def has_descriptor(self) -> np.ndarray:
        if self.descriptors is None:
            return np.zeros(len(self), dtype=bool)
        return ~np.isnan(self.descriptors).any(axis=1)

    def label_of(self, image_id: str) -> str | None:
        return self.labels[self._pos[image_id]]


def embed_records(mapper: Mapper, records: Sequence[ImageRecord]) -> list[ImageRecord]:
    """Copies of ``records`` with embeddings computed from their raw features."""
    if not records:
        return []
    X = np.array([r.raw_features for r in records], dtype=np.float64)
    E, _ = embed(mapper, X)
    return [replace(r, embedding=e) for r, e in zip(records, E)]


def _hash_arrays(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        if a is not None:
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return h.hexdigest()


def build_index(
    records: Sequence[ImageRecord],
    taxonomy_hash: str | None = None,
    mapper_hash: str | None = None,
) -> Index:
    if not records:
        raise EmptyInput("cannot build an index from no records")
    records = sorted(records, key=lambda r: r.image_id)
    ids = [r.image_id for r in records]
    dupes = sorted({a for a, b in zip(ids, ids[1:]) if a == b})
    if dupes:
        raise DuplicateId(f"duplicate image ids: {', '.join(dupes)}")

    missing = [r.image_id for r in records if r.embedding is None]
    if missing:
        raise ValidationError(f"records without an embedding: {', '.join(missing[:5])}")
    E = [np.asarray(r.embedding, dtype=np.float64) for r in records]
    dims = {e.shape for e in E}
    if len(dims) != 1 or len(next(iter(dims))) != 1:
        raise DimensionMismatch(f"embedding shapes differ: {sorted(dims)}")
    E = np.stack(E)
    if not np.all(np.isfinite(E)):
        raise NonFiniteInput("non-finite embedding")
    norms = np.linalg.norm(E, axis=1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        bad = [ids[i] for i in np.flatnonzero(np.abs(norms - 1.0) > UNIT_TOL)]
        raise NotUnitNorm(f"embeddings are not unit norm: {', '.join(bad[:5])}")

    descriptors = None
    present = [r.rerank_descriptor for r in records if r.rerank_descriptor is not None]
    if present:
        ddims = {np.shape(d) for d in present}
        if len(ddims) != 1:
            raise DimensionMismatch(f"descriptor shapes differ: {sorted(ddims)}")
        (d_r,) = next(iter(ddims))
        descriptors = np.full((len(records), d_r), np.nan)
        for i, r in enumerate(records):
            if r.rerank_descriptor is not None:
                d = np.asarray(r.rerank_descriptor, dtype=np.float64)
                if not np.all(np.isfinite(d)):
                    raise NonFiniteInput(f"non-finite descriptor for {r.image_id}")
                descriptors[i] = d

    manifest = {
        "format": "hiersearch-index/1",
        "count": len(records),
        "dim": E.shape[1],
        "rerank_dim": None if descriptors is None else descriptors.shape[1],
        "taxonomy_hash": taxonomy_hash,
        "mapper_hash": mapper_hash,
        "embeddings_hash": _hash_arrays(E),
    }
    return Index(ids, E, [r.label for r in records], descriptors, manifest)


def _check_query(index: Index, q: np.ndarray) -> np.ndarray:
    if len(index) == 0:
        raise EmptyIndex("index is empty")
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (index.dim,):
        raise DimensionMismatch(f"query must be a {index.dim}-vector, got {q.shape}")
    if abs(np.linalg.norm(q) - 1.0) > UNIT_TOL:
        raise NotUnitNorm(f"query norm {np.linalg.norm(q):.6g} is not 1")
    return q


def query_topn(index: Index, q: np.ndarray, n: int, exclude_id: str | None = None) -> list[Hit]:
    """Top ``n`` records by dot product with ``q``; ties by ascending id."""
    if n < 1:
        raise ValidationError("n must be at least 1")
    q = _check_query(index, q)
    scores = index.embeddings @ q
    candidates = np.arange(len(index))
    if exclude_id is not None and exclude_id in index._pos:
        candidates = np.delete(candidates, index.position(exclude_id))
    if len(candidates) == 0:
        return []
    s = scores[candidates]
    n = min(n, len(candidates))
    if n < len(candidates):
        # everything scoring at least the n-th best value, ties included
        kth = np.partition(s, len(s) - n)[len(s) - n]
        keep = s >= kth
        candidates, s = candidates[keep], s[keep]
    order = np.argsort(-s, kind="stable")[:n]
    return [Hit(index.image_ids[i], float(scores[i])) for i in candidates[order]]


def _cosine(a: np.ndarray, B: np.ndarray) -> np.ndarray:
    na = np.linalg.norm(a)
    nb = np.linalg.norm(B, axis=1)
    denom = na * nb
    out = np.zeros(len(B))
    ok = denom > 0
    out[ok] = (B[ok] @ a) / denom[ok]
    return out


def rerank_topn(
    index: Index, candidates: Sequence[Hit], q_desc: np.ndarray | None, n_rr: int | None = None
) -> list[Hit]:
    """Reorder the first ``n_rr`` candidates by descriptor cosine similarity.

    Candidates without a descriptor sink to the end of the window in their
    original order; everything past the window is returned untouched.
    """
    candidates = list(candidates)
    n_rr = len(candidates) if n_rr is None else n_rr
    if n_rr > len(candidates) or n_rr < 0:
        raise WindowTooLarge(f"window {n_rr} exceeds {len(candidates)} candidates")
    if q_desc is None:
        raise MissingQueryDescriptor("query has no re-rank descriptor")
    q_desc = np.asarray(q_desc, dtype=np.float64)
    if index.rerank_dim is not None and q_desc.shape != (index.rerank_dim,):
        raise DimensionMismatch(f"query descriptor must be a {index.rerank_dim}-vector")
    if n_rr == 0:
        return candidates

    window, tail = candidates[:n_rr], candidates[n_rr:]
    pos = np.array([index.position(h.image_id) for h in window])
    present = index.has_descriptor()[pos]
    cos = np.full(len(window), -np.inf)
    if present.any():
        cos[present] = _cosine(q_desc, index.descriptors[pos[present]])
    # primary key: has descriptor, then cosine descending; stable otherwise
    order = np.lexsort((-cos, ~present))
    reranked = [
        Hit(window[i].image_id, window[i].score, float(cos[i]) if present[i] else None) for i in order
    ]
    return reranked + tail


class RetrievalResult(NamedTuple):
    initial: list[Hit]
    reranked: list[Hit]
    embedding: np.ndarray
    degenerate: bool


def retrieve(
    index: Index,
    mapper: Mapper,
    raw_features: np.ndarray,
    n: int,
    rerank: bool = True,
    query_descriptor: np.ndarray | None = None,
    exclude_id: str | None = None,
    n_rr: int | None = None,
    taxonomy=None,
) -> RetrievalResult:
    """Map a raw query, rank the index, optionally re-rank the top window.

    With ``rerank=False`` (or no query descriptor) both orders are identical.
    """
    if mapper.output_dim != index.dim:
        raise DimensionMismatch(f"mapper emits {mapper.output_dim}-d, index holds {index.dim}-d")
    if taxonomy is not None and taxonomy.n_leaves != index.dim:
        raise DimensionMismatch(f"taxonomy has {taxonomy.n_leaves} classes, index dim {index.dim}")
    out = forward(mapper, raw_features)
    initial = query_topn(index, out.embedding, n, exclude_id=exclude_id)
    reranked = initial
    if rerank and query_descriptor is not None and index.descriptors is not None:
        window = len(initial) if n_rr is None else min(n_rr, len(initial))
        reranked = rerank_topn(index, initial, query_descriptor, window)
    return RetrievalResult(initial, reranked, out.embedding, out.degenerate)


# ----------------------------------------------------------------------
# attention pooling of local descriptors
def softplus(x):
    return np.logaddexp(0.0, x)


@dataclass(frozen=True)
class AttentionPooler:
    """Two-layer scorer with softplus output plus an ``M x d`` projection.

    ``alpha(f) = softplus(w2 . relu(W1 f + b1) + b2)``, so every attention
    weight is non-negative.
    """

    hidden_weights: np.ndarray  # (h, d)
    hidden_bias: np.ndarray  # (h,)
    score_weights: np.ndarray  # (h,)
    score_bias: float
    proj_weights: np.ndarray  # (M, d)

    @property
    def feature_dim(self) -> int:
        return self.hidden_weights.shape[1]

    @classmethod
    def random(cls, feature_dim: int, out_dim: int, hidden: int = 16, rng=None) -> "AttentionPooler":
        rng = np.random.default_rng(rng)
        return cls(
            hidden_weights=rng.normal(0, 1 / np.sqrt(feature_dim), (hidden, feature_dim)),
            hidden_bias=np.zeros(hidden),
            score_weights=rng.normal(0, 1 / np.sqrt(hidden), hidden),
            score_bias=0.0,
            proj_weights=rng.normal(0, 1 / np.sqrt(feature_dim), (out_dim, feature_dim)),
        )

    def scores(self, F: np.ndarray) -> np.ndarray:
        hidden = np.maximum(F @ np.asarray(self.hidden_weights).T + self.hidden_bias, 0.0)
        return softplus(hidden @ self.score_weights + self.score_bias)


def attention_aggregate(pooler: AttentionPooler, local_features) -> tuple[np.ndarray, np.ndarray]:
    """Attention-weighted sum of local features, projected by ``W``.

    Returns ``(y, pooled)`` where ``pooled = sum_n alpha(f_n) f_n`` is the
    image descriptor and ``y = W @ pooled``.
    """
    F = np.asarray(local_features, dtype=np.float64)
    if F.size == 0:
        raise EmptyFeatureSet("no local features to aggregate")
    if F.ndim != 2 or F.shape[1] != pooler.feature_dim:
        raise DimensionMismatch(f"local features must be (N, {pooler.feature_dim}), got {F.shape}")
    pooled = pooler.scores(F) @ F
    return np.asarray(pooler.proj_weights) @ pooled, pooled
