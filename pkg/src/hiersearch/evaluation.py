"""Hierarchy-aware retrieval metrics and level-wise classification analysis.

Hierarchical precision at ``k`` compares the summed class similarity of the
top ``k`` results with the best sum any ordering of the candidate pool could
reach::

    HP@k = sum_{i<=k} s(y_q, y_i) / max_pi sum_{i<=k} s(y_q, y_pi(i))

The maximum is attained by sorting the pool similarities in descending order,
so the denominator is a sorted prefix sum. AHP@K is the mean of HP@1..HP@K.
"""

from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Callable, Hashable, Iterable, Sequence

import numpy as np

from .errors import (
    EmptyPredictions,
    KOutOfRange,
    LevelNotOnPath,
    NoRelevantItems,
    ValidationError,
    ZeroDenominator,
)
from .learner import Mapper, classify
from .retrieval import ImageRecord, Index, retrieve
from .taxonomy import Taxonomy

Similarity = Callable[[Hashable, Hashable], float]
DEFAULT_K = 40


class LeafSimilarity:
    """Cached leaf-to-leaf similarity lookup backed by the full matrix."""

    def __init__(self, taxonomy: Taxonomy):
        self.taxonomy = taxonomy
        self.matrix = taxonomy.similarity_matrix()

    def __call__(self, a, b) -> float:
        t = self.taxonomy
        return float(self.matrix[t.leaf_index(a), t.leaf_index(b)])


@dataclass(frozen=True)
class RetrievalRun:
    query_label: Hashable
    ranked_labels: tuple
    dataset_labels: tuple

    def __post_init__(self):
        object.__setattr__(self, "ranked_labels", tuple(self.ranked_labels))
        object.__setattr__(self, "dataset_labels", tuple(self.dataset_labels))
        if not self.ranked_labels:
            raise ValidationError("a retrieval run needs at least one result")
        if Counter(self.ranked_labels) - Counter(self.dataset_labels):
            raise ValidationError("ranked labels are not a sub-multiset of the dataset labels")

    @property
    def m(self) -> int:
        return len(self.ranked_labels)


def _sims(run: RetrievalRun, sim: Similarity) -> tuple[np.ndarray, np.ndarray]:
    cache = {lab: sim(run.query_label, lab) for lab in set(run.dataset_labels)}
    ranked = np.array([cache[lab] for lab in run.ranked_labels], dtype=np.float64)
    pool = np.array([cache[lab] for lab in run.dataset_labels], dtype=np.float64)
    return ranked, pool


def hp_curve(run: RetrievalRun, K: int, sim: Similarity) -> np.ndarray:
    """HP@k for ``k = 1..K`` as an array of length ``K``."""
    if not 1 <= K <= run.m:
        raise KOutOfRange(f"k={K} outside [1, {run.m}]")
    ranked, pool = _sims(run, sim)
    best = np.cumsum(np.sort(pool)[::-1][:K])
    if best[0] <= 0:
        raise ZeroDenominator(
            f"query class {run.query_label!r} has zero similarity to every candidate"
        )
    return np.cumsum(ranked[:K]) / best


def hp_at_k(run: RetrievalRun, k: int, sim: Similarity) -> float:
    return float(hp_curve(run, k, sim)[-1])


def ahp_at_K(run: RetrievalRun, K: int, sim: Similarity) -> float:
    """Unit-spaced mean of HP@1..HP@K (area under the HP curve over K)."""
    return float(hp_curve(run, K, sim).mean())


def mahp_at_K(runs: Sequence[RetrievalRun], K: int, sim: Similarity) -> float:
    if not runs:
        raise ValidationError("no runs")
    return float(np.mean([ahp_at_K(r, K, sim) for r in runs]))


def precision_at_k(run: RetrievalRun, k: int) -> float:
    if not 1 <= k <= run.m:
        raise KOutOfRange(f"k={k} outside [1, {run.m}]")
    return sum(lab == run.query_label for lab in run.ranked_labels[:k]) / k


def average_precision(run: RetrievalRun) -> float:
    """Mean of P@rank over relevant hits, divided by all relevant items in the pool."""
    total = sum(lab == run.query_label for lab in run.dataset_labels)
    if total == 0:
        raise NoRelevantItems(f"no items of class {run.query_label!r} in the pool")
    hits = np.array([lab == run.query_label for lab in run.ranked_labels])
    ranks = np.flatnonzero(hits) + 1
    return float((np.arange(1, len(ranks) + 1) / ranks).sum() / total)


def mean_average_precision(runs: Iterable[RetrievalRun]) -> float:
    aps = []
    skipped = 0
    for run in runs:
        try:
            aps.append(average_precision(run))
        except NoRelevantItems:
            skipped += 1
    if skipped:
        warnings.warn(f"{skipped} run(s) without relevant items excluded from mAP", stacklevel=2)
    if not aps:
        raise NoRelevantItems("no run has relevant items")
    return float(np.mean(aps))


@dataclass
class LevelConfusion:
    level: str
    labels: list[str]
    matrix: np.ndarray  # rows: true, columns: predicted
    accuracy: float


def level_confusion(
    predictions: Sequence[tuple[str, str]], taxonomy: Taxonomy, level: str
) -> LevelConfusion:
    """Confusion matrix after projecting true and predicted leaves to ``level``."""
    if not predictions:
        raise EmptyPredictions("no predictions")
    labels = taxonomy.level_nodes(level)
    pos = {name: i for i, name in enumerate(labels)}
    matrix = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for true, pred in predictions:
        matrix[pos[taxonomy.project_to_level(true, level)], pos[taxonomy.project_to_level(pred, level)]] += 1
    return LevelConfusion(level, labels, matrix, float(np.trace(matrix) / matrix.sum()))


@dataclass
class RetrievalMetrics:
    hp_curve: list[float]
    mahp: float
    p_at_k: list[float]
    map: float | None


@dataclass
class EvalReport:
    K: int
    n_queries: int
    before_rerank: RetrievalMetrics
    after_rerank: RetrievalMetrics
    per_level: dict[str, LevelConfusion] = field(default_factory=dict)
    skipped_queries: list[str] = field(default_factory=list)

    @property
    def mahp_at_K(self) -> float:
        return self.after_rerank.mahp

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "n_queries": self.n_queries,
            "before_rerank": asdict(self.before_rerank),
            "after_rerank": asdict(self.after_rerank),
            "per_level": {
                lvl: {
                    "labels": c.labels,
                    "accuracy": c.accuracy,
                    "confusion": c.matrix.tolist(),
                }
                for lvl, c in self.per_level.items()
            },
            "skipped_queries": self.skipped_queries,
        }


def _summarize(runs: list[RetrievalRun], K: int, sim: Similarity) -> RetrievalMetrics:
    curves = np.array([hp_curve(r, K, sim) for r in runs])
    p_at_k = [float(np.mean([precision_at_k(r, k) for r in runs])) for k in range(1, K + 1)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            mAP = mean_average_precision(runs)
        except NoRelevantItems:
            mAP = None
    return RetrievalMetrics(
        hp_curve=curves.mean(axis=0).tolist(),
        mahp=float(curves.mean()),
        p_at_k=p_at_k,
        map=mAP,
    )


def evaluate_retrieval(
    index: Index,
    mapper: Mapper,
    taxonomy: Taxonomy,
    test_set: Sequence[ImageRecord],
    K: int = DEFAULT_K,
    rerank: bool = True,
    include_self: bool = False,
    n_rr: int | None = None,
) -> EvalReport:
    """Use every test record as a query against the index.

    Each query is excluded from its own candidate pool unless
    ``include_self``. The full pool is ranked so the HP denominator and AP see
    every candidate; re-ranking touches the first ``n_rr`` (default ``K``).
    Queries whose class is maximally dissimilar to the entire pool are
    skipped and listed in ``skipped_queries``.
    """
    if not test_set:
        raise EmptyPredictions("empty test set")
    if any(lab is None for lab in index.labels):
        raise ValidationError("every indexed record needs a label for evaluation")
    sim = LeafSimilarity(taxonomy)
    n_rr = K if n_rr is None else n_rr

    before: list[RetrievalRun] = []
    after: list[RetrievalRun] = []
    skipped: list[str] = []
    predictions = []
    for rec in sorted(test_set, key=lambda r: r.image_id):
        if rec.raw_features is None or rec.label is None:
            raise ValidationError(f"test record {rec.image_id} needs raw features and a label")
        exclude = None if include_self else rec.image_id
        pool = len(index) - (1 if exclude in index._pos else 0)
        if not 1 <= K <= pool:
            raise KOutOfRange(f"K={K} outside [1, {pool}] for query {rec.image_id}")
        res = retrieve(
            index, mapper, rec.raw_features, pool, rerank=rerank,
            query_descriptor=rec.rerank_descriptor, exclude_id=exclude, n_rr=min(n_rr, pool),
        )
        dataset = [lab for iid, lab in zip(index.image_ids, index.labels) if iid != exclude]
        run_b = RetrievalRun(rec.label, [index.label_of(h.image_id) for h in res.initial], dataset)
        run_a = RetrievalRun(rec.label, [index.label_of(h.image_id) for h in res.reranked], dataset)
        if max(sim(rec.label, lab) for lab in set(dataset)) <= 0:
            skipped.append(rec.image_id)
        else:
            before.append(run_b)
            after.append(run_a)
        pred, _ = classify(mapper, rec.raw_features)
        if pred < taxonomy.n_leaves:
            predictions.append((rec.label, taxonomy.leaf_ids[pred]))

    if skipped:
        warnings.warn(f"{len(skipped)} query(ies) with zero HP denominator skipped", stacklevel=2)
    if not before:
        raise ZeroDenominator("every query was maximally dissimilar to its pool")
    per_level = {}
    if predictions:
        for level in taxonomy.levels():
            try:
                per_level[level] = level_confusion(predictions, taxonomy, level)
            except LevelNotOnPath:
                continue
    return EvalReport(
        K=K,
        n_queries=len(before),
        before_rerank=_summarize(before, K, sim),
        after_rerank=_summarize(after, K, sim),
        per_level=per_level,
        skipped_queries=skipped,
    )
