"""Synthetic feature datasets for desk-scale experiments.

Each sample of leaf class ``c`` is ``phi(c) + sigma * noise`` in the class
embedding space, so class clusters inherit the taxonomy geometry. Optional
re-rank descriptors come from attention-pooling a handful of local features
drawn around a per-class visual prototype that is unrelated to the taxonomy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .embedding import ClassEmbeddingTable, compute_class_embeddings
from .errors import BadSigma, ValidationError
from .retrieval import AttentionPooler, ImageRecord, attention_aggregate
from .taxonomy import Taxonomy

DEFAULT_PER_CLASS = 50
DEFAULT_TRAIN_FRACTION = 0.8


@dataclass
class SynthDataset:
    train: list[ImageRecord]
    test: list[ImageRecord]
    table: ClassEmbeddingTable
    unseen: tuple[str, ...] = ()
    params: dict = field(default_factory=dict)

    def training_pairs(self, taxonomy: Taxonomy) -> tuple[np.ndarray, np.ndarray]:
        X = np.array([r.raw_features for r in self.train])
        y = np.array([taxonomy.leaf_index(r.label) for r in self.train])
        return X, y


def synthesize(
    taxonomy: Taxonomy,
    per_class: int = DEFAULT_PER_CLASS,
    sigma: float = 0.3,
    seed: int = 0,
    unseen: Sequence[str] = (),
    train_fraction: float = DEFAULT_TRAIN_FRACTION,
    descriptor_dim: int = 0,
    n_local: int = 8,
    local_noise: float = 1.0,
) -> SynthDataset:
    """Gaussian clusters around each leaf's class embedding.

    Leaves listed in ``unseen`` contribute test samples only. ``descriptor_dim``
    of 0 disables re-rank descriptors.
    """
    if not sigma >= 0:
        raise BadSigma(f"sigma must be non-negative, got {sigma}")
    if per_class < 1 or not 0 < train_fraction <= 1:
        raise ValidationError("per_class must be positive and train_fraction in (0, 1]")
    for name in unseen:
        taxonomy.leaf_index(name)
    rng = np.random.default_rng(seed)
    table = compute_class_embeddings(taxonomy.similarity_matrix(), taxonomy.leaf_ids)
    n = table.embedding_dim

    pooler = prototypes = None
    if descriptor_dim:
        pooler = AttentionPooler.random(descriptor_dim, descriptor_dim, rng=rng)
        prototypes = rng.normal(size=(taxonomy.n_leaves, descriptor_dim))

    n_train = int(round(per_class * train_fraction))
    train, test = [], []
    for i, leaf in enumerate(taxonomy.leaf_ids):
        X = table.vectors[i] + sigma * rng.normal(size=(per_class, n))
        for k in range(per_class):
            desc = None
            if pooler is not None:
                local = prototypes[i] + local_noise * rng.normal(size=(n_local, descriptor_dim))
                desc, _ = attention_aggregate(pooler, local)
            rec = ImageRecord(f"{leaf}_{k:04d}", raw_features=X[k], label=leaf, rerank_descriptor=desc)
            (test if leaf in unseen or k >= n_train else train).append(rec)
    params = {
        "per_class": per_class,
        "sigma": sigma,
        "seed": seed,
        "train_fraction": train_fraction,
        "descriptor_dim": descriptor_dim,
        "n_local": n_local,
        "unseen": list(unseen),
    }
    return SynthDataset(train, test, table, tuple(unseen), params)

