"""Unit-hypersphere class embeddings from a class similarity matrix.

Given a symmetric, unit-diagonal, positive semidefinite similarity matrix
``S`` over ``n`` classes, we look for ``n`` unit vectors whose pairwise dot
products reproduce ``S``. A lower-triangular factor ``L`` with ``L @ L.T == S``
does exactly this: row ``i`` is the embedding of class ``i`` and only uses the
first ``i + 1`` coordinates, so each class adds one new direction on top of the
ones already placed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BadDiagonal, DimensionMismatch, NotPSD, NotSymmetric, NotUnitNorm

PSD_TOL = 1e-9
PIVOT_TOL = 1e-12
UNIT_TOL = 1e-6


@dataclass(frozen=True)
class ClassEmbeddingTable:
    """Per-class unit vectors; row ``i`` belongs to ``class_ids[i]``."""

    class_ids: tuple[str, ...]
    vectors: np.ndarray

    def __post_init__(self):
        vectors = np.array(self.vectors, dtype=np.float64)
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "class_ids", tuple(self.class_ids))
        if vectors.ndim != 2 or vectors.shape[0] != len(self.class_ids):
            raise DimensionMismatch(
                f"{len(self.class_ids)} class ids but vectors of shape {vectors.shape}"
            )

    @property
    def embedding_dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def n_classes(self) -> int:
        return self.vectors.shape[0]

    def __getitem__(self, class_id: str) -> np.ndarray:
        return self.vectors[self.class_ids.index(class_id)]


def validate_similarity(S: np.ndarray, tol: float = PSD_TOL) -> np.ndarray:
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionMismatch(f"similarity matrix must be square, got {S.shape}")
    if not np.all(np.isfinite(S)):
        raise NotSymmetric("similarity matrix has non-finite entries")
    if not np.allclose(S, S.T, rtol=0.0, atol=1e-12):
        raise NotSymmetric("similarity matrix is not symmetric")
    if not np.allclose(np.diag(S), 1.0, rtol=0.0, atol=1e-12):
        raise BadDiagonal("similarity matrix must have a unit diagonal")
    if S.size and (S.min() < -1e-12 or S.max() > 1 + 1e-12):
        raise BadDiagonal("similarity entries must lie in [0, 1]")
    lowest = float(np.linalg.eigvalsh(S).min()) if S.size else 0.0
    if lowest < -tol:
        raise NotPSD(lowest)
    return S


def compute_class_embeddings(
    S: np.ndarray, class_ids: Sequence[str] | None = None
) -> ClassEmbeddingTable:
    """Lower-triangular factor of ``S`` as a class embedding table.

    Near-zero pivots (duplicated classes) are set to zero together with the
    rest of their column, which keeps ``L @ L.T == S`` for semidefinite input.

    Raises:
        NotPSD: the most negative eigenvalue of ``S`` is below ``-1e-9``.
        NotSymmetric, BadDiagonal: malformed ``S``.
    """
    S = validate_similarity(S)
    n = S.shape[0]
    if class_ids is None:
        class_ids = [str(i) for i in range(n)]
    if len(class_ids) != n:
        raise DimensionMismatch(f"{len(class_ids)} class ids for a {n}x{n} matrix")

    L = np.zeros((n, n))
    for j in range(n):
        pivot = S[j, j] - L[j, :j] @ L[j, :j]
        if pivot <= PIVOT_TOL:
            # passed the eigenvalue gate, so this column is numerically null
            continue
        L[j, j] = np.sqrt(pivot)
        L[j + 1:, j] = (S[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return ClassEmbeddingTable(tuple(class_ids), L)


def gram_reconstruction_error(table: ClassEmbeddingTable, S: np.ndarray) -> float:
    """Largest absolute entry of ``Phi @ Phi.T - S``."""
    S = np.asarray(S, dtype=np.float64)
    phi = table.vectors
    if S.shape != (phi.shape[0], phi.shape[0]):
        raise DimensionMismatch(f"table has {phi.shape[0]} classes, S has shape {S.shape}")
    return float(np.abs(phi @ phi.T - S).max()) if S.size else 0.0


def unseen_similarity(table: ClassEmbeddingTable, query_vec: np.ndarray) -> np.ndarray:
    """Semantic similarity of a new unit embedding to every known class."""
    q = np.asarray(query_vec, dtype=np.float64)
    if q.shape != (table.embedding_dim,):
        raise DimensionMismatch(f"expected a {table.embedding_dim}-vector, got {q.shape}")
    if abs(np.linalg.norm(q) - 1.0) > UNIT_TOL:
        raise NotUnitNorm(f"query norm {np.linalg.norm(q):.6g} is not 1")
    return np.clip(table.vectors @ q, -1.0, 1.0)
