"""
Unit vectors whose dot products are the tree similarities
=========================================================

A lower-triangular Cholesky factor of the similarity matrix gives one unit
vector per class, with pairwise dot products equal to the tree similarity.
"""

import time

import numpy as np

from hiersearch import compute_class_embeddings, gram_reconstruction_error, random_taxonomy, unseen_similarity

# A random tree with the same level counts as a 143-monument collection.
tax = random_taxonomy((5, 11, 37, 143), rng=0)
S = tax.similarity_matrix()

start = time.perf_counter()
table = compute_class_embeddings(S, tax.leaf_ids)
print(f"{table.n_classes} classes in {table.embedding_dim} dims, {time.perf_counter() - start:.3f}s")

# Row norms are one and the Gram matrix reproduces S.
print("max |norm - 1|", np.abs(np.linalg.norm(table.vectors, axis=1) - 1).max())
print("Gram error", gram_reconstruction_error(table, S))

# Rank-deficient input is fine: two identical classes get identical vectors
# and the zero pivot leaves a zero column.
dup = np.array([[1, 1, 0.5], [1, 1, 0.5], [0.5, 0.5, 1]])
print(compute_class_embeddings(dup).vectors)

# Any unit vector in the embedding space can be compared with every class.
# The normalized mean of two siblings sits close to both of them.
a, b = table.vectors[0], table.vectors[1]
q = (a + b) / np.linalg.norm(a + b)
sims = unseen_similarity(table, q)
print("closest classes", [tax.leaf_ids[i] for i in np.argsort(-sims)[:4]])
