"""
Tree similarity between monument classes
=========================================

Load a small hand-written hierarchy and see how the height of the lowest
common subsumer turns into a similarity score between leaf classes.
"""

from pathlib import Path

import numpy as np

from hiersearch import parse_taxonomy

tax = parse_taxonomy((Path(__file__).parent / "data" / "t0.taxonomy").read_text())
print(f"{len(tax)} nodes, {tax.n_leaves} leaves, max height {tax.max_height}")

# Two tombs of one dynasty meet one level above the leaves.
print(tax.lowest_common_subsumer("humayun_tomb", "taj_mahal"))
print(tax.class_similarity("humayun_tomb", "taj_mahal"))

# A tomb and a stupa only meet at the root, so their similarity is zero.
print(tax.class_similarity("humayun_tomb", "sanchi_stupa"))

# The full leaf-by-leaf matrix. It is symmetric with a unit diagonal, and on
# a tree it is always positive semidefinite.
S = tax.similarity_matrix()
np.set_printoptions(precision=2, suppress=True)
print(tax.leaf_ids)
print(S)
print("smallest eigenvalue", np.linalg.eigvalsh(S).min())

# Projecting a leaf to a coarser level is how per-level accuracy is scored.
for level in tax.levels():
    print(level, tax.project_to_level("taj_mahal", level))
