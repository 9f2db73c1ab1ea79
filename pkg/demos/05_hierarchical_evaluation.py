"""
Hierarchical precision and per-level accuracy
=============================================

Hierarchical precision credits near misses: retrieving a sibling monument is
better than retrieving one from another era. We evaluate a trained mapper and
look at accuracy at each level of the tree.
"""

from pathlib import Path

from hiersearch import (
    LeafSimilarity,
    RetrievalRun,
    TrainConfig,
    build_index,
    embed_records,
    evaluate_retrieval,
    hp_curve,
    parse_taxonomy,
    random_taxonomy,
    synthesize,
    train_mapper,
)

# A hand-checkable run on the toy tree.
t0 = parse_taxonomy((Path(__file__).parent / "data" / "t0.taxonomy").read_text())
run = RetrievalRun(
    "taj_mahal",
    ["taj_mahal", "lodi_tomb", "taj_mahal", "sanchi_stupa"],
    ["taj_mahal", "taj_mahal", "lodi_tomb", "sanchi_stupa"],
)
curve = hp_curve(run, 4, LeafSimilarity(t0))
print("HP@1..4", curve.round(4).tolist(), "AHP@4", curve.mean())

# A full evaluation on synthetic data.
tax = random_taxonomy((2, 4, 8, 20), rng=7)
ds = synthesize(tax, per_class=50, sigma=0.25, seed=1)
mapper, _ = train_mapper(ds.training_pairs(tax), ds.table, TrainConfig(seed=3))
index = build_index(embed_records(mapper, ds.train + ds.test))
report = evaluate_retrieval(index, mapper, tax, ds.test, K=40, rerank=False)
print(f"{report.n_queries} queries, mAHP@40 {report.mahp_at_K:.4f}, mAP {report.after_rerank.map:.4f}")

# Accuracy can only go up as labels are coarsened.
for level, conf in report.per_level.items():
    print(f"{level:>9}: {conf.accuracy:.3f}")
