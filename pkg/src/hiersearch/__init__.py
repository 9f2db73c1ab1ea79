"""Taxonomy-aware semantic image retrieval.

Class hierarchy -> unit-sphere class embeddings -> learned feature mapper ->
exact dot-product index with descriptor re-ranking -> hierarchical metrics.
"""

from .embedding import (
    ClassEmbeddingTable,
    compute_class_embeddings,
    gram_reconstruction_error,
    unseen_similarity,
)
from .evaluation import (
    EvalReport,
    LeafSimilarity,
    RetrievalRun,
    ahp_at_K,
    average_precision,
    evaluate_retrieval,
    hp_at_k,
    hp_curve,
    level_confusion,
    mahp_at_K,
    mean_average_precision,
    precision_at_k,
)
from .learner import (
    Mapper,
    TrainConfig,
    classify,
    combined_loss,
    correlation_loss,
    embed,
    forward,
    loss_gradient,
    sgdr_learning_rate,
    train_mapper,
)
from .retrieval import (
    AttentionPooler,
    Hit,
    ImageRecord,
    Index,
    attention_aggregate,
    build_index,
    embed_records,
    query_topn,
    rerank_topn,
    retrieve,
)
from .synth import SynthDataset, synthesize
from .taxonomy import LEVELS, TaxNode, Taxonomy, parse_taxonomy, random_taxonomy

__version__ = "0.1.0"
