"""Two-stage prompt-aware text-video retrieval over embedding corpora."""

from ._proclip import (
    Corpus,
    FormatError,
    Index,
    Model,
    SynthSpec,
    TrainConfig,
    anneal_temperature,
    bench,
    contrastive_loss,
    cosine_similarity,
    evaluate,
    grad_check,
    hard_topk_train,
    index_corpus,
    metrics_from_ranks,
    read_corpus,
    read_index,
    registered_blocks,
    retained_count,
    retrieve,
    synth_corpus,
    topk_infer,
    train_distill_stage,
    train_retrieval_stage,
    validate_corpus,
    write_corpus,
)

__all__ = [name for name in dir() if not name.startswith("_")]
