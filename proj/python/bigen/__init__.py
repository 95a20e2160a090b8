"""Python access to the BiGen report generation core."""

from ._bigen import (
    Case,
    Corpus,
    CorpusConfig,
    DataError,
    KnowledgeBank,
    NumericalFault,
    Splits,
    UsageError,
    bleu,
    build_bank,
    evaluate,
    fact_ent_simplified,
    generate_corpus,
    her2_metrics,
    load_bank,
    load_corpus,
    meteor_simplified,
    partition_regions,
    retrieve_all,
    rouge_l,
    run_cli,
    save_bank,
    select_top_k,
    selection_count,
    split_dataset,
    split_sentences,
    tokenize,
    words,
)

__all__ = [name for name in dir() if not name.startswith("_")]
