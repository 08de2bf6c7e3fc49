from ._core import (
    Checkpoint,
    IoError,
    ModelConfig,
    NumericError,
    Pipeline,
    QAExample,
    TokenizedInput,
    TrainConfig,
    TrainOutcome,
    ValidationError,
    Vocab,
    accuracy,
    auroc,
    build_vocab,
    class_counts,
    dump_corpus,
    encode_pair,
    exact_match,
    filter_where_questions,
    is_where_question,
    load_corpus,
    normalize_answer,
    parameter_count,
    parse_corpus,
    run_cli,
    span_f1,
    synth_corpus,
    tokenize,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
