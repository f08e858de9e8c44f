"""doctag2vec: joint word/document/tag embeddings trained from raw
tagged text, with cosine k-NN tag prediction, bagged ensembles,
incremental training, and a precision/recall evaluation harness."""

from .corpus import (
    Dataset,
    Record,
    TagDictionary,
    TaggedDocument,
    Vocabulary,
    build_vocabulary,
    context_window,
    encode_document,
    load_dataset,
    read_records,
    tokenize,
    write_records,
)
from .errors import (
    AllWordsFiltered,
    ChecksumError,
    DegenerateTagSet,
    DocTag2VecError,
    DuplicateTag,
    EmptyDocument,
    EmptyVocabulary,
    FormatError,
    NaNDetected,
    ParseError,
    UnknownTag,
    ZeroVector,
)
from .evaluation import (
    MetricsReport,
    SweepPoint,
    evaluate_ensemble,
    overall_recall,
    precision_at_k,
    run_experiment,
    sweep_ensemble,
)
from .hsoftmax import HuffmanTree, build_huffman, hs_log_prob, path
from .inference import infer_document
from .model import (
    EmbeddingMatrices,
    Hyperparameters,
    Model,
    add_tags,
    init_model,
    load_model,
    save_model,
)
from .predictor import (
    Ensemble,
    Prediction,
    aggregate_selections,
    load_ensemble,
    predict_bagged,
    predict_knn,
    save_ensemble,
    train_ensemble,
)
from .synthetic import planted_clusters
from .trainer import (
    LossReport,
    TrainConfig,
    composite_context,
    hs_step,
    sample_negatives,
    sigmoid,
    tag_step,
    train,
    train_document,
    train_incremental,
)

__version__ = "0.1.0"
