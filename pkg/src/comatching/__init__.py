"""Co-matching for multiple-choice reading comprehension.

A self-contained implementation: a small reverse-mode autodiff engine over
rank-2 float64 tensors, bidirectional LSTM encoders, an attention-based
co-matching layer that matches each passage position against both the
question and a candidate answer, hierarchical sentence/document aggregation,
and a training/evaluation harness with bit-exact checkpoints.
"""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import (
    Batch,
    EmbeddingTable,
    EncodedExample,
    RawExample,
    TruncationCaps,
    Vocabulary,
    build_vocab,
    encode_example,
    load_embeddings,
    load_race_dir,
    load_race_file,
    make_batch,
    make_batches,
    random_embeddings,
    split_sentences,
    tokenize,
    tokenized_view,
)
from .errors import (
    CheckpointError,
    ComatchingError,
    ConfigError,
    DataError,
    EmbeddingFormatError,
    EmptyPoolError,
    EmptySequenceError,
    FullyMaskedError,
    NumericError,
    ShapeError,
)
from .lstm import BiLstmWeights, LstmWeights, bilstm_encode, lstm_cell, lstm_run
from .model import (
    CoMatchResult,
    ModelParams,
    attention_match,
    bucket_by_question_type,
    candidate_loss,
    co_match,
    document_aggregate,
    encode_sequence,
    flat_aggregate_forward,
    forward_scores,
    init_params,
    predict,
    score_candidates,
    sentence_aggregate,
    single_match_forward,
)
from .rng import substream
from .synthetic import synthetic_examples, write_exam_dir
from .tensor import (
    Tape,
    Tensor,
    add,
    add_bias_broadcast,
    concat_cols,
    concat_rows,
    elementwise_mul,
    elementwise_sub,
    gather_cols,
    grad_check,
    gradient_fault,
    log_sum_exp,
    matmul,
    relu,
    row_max_pool,
    sigmoid,
    slice_cols,
    slice_rows,
    softmax_columns,
    sum_all,
    tanh,
    transpose,
)
from .training import (
    AdamState,
    BucketStats,
    EvalReport,
    TrainConfig,
    TrainResult,
    adam_step,
    clip_gradients,
    evaluate,
    train,
)

__version__ = "0.1.0"
