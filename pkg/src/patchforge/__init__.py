"""patchforge: learn to patch vulnerable C functions from bug-fix commits.

Pipeline: mine push-event archives for bug-fix commits, extract changed
function pairs, learn a subword vocabulary (or a fixed-vocabulary
baseline), train a transformer encoder-decoder, beam-search candidate
patches, and score them against ground-truth fixes at function and
vulnerability granularity.
"""

__version__ = "0.1.0"

from .bpe import BpeModel, FixedVocab, build_fixed_vocab, decode, encode, encode_fixed, train_bpe
from .clexer import detokenize, lex, lex_texts
from .evaluation import EvalReport, VulnerabilityRecord, evaluate, function_fixed, oov_analysis
from .extraction import (
    FunctionPair,
    FunctionSpan,
    dedup_and_bucket,
    extract_functions,
    pair_changed_functions,
    strip_comments,
)
from .mining import BugFixLabel, classify_commit, filter_c_commits, mine_stream
from .model import ModelConfig, forward, init_params, loss_and_gradients
from .training import OptimizerConfig, train

__all__ = [
    "BpeModel", "FixedVocab", "build_fixed_vocab", "decode", "encode", "encode_fixed",
    "train_bpe", "detokenize", "lex", "lex_texts", "EvalReport", "VulnerabilityRecord",
    "evaluate", "function_fixed", "oov_analysis", "FunctionPair", "FunctionSpan",
    "dedup_and_bucket", "extract_functions", "pair_changed_functions", "strip_comments",
    "BugFixLabel", "classify_commit", "filter_c_commits", "mine_stream", "ModelConfig",
    "forward", "init_params", "loss_and_gradients", "OptimizerConfig", "train",
]
