"""Cloze-style machine reading comprehension engine.

Two candidate-scoring readers (attention-over-attention and per-sentence
MLP scoring) over a shared WordPiece token universe, an MLP weighting
layer fusing the two score vectors, a training loop with early stopping,
and an evaluation kit for paired-model comparison statistics.
"""

from .aoa import AggregationConfig, AoAConfig, AoAReader, ScoreVector, predict
from .corpus import (
    ClozeSample,
    DatasetSplit,
    SynthConfig,
    generate_synthetic,
    load_biomrc,
    make_batches,
)
from .encoder import Encoder, PrecomputedEmbedding, ToyEmbedding, assemble_input
from .ensemble import EnsembleSample, WeightingModel, collect_scores, train_weighting
from .evalkit import EvalRecord, accuracy, contingency, emit_report, mcnemar, union_accuracy
from .sentreader import SentConfig, SentReader, split_sentences
from .tokenizer import Vocab, build_vocab, detect_entities, wordpiece_tokenize
from .trainer import TrainConfig, TrainReport, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "AggregationConfig",
    "AoAConfig",
    "AoAReader",
    "ClozeSample",
    "DatasetSplit",
    "Encoder",
    "EnsembleSample",
    "EvalRecord",
    "PrecomputedEmbedding",
    "ScoreVector",
    "SentConfig",
    "SentReader",
    "SynthConfig",
    "ToyEmbedding",
    "TrainConfig",
    "TrainReport",
    "Vocab",
    "WeightingModel",
    "accuracy",
    "assemble_input",
    "build_vocab",
    "collect_scores",
    "contingency",
    "detect_entities",
    "emit_report",
    "evaluate",
    "generate_synthetic",
    "load_biomrc",
    "make_batches",
    "mcnemar",
    "predict",
    "split_sentences",
    "train",
    "train_weighting",
    "union_accuracy",
    "wordpiece_tokenize",
]
