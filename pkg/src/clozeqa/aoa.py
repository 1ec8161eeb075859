"""Attention-over-attention reader.

Pipeline per sample: encode the joint sequence, dot-product matching
matrix over true context x question positions, column-wise softmax for
context attention, averaged row-wise softmax for question attention,
their product as the attended context distribution, and candidate
aggregation of that distribution into one confidence score per candidate.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np

from .corpus import ClozeSample
from .encoder import EncodedPair, Encoder, EncoderError, JointInput, ToyEmbedding, assemble_input
from .mathcore import Tensor, mean_axis0, softmax, softmax_rows
from .mathcore.tensor import (
    ShapeError,
    gather_rows,
    log,
    matmul,
    max_vec,
    pick,
    seq_sum,
    stack_vec,
    sub,
    take_vec,
    transpose,
    tsum,
)
from .tokenizer import Segment, Vocab, wordpiece_tokenize

MAX = "max"
SUM = "sum"


@dataclass(frozen=True)
class AggregationConfig:
    """F1 over a candidate's tokens, F2 over each token's occurrences."""

    token_agg: str = SUM
    occurrence_agg: str = SUM

    def __post_init__(self):
        for name in (self.token_agg, self.occurrence_agg):
            if name not in (MAX, SUM):
                raise ValueError(f"aggregation must be '{MAX}' or '{SUM}', got {name!r}")

    @property
    def label(self) -> str:
        """Token/occurrence order, e.g. 'sum/max'."""
        return f"{self.token_agg}/{self.occurrence_agg}"


ALL_AGGREGATIONS = (
    AggregationConfig(MAX, MAX),
    AggregationConfig(MAX, SUM),
    AggregationConfig(SUM, MAX),
    AggregationConfig(SUM, SUM),
)


@dataclass
class CandidateIndex:
    """Token decomposition and context occurrence positions per candidate."""

    candidates: list[str]
    token_pieces: dict[str, list[int]]  # candidate -> ordered token ids
    occurrences: dict[int, list[int]]  # token id -> positions in the context segment
    context_len: int

    def __post_init__(self):
        for cand, pieces in self.token_pieces.items():
            if not pieces:
                raise ValueError(f"candidate {cand} has no token pieces")
        for tid, positions in self.occurrences.items():
            for p in positions:
                if not 0 <= p < self.context_len:
                    raise ValueError(f"token {tid} occurrence {p} outside context")


def build_candidate_index(sample: ClozeSample, joint: JointInput, vocab: Vocab) -> CandidateIndex:
    """Index candidate markers against the (possibly truncated) context."""
    context_ids = [joint.ids[i] for i in joint.context_positions]
    positions: dict[int, list[int]] = {}
    for pos, tid in enumerate(context_ids):
        positions.setdefault(tid, []).append(pos)

    token_pieces = {}
    occurrences: dict[int, list[int]] = {}
    for marker in sample.candidates:
        pieces = wordpiece_tokenize(marker, vocab, Segment.CONTEXT).ids
        token_pieces[marker] = pieces
        for tid in pieces:
            occurrences.setdefault(tid, positions.get(tid, []))
    return CandidateIndex(list(sample.candidates), token_pieces, occurrences, len(context_ids))


@dataclass
class AttentionState:
    """Intermediate attention quantities for one sample."""

    matching: Tensor  # |C| x |Q|
    alpha: Tensor  # |C| x |Q|, columns stochastic
    beta: Tensor  # |Q|
    attended: Tensor  # s, |C|


@dataclass
class ScoreVector:
    """Per-candidate confidence scores, aligned with candidate order."""

    candidates: list[str]
    scores: Tensor

    def __post_init__(self):
        if len(self.candidates) != self.scores.shape[0]:
            raise ShapeError("ScoreVector: candidate/score length mismatch")

    def argmax(self) -> int:
        return int(np.argmax(self.scores.data))  # first max wins on ties

    def best(self) -> str:
        return self.candidates[self.argmax()]

    def as_floats(self) -> list[float]:
        return [float(v) for v in self.scores.data]


def matching_matrix(pair: EncodedPair) -> Tensor:
    """M(i, j) = h_context(i) . h_question(j) over context x question positions."""
    ctx = pair.joint.context_positions
    qst = pair.joint.question_positions
    if not ctx:
        raise EncoderError("empty context segment")
    if not qst:
        raise EncoderError("empty question segment")
    h_c = gather_rows(pair.h_context, ctx)
    h_q = gather_rows(pair.h_question, qst)
    return matmul(h_c, transpose(h_q))


def context_attention(matching: Tensor) -> Tensor:
    """Column-wise softmax: each question token's distribution over the context."""
    return transpose(softmax_rows(transpose(matching)))


def question_attention(matching: Tensor) -> Tensor:
    """Row-wise softmaxes averaged over the context rows (question-level attention)."""
    return mean_axis0(softmax_rows(matching))


def attended_attention(alpha: Tensor, beta: Tensor) -> Tensor:
    """s_i = sum_j alpha(i, j) beta(j); a probability vector over the context."""
    if alpha.data.ndim != 2 or beta.data.ndim != 1 or alpha.shape[1] != beta.shape[0]:
        raise ShapeError(f"attended_attention: shapes {alpha.shape} and {beta.shape}")
    return matmul(alpha, beta)


def aggregate_candidates(s: Tensor, index: CandidateIndex, cfg: AggregationConfig) -> ScoreVector:
    """Fold the attended distribution into one score per candidate.

    F2 folds each token's occurrence positions (a token absent from the
    context contributes 0 under either fold), then F1 folds the
    candidate's tokens. Sums are sequential left-to-right folds so the
    result is bit-comparable with plain enumeration.
    """
    if s.data.ndim != 1 or s.shape[0] != index.context_len:
        raise ShapeError("aggregate_candidates: s does not match the context length")
    per_candidate = []
    for cand in index.candidates:
        token_scores = []
        for tid in index.token_pieces[cand]:
            positions = index.occurrences.get(tid, [])
            if not positions:
                token_scores.append(Tensor(0.0))
                continue
            values = take_vec(s, positions)
            token_scores.append(seq_sum(values) if cfg.occurrence_agg == SUM else max_vec(values))
        stacked = stack_vec(token_scores)
        per_candidate.append(seq_sum(stacked) if cfg.token_agg == SUM else max_vec(stacked))
    return ScoreVector(list(index.candidates), stack_vec(per_candidate))


def candidate_nll(scores: ScoreVector, gold: str) -> Tensor:
    """Negative log of the gold candidate's share of the total score mass.

    Aggregated attention scores are non-negative; when every candidate
    scores exactly 0 a softmax over the scores restores a usable
    distribution first.
    """
    gold_idx = scores.candidates.index(gold)
    vec = scores.scores
    if not vec.data.any():
        vec = softmax(vec)
    total = tsum(vec)
    return sub(log(total), log(pick(vec, gold_idx)))


@dataclass
class AoAConfig:
    embed_dim: int = 64
    hidden_dim: int = 64
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    limit: int = 512
    seed: int = 0


class AoAReader:
    """Attention-over-attention model over a fixed vocabulary."""

    def __init__(self, vocab: Vocab, config: AoAConfig | None = None, backend=None):
        self.vocab = vocab
        self.config = config or AoAConfig()
        rng = np.random.default_rng(self.config.seed)
        if backend is None:
            backend = ToyEmbedding(len(vocab), self.config.embed_dim, rng)
        self.encoder = Encoder(backend, self.config.hidden_dim, rng)
        self._prepared: dict[str, tuple[JointInput, CandidateIndex]] = {}

    # -- sample preparation -------------------------------------------------
    def prepare(self, sample: ClozeSample) -> tuple[JointInput, CandidateIndex]:
        cached = self._prepared.get(sample.uid)
        if cached is not None:
            return cached
        ctx_seq = wordpiece_tokenize(sample.context, self.vocab, Segment.CONTEXT)
        qst_seq = wordpiece_tokenize(sample.question, self.vocab, Segment.QUESTION)
        joint = assemble_input(ctx_seq, qst_seq, self.vocab, self.config.limit, uid=sample.uid)
        index = build_candidate_index(sample, joint, self.vocab)
        self._prepared[sample.uid] = (joint, index)
        return joint, index

    # -- forward paths ------------------------------------------------------
    def attention_state(self, sample: ClozeSample) -> AttentionState:
        joint, _ = self.prepare(sample)
        pair = self.encoder.encode(joint)
        m = matching_matrix(pair)
        alpha = context_attention(m)
        beta = question_attention(m)
        return AttentionState(m, alpha, beta, attended_attention(alpha, beta))

    def score_sample(self, sample: ClozeSample) -> ScoreVector:
        joint, index = self.prepare(sample)
        state = self.attention_state(sample)
        return aggregate_candidates(state.attended, index, self.config.aggregation)

    def loss(self, sample: ClozeSample) -> Tensor:
        return candidate_nll(self.score_sample(sample), sample.gold)

    def predict(self, sample: ClozeSample) -> str:
        return self.score_sample(sample).best()

    # -- parameter registry ---------------------------------------------------
    def parameters(self) -> dict[str, Tensor]:
        return self.encoder.params("aoa")

    def param_groups(self) -> dict[str, set[str]]:
        backend_names = self.encoder.backend_param_names("aoa")
        return {
            "encoder": backend_names,
            "main": set(self.parameters()) - backend_names,
        }


def predict(sample: ClozeSample, model) -> tuple[str, ScoreVector]:
    """Answer a sample with any reader exposing ``score_sample``.

    Ties break toward the earlier candidate in the sample's order.
    """
    scores = model.score_sample(sample)
    return scores.best(), scores
