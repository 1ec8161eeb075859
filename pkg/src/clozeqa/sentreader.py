"""Per-sentence entity scoring reader.

Each context sentence is paired with the question as [CLS] sentence [SEP]
question [SEP]. Every candidate occurrence in the sentence is scored by a
one-hidden-layer MLP over [entity embedding ; placeholder embedding], and
a candidate's document score is the maximum over all its occurrences in
all sentences.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aoa import ScoreVector
from .corpus import ClozeSample
from .encoder import JointInput, ToyEmbedding, assemble_input
from .mathcore import MlpParams, Tensor, mlp_forward, softmax
from .mathcore.tensor import concat_vec, gather_rows, log, max_vec, mean_axis0, pick, scale, stack_vec
from .tokenizer import Segment, TokenSeq, Vocab, wordpiece_tokenize

# words ending here do not terminate a sentence even before an uppercase start
ABBREVIATIONS = frozenset(
    {"e.g", "i.e", "etc", "vs", "cf", "al", "fig", "figs", "no", "dr", "mr", "mrs", "ms", "st"}
)

_TERMINATORS = ".!?"


def _is_sentence_start(char: str) -> bool:
    return char.isupper() or char == "@"


def split_sentences(context: str) -> list[str]:
    """Rule-based sentence split.

    A sentence ends at '.', '!' or '?' followed by whitespace and an
    uppercase letter or an entity marker, unless the preceding word is a
    known abbreviation. Joining the outputs with single spaces restores
    the whitespace-normalized input.
    """
    text = context
    boundaries = []
    for i, ch in enumerate(text):
        if ch not in _TERMINATORS or i + 1 >= len(text) or not text[i + 1].isspace():
            continue
        after = i + 1
        while after < len(text) and text[after].isspace():
            after += 1
        if after >= len(text) or not _is_sentence_start(text[after]):
            continue
        before = text[:i].split()
        last_word = before[-1].lower().lstrip("(\"'") if before else ""
        if last_word in ABBREVIATIONS:
            continue
        boundaries.append(i + 1)
    sentences = []
    start = 0
    for cut in boundaries:
        chunk = text[start:cut].strip()
        if chunk:
            sentences.append(chunk)
        start = cut
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences if sentences else ([context] if context else [])


@dataclass
class SentencePair:
    """One sentence joined with the question, plus occurrence bookkeeping."""

    sentence: TokenSeq
    question: TokenSeq
    joint: JointInput
    entity_occurrences: dict[str, list[list[int]]]  # marker -> occurrences -> joint rows
    placeholder_pos: int

    def __post_init__(self):
        mask_positions = [i for i, t in enumerate(self.joint.tokens) if t == "[MASK]"]
        if mask_positions != [self.placeholder_pos]:
            raise ValueError("sentence pair must contain the placeholder exactly once")
        context_rows = set(self.joint.context_positions)
        for marker, occurrences in self.entity_occurrences.items():
            for rows in occurrences:
                if not set(rows) <= context_rows:
                    raise ValueError(f"{marker}: occurrence outside the sentence segment")


def build_sentence_pairs(
    sample: ClozeSample, vocab: Vocab, limit: int = 512
) -> list[SentencePair]:
    """Sentence/question pairs for every sentence containing a candidate."""
    question = wordpiece_tokenize(sample.question, vocab, Segment.QUESTION)
    pairs = []
    for s_i, sentence_text in enumerate(split_sentences(sample.context)):
        sentence = wordpiece_tokenize(sentence_text, vocab, Segment.CONTEXT)
        joint = assemble_input(sentence, question, vocab, limit, uid=f"{sample.uid}#s{s_i}")
        occurrences: dict[str, list[list[int]]] = {}
        for pos in joint.context_positions:
            token = joint.tokens[pos]
            if token in sample.candidates:
                occurrences.setdefault(token, []).append([pos])
        if not occurrences:
            continue  # nothing to score here
        mask_positions = [i for i, t in enumerate(joint.tokens) if t == "[MASK]"]
        if len(mask_positions) != 1:
            raise ValueError(f"{sample.uid}: placeholder missing from question")
        pairs.append(SentencePair(sentence, question, joint, occurrences, mask_positions[0]))
    return pairs


def score_entities_in_sentence(pair: SentencePair, backend, scorer: MlpParams) -> dict[str, Tensor]:
    """Score each entity present in the sentence against the placeholder.

    An occurrence's embedding is the mean of its token rows from the
    joint encoding; multiple occurrences of the same entity inside the
    sentence max-pool.
    """
    embedded = backend.embed(pair.joint)
    placeholder = gather_rows(embedded, [pair.placeholder_pos])
    placeholder_vec = mean_axis0(placeholder)
    out: dict[str, Tensor] = {}
    for marker, occurrences in pair.entity_occurrences.items():
        per_occurrence = []
        for rows in occurrences:
            entity_vec = mean_axis0(gather_rows(embedded, rows))
            score = mlp_forward(concat_vec(entity_vec, placeholder_vec), scorer)
            per_occurrence.append(pick(score, 0))
        out[marker] = per_occurrence[0] if len(per_occurrence) == 1 else max_vec(
            stack_vec(per_occurrence)
        )
    return out


def score_document(sample: ClozeSample, backend, scorer: MlpParams,
                   pairs: list[SentencePair] | None = None,
                   vocab: Vocab | None = None, limit: int = 512) -> ScoreVector:
    """Max over sentences and occurrences per candidate.

    Candidates never seen in any sentence score one less than the lowest
    seen score (0.0 when nothing at all was seen), keeping them last
    without poisoning gradients.
    """
    if pairs is None:
        if vocab is None:
            raise ValueError("score_document needs prebuilt pairs or a vocab")
        pairs = build_sentence_pairs(sample, vocab, limit)
    best: dict[str, list[Tensor]] = {}
    for pair in pairs:
        for marker, score in score_entities_in_sentence(pair, backend, scorer).items():
            best.setdefault(marker, []).append(score)
    seen_values = [v for scores in best.values() for v in scores]
    floor = min((float(v.data) for v in seen_values), default=1.0) - 1.0
    per_candidate = []
    for marker in sample.candidates:
        scores = best.get(marker)
        if not scores:
            per_candidate.append(Tensor(floor))
        elif len(scores) == 1:
            per_candidate.append(scores[0])
        else:
            per_candidate.append(max_vec(stack_vec(scores)))
    return ScoreVector(list(sample.candidates), stack_vec(per_candidate))


def softmax_nll(scores: ScoreVector, gold: str) -> Tensor:
    """Candidate-normalized negative log likelihood for real-valued scores."""
    gold_idx = scores.candidates.index(gold)
    return scale(log(pick(softmax(scores.scores), gold_idx)), -1.0)


@dataclass
class SentConfig:
    embed_dim: int = 64
    scorer_hidden: int = 32
    limit: int = 512
    seed: int = 0
    freeze_top_layer: bool = False


class SentReader:
    """Sentence-pair reader with an MLP entity-vs-placeholder scorer."""

    def __init__(self, vocab: Vocab, config: SentConfig | None = None, backend=None):
        self.vocab = vocab
        self.config = config or SentConfig()
        rng = np.random.default_rng(self.config.seed)
        if backend is None:
            backend = ToyEmbedding(len(vocab), self.config.embed_dim, rng)
        self.backend = backend
        self.scorer = MlpParams.init(2 * self.config.embed_dim, self.config.scorer_hidden, 1, rng)
        self._pairs: dict[str, list[SentencePair]] = {}

    def prepare(self, sample: ClozeSample) -> list[SentencePair]:
        cached = self._pairs.get(sample.uid)
        if cached is None:
            cached = build_sentence_pairs(sample, self.vocab, self.config.limit)
            self._pairs[sample.uid] = cached
        return cached

    def score_sample(self, sample: ClozeSample) -> ScoreVector:
        return score_document(sample, self.backend, self.scorer, pairs=self.prepare(sample))

    def loss(self, sample: ClozeSample) -> Tensor:
        return softmax_nll(self.score_sample(sample), sample.gold)

    def predict(self, sample: ClozeSample) -> str:
        return self.score_sample(sample).best()

    def parameters(self) -> dict[str, Tensor]:
        out = dict(self.backend.params("sent.embed"))
        out.update(self.scorer.tensors("sent.scorer"))
        return out

    def param_groups(self) -> dict[str, set[str]]:
        backend_names = set(self.backend.params("sent.embed"))
        return {"encoder": backend_names, "main": set(self.parameters()) - backend_names}

    def frozen_param_names(self) -> tuple[str, ...]:
        if self.config.freeze_top_layer:
            return self.backend.top_layer_names("sent.embed")
        return ()
