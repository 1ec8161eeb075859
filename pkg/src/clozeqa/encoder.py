"""Joint input assembly, pluggable contextual embedding, segment-masked bi-GRU.

The joint sequence is [CLS] context [SEP] question [SEP]; when it exceeds
the length limit the context is trimmed at its tail and the question kept
intact. Two embedding backends exist: a trainable toy backend (lookup
table + sinusoidal position signal + one self-attention mixing layer) and
a frozen pass-through reading precomputed rows from disk, for users who
bring embeddings from a real pretrained model.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mathcore import GruParams, Tensor, bigru, gather_rows, mul_rows, softmax_rows
from .mathcore.tensor import ShapeError, add, matmul, scale, transpose
from .tokenizer import Segment, TokenSeq, Vocab


class EncoderError(ValueError):
    """Raised for unusable joint inputs or embedding files."""


@dataclass
class JointInput:
    """Token ids and segment labels of one [CLS];C;[SEP];Q;[SEP] sequence."""

    ids: list[int]
    segments: list[Segment]
    tokens: list[str]
    truncated: int  # context tokens dropped from the tail
    uid: str = ""

    def __post_init__(self):
        if self.segments[0] is not Segment.SPECIAL:
            raise EncoderError("joint input must start with [CLS]")
        if sum(1 for s in self.segments if s is Segment.SPECIAL) != 3:
            raise EncoderError("joint input must contain [CLS] and two [SEP]s")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def context_positions(self) -> list[int]:
        return [i for i, s in enumerate(self.segments) if s is Segment.CONTEXT]

    @property
    def question_positions(self) -> list[int]:
        return [i for i, s in enumerate(self.segments) if s is Segment.QUESTION]

    def segment_row_mask(self, segment: Segment) -> np.ndarray:
        return np.array([1.0 if s is segment else 0.0 for s in self.segments])


def assemble_input(
    context: TokenSeq,
    question: TokenSeq,
    vocab: Vocab,
    limit: int = 512,
    uid: str = "",
) -> JointInput:
    """Concatenate context and question with specials, trimming the context tail.

    The question is never altered; if it cannot fit alongside the three
    special tokens the input is rejected.
    """
    if len(question) + 3 > limit:
        raise EncoderError(
            f"question too long: {len(question)} tokens leave no room in limit {limit}"
        )
    max_context = limit - len(question) - 3
    truncated = max(0, len(context) - max_context)
    kept = len(context) - truncated

    ids = [vocab.cls_id] + context.ids[:kept] + [vocab.sep_id] + question.ids + [vocab.sep_id]
    segments = (
        [Segment.SPECIAL]
        + [Segment.CONTEXT] * kept
        + [Segment.SPECIAL]
        + [Segment.QUESTION] * len(question)
        + [Segment.SPECIAL]
    )
    tokens = ["[CLS]"] + context.tokens[:kept] + ["[SEP]"] + list(question.tokens) + ["[SEP]"]
    return JointInput(ids, segments, tokens, truncated, uid)


def sinusoid_signal(length: int, dim: int, amplitude: float = 0.1) -> np.ndarray:
    """Fixed position signal added to token embeddings."""
    pos = np.arange(length)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    out = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return amplitude * out


class ToyEmbedding:
    """Trainable contextual embedding: lookup + position + self-attention mix.

    One attention pass over the joint sequence makes a token's row depend
    on its surroundings, which is all the readers require of a
    "contextual" backend at desk scale.
    """

    kind = "toy"

    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator):
        from .mathcore import uniform_init

        self.vocab_size = vocab_size
        self.dim = dim
        self.table = uniform_init(rng, dim, (vocab_size, dim))
        self.w_query = uniform_init(rng, dim, (dim, dim))
        self.w_key = uniform_init(rng, dim, (dim, dim))
        self.w_value = uniform_init(rng, dim, (dim, dim))

    def embed(self, joint: JointInput) -> Tensor:
        for tid in joint.ids:
            if not 0 <= tid < self.vocab_size:
                raise EncoderError(f"token id {tid} outside backend vocabulary")
        x = add(gather_rows(self.table, joint.ids), Tensor(sinusoid_signal(len(joint), self.dim)))
        q = matmul(x, transpose(self.w_query))
        k = matmul(x, transpose(self.w_key))
        v = matmul(x, transpose(self.w_value))
        attn = softmax_rows(scale(matmul(q, transpose(k)), 1.0 / np.sqrt(self.dim)))
        return add(x, matmul(attn, v))

    def params(self, prefix: str = "embed") -> dict[str, Tensor]:
        return {
            f"{prefix}.table": self.table,
            f"{prefix}.w_query": self.w_query,
            f"{prefix}.w_key": self.w_key,
            f"{prefix}.w_value": self.w_value,
        }

    def top_layer_names(self, prefix: str = "embed") -> tuple[str, ...]:
        """The mixing layer; freezable in the sentence reader's preset."""
        return (f"{prefix}.w_query", f"{prefix}.w_key", f"{prefix}.w_value")


EMBED_MAGIC = b"CQEMB1\n"


def write_embedding_file(path: str | Path, uid: str, rows: np.ndarray) -> None:
    rows = np.ascontiguousarray(rows, dtype="<f8")
    if rows.ndim != 2:
        raise EncoderError("embedding rows must be 2-D")
    uid_bytes = uid.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(EMBED_MAGIC)
        fh.write(struct.pack("<IIH", rows.shape[0], rows.shape[1], len(uid_bytes)))
        fh.write(uid_bytes)
        fh.write(rows.tobytes())


def read_embedding_file(path: str | Path) -> tuple[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if not raw.startswith(EMBED_MAGIC):
        raise EncoderError(f"{path}: not an embedding file")
    off = len(EMBED_MAGIC)
    length, dim, uid_len = struct.unpack_from("<IIH", raw, off)
    off += struct.calcsize("<IIH")
    uid = raw[off : off + uid_len].decode("utf-8")
    off += uid_len
    expected = length * dim * 8
    if len(raw) - off != expected:
        raise EncoderError(f"{path}: payload is {len(raw) - off} bytes, expected {expected}")
    rows = np.frombuffer(raw, dtype="<f8", offset=off).reshape(length, dim).copy()
    return uid, rows


class PrecomputedEmbedding:
    """Frozen rows loaded from <dir>/<uid>.emb files."""

    kind = "precomputed"

    def __init__(self, directory: str | Path, dim: int):
        self.directory = Path(directory)
        self.dim = dim
        self._cache: dict[str, np.ndarray] = {}

    def embed(self, joint: JointInput) -> Tensor:
        if joint.uid not in self._cache:
            path = self.directory / f"{joint.uid}.emb"
            if not path.exists():
                raise EncoderError(f"no embedding file for sample {joint.uid!r} at {path}")
            uid, rows = read_embedding_file(path)
            if uid != joint.uid:
                raise EncoderError(f"{path}: header id {uid!r} != sample {joint.uid!r}")
            self._cache[joint.uid] = rows
        rows = self._cache[joint.uid]
        if rows.shape != (len(joint), self.dim):
            raise EncoderError(
                f"embedding rows {rows.shape} do not match input ({len(joint)}, {self.dim})"
            )
        return Tensor(rows)

    def params(self, prefix: str = "embed") -> dict[str, Tensor]:
        return {}

    def top_layer_names(self, prefix: str = "embed") -> tuple[str, ...]:
        return ()


def segment_mask(embedded: Tensor, segments: list[Segment]) -> tuple[Tensor, Tensor]:
    """Split the joint embedding into context and question halves.

    Rows of the other segment, and the [CLS]/[SEP] rows, are zeroed
    exactly; the two halves sum back to the original on token rows.
    """
    if embedded.shape[0] != len(segments):
        raise ShapeError("segment_mask: label count must match rows")
    ctx = np.array([1.0 if s is Segment.CONTEXT else 0.0 for s in segments])
    qst = np.array([1.0 if s is Segment.QUESTION else 0.0 for s in segments])
    return mul_rows(embedded, ctx), mul_rows(embedded, qst)


def bigru_encode(segment_rows: Tensor, fwd: GruParams, bwd: GruParams) -> Tensor:
    """Bidirectional recurrent pass over the full joint length (L x 2d)."""
    return bigru(segment_rows, fwd, bwd)


@dataclass
class EncodedPair:
    """Recurrent context/question representations over the joint sequence."""

    h_context: Tensor
    h_question: Tensor
    joint: JointInput

    @property
    def hidden_width(self) -> int:
        return self.h_context.shape[1]


class Encoder:
    """Backend embedding -> segment masking -> per-segment bi-GRU."""

    def __init__(self, backend, hidden_dim: int, rng: np.random.Generator):
        self.backend = backend
        self.hidden_dim = hidden_dim
        e = backend.dim
        self.ctx_fwd = GruParams.init(e, hidden_dim, rng)
        self.ctx_bwd = GruParams.init(e, hidden_dim, rng)
        self.q_fwd = GruParams.init(e, hidden_dim, rng)
        self.q_bwd = GruParams.init(e, hidden_dim, rng)

    def encode(self, joint: JointInput) -> EncodedPair:
        embedded = self.backend.embed(joint)
        e_ctx, e_qst = segment_mask(embedded, joint.segments)
        assert not e_ctx.data[
            [i for i, s in enumerate(joint.segments) if s is not Segment.CONTEXT]
        ].any(), "context embedding must be zero outside the context segment"
        h_ctx = bigru_encode(e_ctx, self.ctx_fwd, self.ctx_bwd)
        h_qst = bigru_encode(e_qst, self.q_fwd, self.q_bwd)
        # keep only the owning segment's rows; downstream reads none of the rest
        h_ctx = mul_rows(h_ctx, joint.segment_row_mask(Segment.CONTEXT))
        h_qst = mul_rows(h_qst, joint.segment_row_mask(Segment.QUESTION))
        return EncodedPair(h_ctx, h_qst, joint)

    def params(self, prefix: str = "encoder") -> dict[str, Tensor]:
        out = dict(self.backend.params(f"{prefix}.embed"))
        out.update(self.ctx_fwd.tensors(f"{prefix}.gru_ctx_fwd"))
        out.update(self.ctx_bwd.tensors(f"{prefix}.gru_ctx_bwd"))
        out.update(self.q_fwd.tensors(f"{prefix}.gru_q_fwd"))
        out.update(self.q_bwd.tensors(f"{prefix}.gru_q_bwd"))
        return out

    def backend_param_names(self, prefix: str = "encoder") -> set[str]:
        return set(self.backend.params(f"{prefix}.embed"))
