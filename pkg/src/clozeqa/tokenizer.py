"""WordPiece-style subword tokenization with entity-marker awareness.

Candidate entities appear in the data as pseudo-identifiers ("@entity42").
Those markers stay atomic: splitting one into digit pieces would let
unrelated entities share token positions and corrupt occurrence lookups,
so every marker seen at vocab-build time becomes a single vocabulary
token.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")
CONTINUATION_PREFIX = "##"
ENTITY_PATTERN = re.compile(r"@entity\d+")
MAX_WORD_CHARS = 100
# the dataset's question placeholder; tokenizes to [MASK] so readers can
# find the blank position regardless of vocabulary content
PLACEHOLDER_WORD = "XXXX"


class Segment(Enum):
    CONTEXT = "context"
    QUESTION = "question"
    SPECIAL = "special"


class VocabError(ValueError):
    """Raised for unbuildable or malformed vocabularies."""


@dataclass(frozen=True)
class Vocab:
    """Immutable token-string -> id map with the five special tokens first."""

    token_to_id: dict[str, int]
    id_to_token: tuple[str, ...]

    def __post_init__(self):
        for special in SPECIAL_TOKENS:
            if special not in self.token_to_id:
                raise VocabError(f"missing special token {special}")
        ids = sorted(self.token_to_id.values())
        if ids != list(range(len(self.token_to_id))):
            raise VocabError("token ids must be dense 0..N-1")
        if len(self.id_to_token) != len(self.token_to_id):
            raise VocabError("duplicate token strings")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id(self, token: str) -> int:
        return self.token_to_id[token]

    def token(self, idx: int) -> str:
        return self.id_to_token[idx]

    @property
    def pad_id(self) -> int:
        return self.token_to_id["[PAD]"]

    @property
    def unk_id(self) -> int:
        return self.token_to_id["[UNK]"]

    @property
    def cls_id(self) -> int:
        return self.token_to_id["[CLS]"]

    @property
    def sep_id(self) -> int:
        return self.token_to_id["[SEP]"]

    @property
    def mask_id(self) -> int:
        return self.token_to_id["[MASK]"]

    @classmethod
    def from_tokens(cls, tokens: Iterable[str]) -> "Vocab":
        ordered = list(tokens)
        mapping = {tok: i for i, tok in enumerate(ordered)}
        if len(mapping) != len(ordered):
            raise VocabError("duplicate token strings")
        return cls(mapping, tuple(ordered))

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.id_to_token) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls.from_tokens(lines)


@dataclass
class TokenSeq:
    """Parallel lists: token ids, segment labels, source character spans."""

    ids: list[int]
    segments: list[Segment]
    spans: list[tuple[int, int]]
    tokens: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not (len(self.ids) == len(self.segments) == len(self.spans)):
            raise ValueError("TokenSeq parallel lists must have equal length")
        last_end = -1
        for start, end in self.spans:
            if start < last_end:
                raise ValueError("TokenSeq spans must be ordered and non-overlapping")
            last_end = end

    def __len__(self) -> int:
        return len(self.ids)


def detect_entities(text: str) -> list[tuple[str, tuple[int, int]]]:
    """All maximal "@entity<digits>" markers with their character spans, in order."""
    return [(m.group(0), (m.start(), m.end())) for m in ENTITY_PATTERN.finditer(text)]


def _iter_words(text: str) -> Iterator[tuple[str, int]]:
    """Whitespace-delimited words with their start offsets."""
    for m in re.finditer(r"\S+", text):
        yield m.group(0), m.start()


def _word_fragments(word: str) -> Iterator[tuple[str, int, bool]]:
    """Split a word into entity markers and the plain text between them.

    Yields (fragment, offset_within_word, is_entity).
    """
    pos = 0
    for marker, (start, end) in detect_entities(word):
        if start > pos:
            yield word[pos:start], pos, False
        yield marker, start, True
        pos = end
    if pos < len(word):
        yield word[pos:], pos, False


def build_vocab(corpus: Iterable[str], max_size: int, min_freq: int = 1) -> Vocab:
    """Induce a subword vocabulary from whitespace-tokenized documents.

    Mandatory tier: the special tokens, every single character seen, and
    every entity marker seen (markers are atomic, see module docstring).
    The remaining budget goes to whole words and "##"-prefixed suffixes
    with count >= min_freq, ordered by descending count then
    lexicographically, truncated at max_size.
    """
    docs = list(corpus)
    if not docs or all(not d.strip() for d in docs):
        raise VocabError("empty corpus")

    chars: set[str] = set()
    entities: dict[str, None] = {}  # insertion-ordered set
    counts: dict[str, int] = {}
    for doc in docs:
        for word, _ in _iter_words(doc):
            if word == PLACEHOLDER_WORD:
                continue  # always representable as [MASK]
            continuing = False
            for fragment, _, is_entity in _word_fragments(word):
                if is_entity:
                    entities.setdefault(fragment)
                    continuing = True
                    continue
                chars.update(fragment)
                # a fragment after an entity marker can only ever be matched
                # through "##"-prefixed pieces, so count its i=0 form too
                first = 0 if continuing else 1
                if not continuing:
                    counts[fragment] = counts.get(fragment, 0) + 1
                for i in range(first, len(fragment)):
                    suffix = CONTINUATION_PREFIX + fragment[i:]
                    counts[suffix] = counts.get(suffix, 0) + 1
                continuing = True

    mandatory = list(SPECIAL_TOKENS) + sorted(chars) + sorted(entities)
    if max_size < len(SPECIAL_TOKENS) + len(chars):
        raise VocabError(
            f"max_size {max_size} cannot hold {len(chars)} characters plus "
            f"{len(SPECIAL_TOKENS)} special tokens"
        )
    if max_size < len(mandatory):
        raise VocabError(
            f"max_size {max_size} cannot hold the {len(entities)} entity markers"
        )

    taken = set(mandatory)
    frequent = [
        tok
        for tok, n in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        if n >= min_freq and tok not in taken
    ]
    return Vocab.from_tokens(mandatory + frequent[: max_size - len(mandatory)])


def _greedy_pieces(fragment: str, vocab: Vocab, continuing: bool) -> list[tuple[str, int, int]] | None:
    """Longest-match-first pieces of a plain-text fragment, or None if stuck.

    ``continuing`` marks that earlier pieces of the same word exist, so even
    the first piece here carries the continuation prefix.
    """
    pieces = []
    start = 0
    while start < len(fragment):
        end = len(fragment)
        found = None
        while start < end:
            piece = fragment[start:end]
            if start > 0 or continuing:
                piece = CONTINUATION_PREFIX + piece
            if piece in vocab:
                found = piece
                break
            end -= 1
        if found is None:
            return None
        pieces.append((found, start, end))
        start = end
    return pieces


def wordpiece_tokenize(text: str, vocab: Vocab, segment: Segment = Segment.CONTEXT) -> TokenSeq:
    """Greedy longest-match-first tokenization of whitespace-delimited words.

    Entity markers inside a word always come out as single atomic tokens
    (or [UNK] if the marker is not in the vocabulary). A word whose plain
    part cannot be matched, or longer than MAX_WORD_CHARS characters,
    becomes one [UNK] spanning the whole word.
    """
    ids: list[int] = []
    segments: list[Segment] = []
    spans: list[tuple[int, int]] = []
    tokens: list[str] = []

    def emit(token: str, start: int, end: int):
        ids.append(vocab.id(token) if token in vocab else vocab.unk_id)
        segments.append(segment)
        spans.append((start, end))
        tokens.append(token if token in vocab else "[UNK]")

    for word, offset in _iter_words(text):
        if word == PLACEHOLDER_WORD:
            emit("[MASK]", offset, offset + len(word))
            continue
        if len(word) > MAX_WORD_CHARS:
            emit("[UNK]", offset, offset + len(word))
            continue
        staged: list[tuple[str, int, int]] = []
        failed = False
        continuing = False
        for fragment, frag_off, is_entity in _word_fragments(word):
            if is_entity:
                staged.append((fragment, frag_off, frag_off + len(fragment)))
                continuing = True
                continue
            pieces = _greedy_pieces(fragment, vocab, continuing)
            if pieces is None:
                failed = True
                break
            staged.extend((tok, frag_off + s, frag_off + e) for tok, s, e in pieces)
            continuing = True
        if failed:
            emit("[UNK]", offset, offset + len(word))
        else:
            for tok, s, e in staged:
                emit(tok, offset + s, offset + e)

    return TokenSeq(ids, segments, spans, tokens)
