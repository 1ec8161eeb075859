"""Cloze-sample data model, BIOMRC-format loading, synthetic generation.

File layout accepted by :func:`load_biomrc` (documented in README.md):

* a single JSON object with four parallel arrays ``abstracts``, ``titles``,
  ``entities_list`` and ``answers``; or
* JSON-lines, one object per line with keys ``abstract``, ``title``,
  ``entities_list`` and ``answer``.

Entity entries are either a bare pseudo-identifier ``"@entity7"`` or
``"@entity7 :: ['surface one', 'surface two']"`` carrying its surface
forms. Question placeholders may be written ``XXXX`` or ``[MASK]``; the
loader normalizes both to ``XXXX``.
"""
from __future__ import annotations

import ast
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .tokenizer import PLACEHOLDER_WORD as PLACEHOLDER
from .tokenizer import detect_entities

_MASK_VARIANT = "[MASK]"
# contexts longer than this many whitespace words are certain to exceed the
# 2000-token load bound no matter the vocabulary, so the loader rejects them
MAX_CONTEXT_WORDS = 2000


class CorpusError(ValueError):
    """Malformed input file or infeasible generator configuration."""


class ValidationError(CorpusError):
    """One or more records violate the cloze-sample invariants."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


@dataclass(frozen=True)
class ClozeSample:
    """One context / question / candidates / answer record."""

    uid: str
    context: str
    question: str
    candidates: dict[str, list[str]]  # pseudo-identifier -> surface forms
    gold: str

    def candidate_ids(self) -> list[str]:
        return list(self.candidates)

    def check(self) -> list[str]:
        """Invariant violations, empty when the sample is well-formed."""
        problems = []
        if self.question.count(PLACEHOLDER) != 1:
            problems.append(f"{self.uid}: question must contain exactly one {PLACEHOLDER}")
        if len(self.candidates) < 2:
            problems.append(f"{self.uid}: needs at least 2 candidates")
        if self.gold not in self.candidates:
            problems.append(f"{self.uid}: gold {self.gold!r} not among candidates")
        present = {marker for marker, _ in detect_entities(self.context)}
        for marker in self.candidates:
            if marker not in present:
                problems.append(f"{self.uid}: candidate {marker} never occurs in context")
        if len(self.context.split()) > MAX_CONTEXT_WORDS:
            problems.append(f"{self.uid}: context longer than {MAX_CONTEXT_WORDS} words")
        return problems


@dataclass(frozen=True)
class DatasetSplit:
    samples: tuple[ClozeSample, ...]
    name: str = "train"

    def __post_init__(self):
        if not self.samples:
            raise ValidationError(["split must be non-empty"])

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[ClozeSample]:
        return iter(self.samples)

    def __getitem__(self, idx: int) -> ClozeSample:
        return self.samples[idx]


def _normalize_placeholder(question: str) -> str:
    return question.replace(_MASK_VARIANT, PLACEHOLDER)


def _parse_entity_entry(entry, uid: str) -> tuple[str, list[str]]:
    if not isinstance(entry, str):
        raise CorpusError(f"{uid}: entity entry must be a string, got {type(entry).__name__}")
    if "::" in entry:
        marker, _, rest = entry.partition("::")
        marker = marker.strip()
        try:
            surfaces = list(ast.literal_eval(rest.strip()))
        except (ValueError, SyntaxError) as exc:
            raise CorpusError(f"{uid}: cannot parse surface list in {entry!r}") from exc
        surfaces = [str(s) for s in surfaces]
    else:
        marker, surfaces = entry.strip(), []
    if not re.fullmatch(r"@entity\d+", marker):
        raise CorpusError(f"{uid}: {marker!r} is not a pseudo-identifier")
    return marker, surfaces


def _record_to_sample(uid, abstract, title, entities, answer) -> ClozeSample:
    candidates = {}
    for entry in entities:
        marker, surfaces = _parse_entity_entry(entry, uid)
        candidates[marker] = surfaces
    gold, _ = _parse_entity_entry(answer, uid)
    return ClozeSample(
        uid=uid,
        context=abstract,
        question=_normalize_placeholder(title),
        candidates=candidates,
        gold=gold,
    )


def load_biomrc(path: str | Path, name: str | None = None) -> DatasetSplit:
    """Load a BIOMRC-layout file, validating every record.

    Raises CorpusError with the byte offset for unparsable JSON, and
    ValidationError listing the indices of records that break sample
    invariants.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    split_name = name or path.stem
    records = _parse_records(text, path)

    samples = []
    problems = []
    for i, (abstract, title, entities, answer) in enumerate(records):
        uid = f"{split_name}-{i}"
        try:
            sample = _record_to_sample(uid, abstract, title, entities, answer)
        except CorpusError as exc:
            problems.append(f"record {i}: {exc}")
            continue
        bad = sample.check()
        if bad:
            problems.extend(f"record {i}: {p}" for p in bad)
        else:
            samples.append(sample)
    if problems:
        raise ValidationError(problems)
    if not samples:
        raise CorpusError(f"{path}: no records")
    return DatasetSplit(tuple(samples), split_name)


def _record_tuple(obj: dict, path: Path) -> tuple:
    try:
        return obj["abstract"], obj["title"], obj["entities_list"], obj["answer"]
    except KeyError as exc:
        raise CorpusError(f"{path}: record missing key {exc}") from exc


def _parse_records(text: str, path: Path) -> list[tuple]:
    if not text.strip():
        raise CorpusError(f"{path}: parse error at byte 0: empty file")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as whole_err:
        lines = text.splitlines(keepends=True)
        if sum(1 for ln in lines if ln.lstrip().startswith("{")) < 2:
            raise CorpusError(
                f"{path}: parse error at byte {whole_err.pos}: {whole_err.msg}"
            ) from whole_err
        # JSON-lines: one record object per non-empty line
        records = []
        offset = 0
        for line in lines:
            bare = line.strip()
            if bare:
                try:
                    obj = json.loads(bare)
                except json.JSONDecodeError as exc:
                    pos = offset + line.index(bare[0]) + exc.pos
                    raise CorpusError(f"{path}: parse error at byte {pos}: {exc.msg}") from exc
                records.append(_record_tuple(obj, path))
            offset += len(line)
        return records
    if not isinstance(doc, dict):
        raise CorpusError(f"{path}: top level must be an object")
    if "abstracts" in doc:
        for key in ("abstracts", "titles", "entities_list", "answers"):
            if key not in doc:
                raise CorpusError(f"{path}: missing array {key!r}")
        lengths = {k: len(doc[k]) for k in ("abstracts", "titles", "entities_list", "answers")}
        if len(set(lengths.values())) != 1:
            raise CorpusError(f"{path}: arrays must be parallel, got lengths {lengths}")
        return list(zip(doc["abstracts"], doc["titles"], doc["entities_list"], doc["answers"]))
    return [_record_tuple(doc, path)]  # single JSON-lines record


def split_to_document(split: DatasetSplit) -> dict:
    """Serialize back to the four-array layout (inverse of load_biomrc)."""
    doc = {"abstracts": [], "titles": [], "entities_list": [], "answers": []}
    for s in split:
        doc["abstracts"].append(s.context)
        doc["titles"].append(s.question)
        doc["entities_list"].append(
            [f"{m} :: {surfaces!r}" if surfaces else m for m, surfaces in s.candidates.items()]
        )
        doc["answers"].append(s.gold)
    return doc


def save_split(split: DatasetSplit, path: str | Path, meta: dict | None = None) -> None:
    doc = split_to_document(split)
    if meta:
        doc["_meta"] = meta
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the synthetic cue-based generator."""

    n_samples: int
    vocab_size: int = 200
    n_entities: int = 6
    context_len: int = 24
    seed: int = 0
    name: str = "train"

    def __post_init__(self):
        if self.n_samples < 1:
            raise CorpusError("n_samples must be >= 1 (splits are non-empty)")
        if self.n_entities < 2:
            raise CorpusError("n_entities must be >= 2")
        if self.context_len < 2 * self.n_entities:
            raise CorpusError("context_len must be >= 2 * n_entities")
        if self.vocab_size < self.n_entities + 2:
            raise CorpusError("vocab_size too small for topics plus filler")


def _topic_word(i: int) -> str:
    # capitalized so a rule-based sentence splitter sees a sentence start
    return f"Topic{i}"


def generate_synthetic(config: SynthConfig) -> DatasetSplit:
    """Generate cue-based cloze samples with a global entity scope.

    Every entity ``@entity<i>`` pairs with one topic word corpus-wide. A
    sample's context holds one short sentence per candidate ("Topic<i>
    @entity<i> [filler...] .") and the question places the gold entity's
    topic word immediately before the placeholder, so "pick the entity
    whose sentence contains the question's topic word" solves the task
    exactly.
    """
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    n_fillers = cfg.vocab_size - cfg.n_entities
    fillers = [f"word{i}" for i in range(n_fillers)]

    # sentences cost 3 words minimum; keep at least 2 candidates
    k = min(cfg.n_entities, cfg.context_len // 3)
    if k < 2:
        raise CorpusError(
            f"context_len {cfg.context_len} cannot hold 2 three-word entity sentences"
        )

    samples = []
    for idx in range(cfg.n_samples):
        entity_ids = rng.permutation(cfg.n_entities)[:k].tolist()
        gold_id = int(entity_ids[rng.integers(0, k)])

        sentences = [[_topic_word(i), f"@entity{i}"] for i in entity_ids]
        budget = cfg.context_len - 3 * k
        # spend leftover words on extra occurrences (a repeated entity
        # sentence) or on filler padding inside existing sentences
        while budget >= 3 and rng.random() < 0.35:
            extra = int(entity_ids[rng.integers(0, k)])
            sentences.append([_topic_word(extra), f"@entity{extra}"])
            budget -= 3
        for _ in range(budget):
            target = sentences[rng.integers(0, len(sentences))]
            target.append(fillers[rng.integers(0, n_fillers)])
        order = rng.permutation(len(sentences))
        context = " ".join(" ".join(sentences[j]) + " ." for j in order)

        q_words = [fillers[rng.integers(0, n_fillers)]] if rng.random() < 0.5 else []
        q_words += [_topic_word(gold_id), PLACEHOLDER, "."]
        question = " ".join(q_words)

        candidates = {
            f"@entity{i}": [f"surface{i}a surface{i}b"] for i in sorted(entity_ids)
        }
        samples.append(
            ClozeSample(
                uid=f"{cfg.name}-{idx}",
                context=context,
                question=question,
                candidates=candidates,
                gold=f"@entity{gold_id}",
            )
        )

    split = DatasetSplit(tuple(samples), cfg.name)
    problems = [p for s in split for p in s.check()]
    if problems:
        raise ValidationError(problems)
    return split


def cue_oracle(sample: ClozeSample) -> str:
    """Rule-based answer for generated data: the entity whose context
    sentence contains the word immediately before the placeholder."""
    words = sample.question.split()
    topic = words[words.index(PLACEHOLDER) - 1]
    for chunk in sample.context.split("."):
        if topic in chunk.split():
            for marker, _ in detect_entities(chunk):
                if marker in sample.candidates:
                    return marker
    raise LookupError(f"{sample.uid}: no entity shares the question topic {topic!r}")


def make_batches(
    samples: DatasetSplit | Sequence,
    batch_size: int,
    shuffle_seed: int | None = None,
) -> Iterator[list]:
    """Yield lists of samples covering the split exactly once.

    Order is the split's own unless a shuffle seed is given; the final
    batch may be short.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    items = list(samples)
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(items))
        items = [items[i] for i in order]
    for start in range(0, len(items), batch_size):
        yield items[start : start + batch_size]
