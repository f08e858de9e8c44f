"""Corpus ingestion: tokenization, vocabulary and tag dictionary
construction, document encoding, and context windows.

The on-disk dataset format is UTF-8 JSONL, one record per line::

    {"id": "doc-17", "text": "raw text ...", "tags": ["sports", "nba"]}

Record ids are echoed in prediction output; internal document ids are
positional (file order).  All construction here is deterministic: the
same input file always yields the same id assignments.
"""

from __future__ import annotations

import json
import logging
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import AllWordsFiltered, ParseError

logger = logging.getLogger(__name__)


def tokenize(text: str) -> list[str]:
    """Lowercase, split on Unicode whitespace, strip surrounding punctuation.

    Tokens that are pure punctuation vanish; order and duplicates are kept.
    """
    tokens = []
    for raw in text.lower().split():
        tok = _strip_punctuation(raw)
        if tok:
            tokens.append(tok)
    return tokens


def _strip_punctuation(token: str) -> str:
    start, end = 0, len(token)
    while start < end and unicodedata.category(token[start]).startswith("P"):
        start += 1
    while end > start and unicodedata.category(token[end - 1]).startswith("P"):
        end -= 1
    return token[start:end]


@dataclass
class Vocabulary:
    """Bidirectional token/id map with per-id occurrence counts.

    Ids are dense in [0, V) and assigned by descending count, ties broken
    lexicographically, so that id order is reproducible across runs.
    """

    word_to_id: dict[str, int]
    id_to_word: list[str]
    counts: list[int]

    def __len__(self) -> int:
        return len(self.id_to_word)

    def __contains__(self, word: str) -> bool:
        return word in self.word_to_id


def build_vocabulary(token_streams: Iterable[Sequence[str]], min_count: int = 5) -> Vocabulary:
    """Count tokens across all streams and keep those seen >= min_count times.

    Raises AllWordsFiltered when nothing survives the threshold.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counter: Counter[str] = Counter()
    for stream in token_streams:
        counter.update(stream)
    kept = sorted(
        ((word, count) for word, count in counter.items() if count >= min_count),
        key=lambda item: (-item[1], item[0]),
    )
    if not kept:
        raise AllWordsFiltered(f"no token occurs at least {min_count} times")
    return Vocabulary(
        word_to_id={word: i for i, (word, _) in enumerate(kept)},
        id_to_word=[word for word, _ in kept],
        counts=[count for _, count in kept],
    )


@dataclass
class TagDictionary:
    """Dense bijective tag/id map.  Initial ids are lexicographic; tags
    added later are appended."""

    tag_to_id: dict[str, int] = field(default_factory=dict)
    id_to_tag: list[str] = field(default_factory=list)

    @classmethod
    def from_tags(cls, tags: Iterable[str]) -> "TagDictionary":
        ordered = sorted(set(tags))
        return cls(
            tag_to_id={tag: i for i, tag in enumerate(ordered)},
            id_to_tag=ordered,
        )

    def add(self, tag: str) -> int:
        new_id = len(self.id_to_tag)
        self.tag_to_id[tag] = new_id
        self.id_to_tag.append(tag)
        return new_id

    def __len__(self) -> int:
        return len(self.id_to_tag)

    def __contains__(self, tag: str) -> bool:
        return tag in self.tag_to_id


@dataclass
class TaggedDocument:
    """An encoded document: word-id sequence plus its tag-id set."""

    doc_id: int
    words: np.ndarray  # int64, in-vocabulary word ids in text order
    tags: tuple[int, ...]  # sorted, duplicate-free tag ids

    @property
    def num_words(self) -> int:
        return int(self.words.shape[0])


def encode_document(
    doc_id: int,
    tokens: Sequence[str],
    tag_strings: Iterable[str],
    vocab: Vocabulary,
    tagdict: TagDictionary,
) -> TaggedDocument:
    """Map tokens and tags to ids.

    Out-of-vocabulary tokens are dropped silently; unknown tags are dropped
    with a counted warning.  Both the word sequence and the tag set may end
    up empty.
    """
    word_to_id = vocab.word_to_id
    words = np.array(
        [word_to_id[tok] for tok in tokens if tok in word_to_id], dtype=np.int64
    )
    tag_ids = set()
    unknown = 0
    for tag in tag_strings:
        tag_id = tagdict.tag_to_id.get(tag)
        if tag_id is None:
            unknown += 1
        else:
            tag_ids.add(tag_id)
    if unknown:
        logger.warning("document %d: dropped %d unknown tag(s)", doc_id, unknown)
    return TaggedDocument(doc_id=doc_id, words=words, tags=tuple(sorted(tag_ids)))


def context_window(doc: TaggedDocument, i: int, c: int) -> np.ndarray:
    """Word ids at positions i-c..i+c excluding i, truncated at boundaries."""
    n = doc.num_words
    if not 0 <= i < n:
        raise IndexError(f"position {i} out of range for document of length {n}")
    if c < 1:
        raise ValueError("window radius must be >= 1")
    words = doc.words
    return np.concatenate((words[max(0, i - c) : i], words[i + 1 : i + 1 + c]))


class Record(NamedTuple):
    """One raw dataset record as read from (or written to) JSONL."""

    id: str
    text: str
    tags: list[str]


def read_records(path) -> list[Record]:
    """Parse a JSONL dataset file; raises ParseError with the line number."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                raise ParseError(lineno, "blank line")
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise ParseError(lineno, "record is not a JSON object")
            try:
                rec_id, text, tags = obj["id"], obj["text"], obj["tags"]
            except KeyError as exc:
                raise ParseError(lineno, f"missing field {exc.args[0]!r}") from exc
            if (
                not isinstance(rec_id, str)
                or not isinstance(text, str)
                or not isinstance(tags, list)
                or not all(isinstance(t, str) for t in tags)
            ):
                raise ParseError(lineno, "fields must be id:str, text:str, tags:[str]")
            records.append(Record(rec_id, text, tags))
    return records


def write_records(records: Iterable[Record], path) -> None:
    """Write records as JSONL (inverse of read_records)."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({"id": rec.id, "text": rec.text, "tags": list(rec.tags)}))
            fh.write("\n")


@dataclass
class Dataset:
    """Encoded training corpus: documents plus the maps they are encoded
    against.  Document ids are exactly 0..N-1 in file order."""

    documents: list[TaggedDocument]
    vocabulary: Vocabulary
    tag_dictionary: TagDictionary

    @property
    def num_documents(self) -> int:
        return len(self.documents)


def load_dataset(path, min_count: int = 5) -> Dataset:
    """Read a JSONL file and build the fully encoded Dataset.

    The vocabulary keeps tokens occurring >= min_count times; the tag
    dictionary keeps every tag that appears.  Deterministic: the same file
    produces an identical Dataset.
    """
    records = read_records(path)
    token_streams = [tokenize(rec.text) for rec in records]
    vocab = build_vocabulary(token_streams, min_count=min_count)
    tagdict = TagDictionary.from_tags(tag for rec in records for tag in rec.tags)
    documents = [
        encode_document(i, tokens, rec.tags, vocab, tagdict)
        for i, (tokens, rec) in enumerate(zip(token_streams, records))
    ]
    return Dataset(documents=documents, vocabulary=vocab, tag_dictionary=tagdict)
