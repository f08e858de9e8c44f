"""Model state: hyperparameters, the four embedding matrices, the RNG,
and the binary model file format.

All randomness flows through one seeded PCG64 generator owned by the
model; its exact state is serialized, so training can resume from a file
and "same seed => same bytes" holds.  Matrices are float32 in memory and
on disk, making save/load round trips bit-exact.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.random import PCG64, Generator

from .corpus import TagDictionary, Vocabulary
from .errors import ChecksumError, DuplicateTag, FormatError
from .hsoftmax import HuffmanTree, build_huffman

MAGIC = b"DT2V"
FORMAT_VERSION = 1

COMBINE_MODES = ("sum", "mean")
TAG_UPDATE_MODES = ("position", "document")


@dataclass
class Hyperparameters:
    """Training-time knobs; stored verbatim in the model file.

    alpha weighs the tag loss against the word loss; negatives is the
    number of sampled negative tags per positive; combine picks whether
    context word vectors are averaged (default) or summed into the
    feature vector -- averaging keeps the document vector from being
    drowned by wide windows, which summing does badly enough to wreck
    nearest-tag prediction; tag_update selects per-position (default) or
    per-document tag steps.
    """

    dim: int = 100
    window: int = 8
    alpha: float = 1.0
    negatives: int = 1
    epochs: int = 20
    lr_initial: float = 0.025
    lr_final: float = 1e-4
    min_count: int = 5
    seed: int = 1
    combine: str = "mean"
    tag_update: str = "position"

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.negatives < 1:
            raise ValueError("negatives must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not self.lr_initial >= self.lr_final > 0:
            raise ValueError("need lr_initial >= lr_final > 0")
        if self.min_count < 1:
            raise ValueError("min_count must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")
        if self.combine not in COMBINE_MODES:
            raise ValueError(f"combine must be one of {COMBINE_MODES}")
        if self.tag_update not in TAG_UPDATE_MODES:
            raise ValueError(f"tag_update must be one of {TAG_UPDATE_MODES}")


@dataclass
class EmbeddingMatrices:
    """The four float32 parameter blocks, columns indexed by item id:
    words (dim x V), docs (dim x N), tags (dim x M), and the hierarchical
    softmax internal nodes (dim x V-1)."""

    words: np.ndarray
    docs: np.ndarray
    tags: np.ndarray
    nodes: np.ndarray


@dataclass
class Model:
    """Everything needed to train, resume, infer, and predict."""

    hyper: Hyperparameters
    vocab: Vocabulary
    tagdict: TagDictionary
    tree: HuffmanTree
    params: EmbeddingMatrices
    rng: Generator

    @property
    def trained_docs(self) -> int:
        return int(self.params.docs.shape[1])

    def check_consistent(self) -> None:
        dim = self.hyper.dim
        num_words = len(self.vocab)
        shapes = {
            "words": (dim, num_words),
            "tags": (dim, len(self.tagdict)),
            "nodes": (dim, max(num_words - 1, 0)),
        }
        for name, expect in shapes.items():
            got = getattr(self.params, name).shape
            if got != expect:
                raise ValueError(f"matrix {name} has shape {got}, expected {expect}")
        if self.params.docs.shape[0] != dim:
            raise ValueError("docs matrix row count does not match dim")
        if self.tree.num_words != num_words:
            raise ValueError("tree size does not match vocabulary")


def _uniform_columns(rng: Generator, dim: int, cols: int) -> np.ndarray:
    bound = 0.5 / dim
    return rng.uniform(-bound, bound, size=(dim, cols)).astype(np.float32)


def init_model(
    vocab: Vocabulary,
    tagdict: TagDictionary,
    num_docs: int,
    hyper: Hyperparameters,
) -> Model:
    """Fresh model: words/docs/tags uniform on [-0.5/dim, 0.5/dim] from the
    seeded generator (drawn in that order), tree parameters all zero."""
    if len(vocab) == 0:
        raise ValueError("vocabulary is empty")
    if len(tagdict) == 0:
        raise ValueError("tag dictionary is empty")
    if num_docs < 0:
        raise ValueError("num_docs must be >= 0")
    rng = Generator(PCG64(hyper.seed))
    dim = hyper.dim
    params = EmbeddingMatrices(
        words=_uniform_columns(rng, dim, len(vocab)),
        docs=_uniform_columns(rng, dim, num_docs),
        tags=_uniform_columns(rng, dim, len(tagdict)),
        nodes=np.zeros((dim, max(len(vocab) - 1, 0)), dtype=np.float32),
    )
    model = Model(
        hyper=hyper,
        vocab=vocab,
        tagdict=tagdict,
        tree=build_huffman(vocab.counts),
        params=params,
        rng=rng,
    )
    model.check_consistent()
    return model


def add_tags(model: Model, new_tags: Sequence[str]) -> Model:
    """Grow the tag set in place; existing tag columns are untouched.

    New columns are drawn from the model generator exactly like at init.
    Raises DuplicateTag if any tag already exists (or repeats in the input).
    """
    seen = set()
    for tag in new_tags:
        if tag in model.tagdict or tag in seen:
            raise DuplicateTag(f"tag {tag!r} already present")
        seen.add(tag)
    if not new_tags:
        return model
    fresh = _uniform_columns(model.rng, model.hyper.dim, len(new_tags))
    model.params.tags = np.concatenate([model.params.tags, fresh], axis=1)
    for tag in new_tags:
        model.tagdict.add(tag)
    return model


def grow_docs(model: Model, count: int) -> int:
    """Append `count` freshly initialized document columns; returns the id
    of the first new column.  Used by incremental training."""
    start = model.params.docs.shape[1]
    if count:
        fresh = _uniform_columns(model.rng, model.hyper.dim, count)
        model.params.docs = np.concatenate([model.params.docs, fresh], axis=1)
    return int(start)


# --- binary serialization -------------------------------------------------
#
# Little-endian throughout: magic "DT2V", version u32, hyperparameter
# block, vocabulary block, tag block, tree paths, the four float32
# matrices (row-major, dimension-prefixed), the PCG64 state, and a
# trailing CRC-32 over everything before it.


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise FormatError("truncated file")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def string(self) -> str:
        length = self.u32()
        try:
            return self.take(length).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("invalid UTF-8 in string") from exc

    def array(self, dtype: str, count: int) -> np.ndarray:
        raw = self.take(count * np.dtype(dtype).itemsize)
        return np.frombuffer(raw, dtype=dtype).copy()


def _pack_string(out: bytearray, s: str) -> None:
    raw = s.encode("utf-8")
    out += struct.pack("<I", len(raw))
    out += raw


def _pack_matrix(out: bytearray, m: np.ndarray) -> None:
    out += struct.pack("<II", m.shape[0], m.shape[1])
    out += np.ascontiguousarray(m, dtype="<f4").tobytes()


def _read_matrix(r: _Reader) -> np.ndarray:
    rows, cols = r.u32(), r.u32()
    return r.array("<f4", rows * cols).reshape(rows, cols)


def model_to_bytes(model: Model) -> bytes:
    h = model.hyper
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", FORMAT_VERSION)
    out += struct.pack(
        "<IIdIIddIQBB",
        h.dim,
        h.window,
        h.alpha,
        h.negatives,
        h.epochs,
        h.lr_initial,
        h.lr_final,
        h.min_count,
        h.seed,
        COMBINE_MODES.index(h.combine),
        TAG_UPDATE_MODES.index(h.tag_update),
    )
    out += struct.pack("<I", len(model.vocab))
    for word, count in zip(model.vocab.id_to_word, model.vocab.counts):
        _pack_string(out, word)
        out += struct.pack("<Q", count)
    out += struct.pack("<I", len(model.tagdict))
    for tag in model.tagdict.id_to_tag:
        _pack_string(out, tag)
    for nodes, signs in zip(model.tree.node_ids, model.tree.signs):
        out += struct.pack("<I", len(nodes))
        out += np.ascontiguousarray(nodes, dtype="<u4").tobytes()
        out += np.ascontiguousarray(signs, dtype="<i1").tobytes()
    for m in (model.params.words, model.params.docs, model.params.tags, model.params.nodes):
        _pack_matrix(out, m)
    state = model.rng.bit_generator.state
    out += state["state"]["state"].to_bytes(16, "little")
    out += state["state"]["inc"].to_bytes(16, "little")
    out += struct.pack("<II", state["has_uint32"], state["uinteger"])
    out += struct.pack("<I", zlib.crc32(out) & 0xFFFFFFFF)
    return bytes(out)


def model_from_bytes(data: bytes) -> Model:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise FormatError("bad magic")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    (
        dim,
        window,
        alpha,
        negatives,
        epochs,
        lr_initial,
        lr_final,
        min_count,
        seed,
        combine_idx,
        tag_update_idx,
    ) = struct.unpack("<IIdIIddIQBB", r.take(struct.calcsize("<IIdIIddIQBB")))
    if combine_idx >= len(COMBINE_MODES) or tag_update_idx >= len(TAG_UPDATE_MODES):
        raise FormatError("invalid mode byte")
    hyper = Hyperparameters(
        dim=dim,
        window=window,
        alpha=alpha,
        negatives=negatives,
        epochs=epochs,
        lr_initial=lr_initial,
        lr_final=lr_final,
        min_count=min_count,
        seed=seed,
        combine=COMBINE_MODES[combine_idx],
        tag_update=TAG_UPDATE_MODES[tag_update_idx],
    )

    num_words = r.u32()
    id_to_word = []
    counts = []
    for _ in range(num_words):
        id_to_word.append(r.string())
        counts.append(r.u64())
    vocab = Vocabulary(
        word_to_id={w: i for i, w in enumerate(id_to_word)},
        id_to_word=id_to_word,
        counts=counts,
    )

    num_tags = r.u32()
    id_to_tag = [r.string() for _ in range(num_tags)]
    tagdict = TagDictionary(
        tag_to_id={t: i for i, t in enumerate(id_to_tag)}, id_to_tag=id_to_tag
    )

    node_ids = []
    signs = []
    for _ in range(num_words):
        length = r.u32()
        node_ids.append(r.array("<u4", length).astype(np.int32))
        signs.append(r.array("<i1", length).astype(np.float32))
    tree = HuffmanTree(node_ids, signs)

    params = EmbeddingMatrices(
        words=_read_matrix(r),
        docs=_read_matrix(r),
        tags=_read_matrix(r),
        nodes=_read_matrix(r),
    )

    rng_state = int.from_bytes(r.take(16), "little")
    rng_inc = int.from_bytes(r.take(16), "little")
    has_uint32, uinteger = r.u32(), r.u32()

    stored_crc = r.u32()
    if r.pos != len(data):
        raise FormatError("trailing bytes after checksum")
    if stored_crc != (zlib.crc32(data[:-4]) & 0xFFFFFFFF):
        raise ChecksumError("CRC-32 mismatch")

    bitgen = PCG64()
    bitgen.state = {
        "bit_generator": "PCG64",
        "state": {"state": rng_state, "inc": rng_inc},
        "has_uint32": has_uint32,
        "uinteger": uinteger,
    }
    model = Model(
        hyper=hyper,
        vocab=vocab,
        tagdict=tagdict,
        tree=tree,
        params=params,
        rng=Generator(bitgen),
    )
    model.check_consistent()
    return model


def save_model(model: Model, path) -> None:
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def load_model(path) -> Model:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
