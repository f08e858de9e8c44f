"""Tag prediction: cosine k-NN over tag embeddings, and bagged ensembles
of independently trained learners.

The k-NN search runs over the M tag columns only, so prediction cost
does not grow with the training set.  Bagging aggregates per-learner
selections by summing, for each tag, the cosine similarities from the
learners that picked it, then re-ranking.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from numpy.random import PCG64, Generator

from .corpus import Dataset, TaggedDocument
from .errors import ChecksumError, FormatError, ZeroVector
from .inference import INFER_LR, INFER_STEPS, infer_document
from .model import (
    Hyperparameters,
    Model,
    init_model,
    model_from_bytes,
    model_to_bytes,
)
from .trainer import TrainConfig, train

ENSEMBLE_MAGIC = b"DT2VENS"
ENSEMBLE_VERSION = 1


@dataclass
class Prediction:
    """Ranked (tag_id, score) pairs, descending score, ties by tag id."""

    entries: list[tuple[int, float]]

    @property
    def tag_ids(self) -> list[int]:
        return [tag for tag, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def cosine_scores(vector: np.ndarray, tag_matrix: np.ndarray) -> np.ndarray:
    """Cosine similarity of the vector against every tag column.

    Zero-norm tag columns score -inf so they can never be selected.
    Raises ZeroVector for a zero-norm query.
    """
    norm = np.linalg.norm(vector)
    if norm == 0.0:
        raise ZeroVector("cannot rank tags for a zero vector")
    col_norms = np.linalg.norm(tag_matrix, axis=0)
    zero = col_norms == 0.0
    safe = np.where(zero, 1.0, col_norms)
    scores = (tag_matrix / safe).T @ (vector / norm)
    scores = scores.astype(np.float64, copy=False)
    scores[zero] = -np.inf
    return scores


def top_entries(scores: np.ndarray, k: int) -> list[tuple[int, float]]:
    """Largest-k entries as (index, score), score descending then index
    ascending; -inf entries are dropped."""
    order = np.lexsort((np.arange(scores.shape[0]), -scores))
    out = []
    for idx in order[:k]:
        if scores[idx] == -np.inf:
            break
        out.append((int(idx), float(scores[idx])))
    return out


def predict_knn(vector: np.ndarray, tag_matrix: np.ndarray, k: int) -> Prediction:
    """Top-k tags by cosine similarity to the given document vector."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return Prediction(top_entries(cosine_scores(vector, tag_matrix), k))


def aggregate_selections(
    selections: Sequence[Sequence[tuple[int, float]]], k: int
) -> Prediction:
    """Bagging fold: sum, per tag, the scores from every learner selection
    containing it, then return the top-k by aggregated score."""
    if k < 1:
        raise ValueError("k must be >= 1")
    totals: dict[int, float] = {}
    for selection in selections:
        for tag, score in selection:
            totals[tag] = totals.get(tag, 0.0) + score
    ranked = sorted(totals.items(), key=lambda item: (-item[1], item[0]))
    return Prediction([(tag, score) for tag, score in ranked[:k]])


@dataclass
class Ensemble:
    """b independently trained learners sharing one vocabulary/tag space."""

    learners: list[Model]
    k_prime: int = 5

    def __post_init__(self):
        if not self.learners:
            raise ValueError("ensemble needs at least one learner")
        if self.k_prime < 1:
            raise ValueError("k_prime must be >= 1")
        first = self.learners[0]
        for m in self.learners[1:]:
            if (
                m.hyper.dim != first.hyper.dim
                or len(m.vocab) != len(first.vocab)
                or len(m.tagdict) != len(first.tagdict)
            ):
                raise ValueError("learners disagree on dim/vocabulary/tag sizes")

    @property
    def size(self) -> int:
        return len(self.learners)


def train_ensemble(
    dataset: Dataset,
    hyper: Hyperparameters,
    b: int = 15,
    subsample: float = 0.5,
    k_prime: int = 5,
    config: TrainConfig | None = None,
) -> Ensemble:
    """Train b learners, each on its own uniform sample (without
    replacement) of ceil(subsample * N) documents.

    The vocabulary, tag dictionary, and tree come from the full corpus
    and are shared.  Learner j (1-based) trains with seed = seed XOR j;
    subset draws come from a separate generator seeded with the base
    seed, so subsets are reproducible and independent of b.
    """
    if b < 1:
        raise ValueError("b must be >= 1")
    if not 0 < subsample <= 1:
        raise ValueError("subsample must be in (0, 1]")
    n = dataset.num_documents
    size = math.ceil(subsample * n)
    picker = Generator(PCG64(hyper.seed))
    learners = []
    for j in range(1, b + 1):
        chosen = np.sort(picker.choice(n, size=size, replace=False))
        subset = [
            TaggedDocument(doc_id=t, words=dataset.documents[i].words, tags=dataset.documents[i].tags)
            for t, i in enumerate(chosen)
        ]
        sub_dataset = Dataset(
            documents=subset,
            vocabulary=dataset.vocabulary,
            tag_dictionary=dataset.tag_dictionary,
        )
        learner = init_model(
            dataset.vocabulary,
            dataset.tag_dictionary,
            num_docs=size,
            hyper=replace(hyper, seed=hyper.seed ^ j),
        )
        train(learner, sub_dataset, config)
        learners.append(learner)
    return Ensemble(learners=learners, k_prime=k_prime)


def learner_scores(
    ensemble: Ensemble,
    tokens: Sequence[str],
    steps: int = INFER_STEPS,
    lr: float = INFER_LR,
) -> list[np.ndarray]:
    """Per-learner cosine score vectors for one document: each learner
    infers its own document embedding against its own parameters."""
    out = []
    for learner in ensemble.learners:
        vector = infer_document(learner, tokens, steps=steps, lr=lr)
        out.append(cosine_scores(vector, learner.params.tags))
    return out


def predict_bagged(
    ensemble: Ensemble,
    tokens: Sequence[str],
    k: int,
    steps: int = INFER_STEPS,
    lr: float = INFER_LR,
) -> Prediction:
    """Each learner selects its top-k_prime tags; a tag's aggregated score
    is the sum of cosine similarities from the learners that selected it,
    and the overall top-k by that score is returned."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = learner_scores(ensemble, tokens, steps=steps, lr=lr)
    selections = [top_entries(s, ensemble.k_prime) for s in scores]
    return aggregate_selections(selections, k)


# --- ensemble serialization -------------------------------------------------


def ensemble_to_bytes(ensemble: Ensemble) -> bytes:
    out = bytearray()
    out += ENSEMBLE_MAGIC
    out += struct.pack("<III", ENSEMBLE_VERSION, ensemble.size, ensemble.k_prime)
    for learner in ensemble.learners:
        blob = model_to_bytes(learner)
        out += struct.pack("<Q", len(blob))
        out += blob
    out += struct.pack("<I", zlib.crc32(out) & 0xFFFFFFFF)
    return bytes(out)


def ensemble_from_bytes(data: bytes) -> Ensemble:
    if len(data) < len(ENSEMBLE_MAGIC) + 16 or data[: len(ENSEMBLE_MAGIC)] != ENSEMBLE_MAGIC:
        raise FormatError("bad ensemble magic")
    pos = len(ENSEMBLE_MAGIC)
    version, b, k_prime = struct.unpack_from("<III", data, pos)
    pos += 12
    if version != ENSEMBLE_VERSION:
        raise FormatError(f"unsupported ensemble version {version}")
    learners = []
    for _ in range(b):
        if pos + 8 > len(data):
            raise FormatError("truncated ensemble file")
        (length,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        if pos + length > len(data):
            raise FormatError("truncated ensemble file")
        learners.append(model_from_bytes(data[pos : pos + length]))
        pos += length
    if pos + 4 != len(data):
        raise FormatError("trailing bytes in ensemble file")
    (stored_crc,) = struct.unpack_from("<I", data, pos)
    if stored_crc != (zlib.crc32(data[:-4]) & 0xFFFFFFFF):
        raise ChecksumError("ensemble CRC-32 mismatch")
    return Ensemble(learners=learners, k_prime=k_prime)


def save_ensemble(ensemble: Ensemble, path) -> None:
    with open(path, "wb") as fh:
        fh.write(ensemble_to_bytes(ensemble))


def load_ensemble(path) -> Ensemble:
    with open(path, "rb") as fh:
        return ensemble_from_bytes(fh.read())
