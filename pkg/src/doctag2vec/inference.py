"""Embedding of unseen documents against a frozen model.

Only a fresh document vector is optimized; words and tree parameters
stay untouched.  The init RNG is derived from the model seed and a
digest of the tokens, so the same document always infers to the same
vector without any global state.
"""

from __future__ import annotations

import hashlib
from typing import Sequence

import numpy as np
from numpy.random import PCG64, Generator, SeedSequence

from .errors import EmptyDocument
from .model import Model
from .trainer import _combine, _position_contexts, hs_loss_grad

INFER_STEPS = 20
INFER_LR = 0.025


def _token_digest(tokens: Sequence[str]) -> int:
    h = hashlib.blake2b(digest_size=8)
    for tok in tokens:
        h.update(tok.encode("utf-8"))
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "little")


def encode_tokens(model: Model, tokens: Sequence[str]) -> np.ndarray:
    """In-vocabulary word ids, order preserved; OOV tokens dropped."""
    word_to_id = model.vocab.word_to_id
    return np.array([word_to_id[t] for t in tokens if t in word_to_id], dtype=np.int64)


def infer_document(
    model: Model,
    tokens: Sequence[str],
    steps: int = INFER_STEPS,
    lr: float = INFER_LR,
) -> np.ndarray:
    """Optimize a new document vector for `steps` passes of per-position
    SGD on the word-prediction loss, holding all matrices fixed.

    Raises EmptyDocument if no token is in the vocabulary.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    word_ids = encode_tokens(model, tokens)
    if word_ids.size == 0:
        raise EmptyDocument("no token is in the vocabulary")
    rng = Generator(PCG64(SeedSequence([model.hyper.seed, _token_digest(tokens)])))
    dim = model.hyper.dim
    bound = 0.5 / dim
    vector = rng.uniform(-bound, bound, size=dim).astype(model.params.words.dtype)

    word_matrix = model.params.words
    node_matrix = model.params.nodes
    tree = model.tree
    mean_mode = model.hyper.combine == "mean"
    words = word_ids.tolist()
    contexts = _position_contexts(words, model.hyper.window)
    for _ in range(steps):
        for i, word in enumerate(words):
            feature = _combine(vector, word_matrix, contexts[i][0], mean_mode)
            _, grad = hs_loss_grad(feature, word, tree, node_matrix)
            vector -= lr * grad
    return vector


def document_objective(model: Model, word_ids: np.ndarray, vector: np.ndarray) -> float:
    """Word-prediction loss of a candidate document vector, summed over
    all positions.  Used to check that inference makes progress."""
    word_matrix = model.params.words
    node_matrix = model.params.nodes
    tree = model.tree
    mean_mode = model.hyper.combine == "mean"
    words = word_ids.tolist()
    contexts = _position_contexts(words, model.hyper.window)
    total = 0.0
    for i, word in enumerate(words):
        feature = _combine(vector, word_matrix, contexts[i][0], mean_mode)
        loss, _ = hs_loss_grad(feature, word, tree, node_matrix)
        total += loss
    return total
