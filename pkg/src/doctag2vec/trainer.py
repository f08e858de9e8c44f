"""Stochastic gradient descent on the joint embedding loss.

For each document position the trainer takes one hierarchical-softmax
step on the target word, with the feature vector built from the document
vector plus its context word vectors, and then one positive-vs-sampled-
negatives step on the tag embeddings for each tag of the document.  All
step functions evaluate gradients at the pre-update parameters and apply
plain SGD updates in place.

Dot products run in the parameter dtype (float32 for real models), but
sigmoids and losses are evaluated in float64, so analytic loss identities
hold to tight tolerance and the same code paths support float64 models
for gradient checking.  Context windows depend only on document content,
so they are precomputed once per document and reused across epochs.
"""

from __future__ import annotations

import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.random import Generator
from scipy.special import expit, log_expit

from .corpus import Dataset, TaggedDocument, context_window
from .errors import DegenerateTagSet, NaNDetected, UnknownTag
from .hsoftmax import HuffmanTree
from .model import Model, grow_docs

INCREMENTAL_LR = 0.005

_EMPTY_IDS = np.empty(0, dtype=np.int64)


def sigmoid(x):
    """Logistic function 1 / (1 + exp(-x)), overflow-free across float64."""
    return expit(x)


def _sigma(z: float) -> float:
    # scalar sigmoid; cheaper than the ufunc for single values
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def _log_sigma(z: float) -> float:
    # scalar log sigmoid, stable for large |z|
    if z >= 0:
        return -math.log1p(math.exp(-z))
    return z - math.log1p(math.exp(z))


@dataclass
class TrainConfig:
    """Run-level knobs, independent of the learned objective."""

    workers: int = 1
    shuffle: bool = True
    report_every: int = 0  # extra mid-epoch reports every N documents; 0 = off
    progress: bool = True  # emit JSON progress lines to stderr

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class LossReport:
    epoch: int
    docs_seen: int
    mean_hs_loss: float  # word-prediction loss per position
    mean_tag_loss: float  # unscaled tag loss per position (0 when alpha == 0)
    lr_current: float


def linear_lr(position: int, total: int, lr_initial: float, lr_final: float) -> float:
    """Linear decay over scheduled positions; exact at 0, total/2, total."""
    if total <= 0:
        return lr_initial
    frac = min(position / total, 1.0)
    return lr_initial + (lr_final - lr_initial) * frac


def _combine(doc_vector: np.ndarray, word_matrix: np.ndarray, ctx: np.ndarray, mean: bool) -> np.ndarray:
    if ctx.size == 0:
        return doc_vector.copy()
    cols = word_matrix[:, ctx]
    return doc_vector + (cols.mean(axis=1) if mean else cols.sum(axis=1))


def composite_context(
    doc: TaggedDocument,
    i: int,
    doc_vector: np.ndarray,
    word_matrix: np.ndarray,
    c: int,
    combine: str = "sum",
) -> np.ndarray:
    """Feature vector for predicting the word at position i: the document
    vector plus the sum (or mean) of in-window context word vectors."""
    ctx = context_window(doc, i, c)
    return _combine(doc_vector, word_matrix, ctx, combine == "mean")


def _position_contexts(words: list[int], c: int):
    """Per-position (ctx_ids, unique_ids, multiplicity) triples.

    multiplicity is None when the window has no repeated word, letting the
    update skip the per-column scaling.  Unique ids keep first-occurrence
    order, so the result is deterministic.
    """
    out = []
    n = len(words)
    for i in range(n):
        ctx = words[max(0, i - c) : i] + words[i + 1 : i + 1 + c]
        if not ctx:
            out.append((_EMPTY_IDS, _EMPTY_IDS, None))
            continue
        ids = np.array(ctx, dtype=np.int64)
        if len(set(ctx)) == len(ctx):
            out.append((ids, ids, None))
        else:
            counts: dict[int, int] = {}
            for w in ctx:
                counts[w] = counts.get(w, 0) + 1
            uniq = np.array(list(counts.keys()), dtype=np.int64)
            mult = np.array(list(counts.values()), dtype=np.float32)
            out.append((ids, uniq, mult))
    return out


def hs_loss_grad(
    feature: np.ndarray, word_id: int, tree: HuffmanTree, node_matrix: np.ndarray
) -> tuple[float, np.ndarray]:
    """Word loss -sum log sigma(sign * <feature, h>) and its gradient with
    respect to the feature; no parameter is modified."""
    nodes = tree.node_ids[word_id]
    if nodes.size == 0:
        return 0.0, np.zeros_like(feature)
    signs = tree.signs[word_id]
    cols = node_matrix[:, nodes]
    z = ((feature @ cols) * signs).astype(np.float64)
    loss = -float(log_expit(z).sum())
    coef = ((1.0 - expit(z)) * signs).astype(node_matrix.dtype)
    return loss, -(cols @ coef)


def hs_step(
    feature: np.ndarray,
    word_id: int,
    tree: HuffmanTree,
    node_matrix: np.ndarray,
    lr: float,
) -> tuple[float, np.ndarray]:
    """One SGD step on the path columns; returns the pre-update loss and
    the gradient with respect to the feature (also pre-update)."""
    nodes = tree.node_ids[word_id]
    if nodes.size == 0:
        return 0.0, np.zeros_like(feature)
    signs = tree.signs[word_id]
    cols = node_matrix[:, nodes]
    z = ((feature @ cols) * signs).astype(np.float64)
    loss = -float(log_expit(z).sum())
    coef = ((1.0 - expit(z)) * signs).astype(node_matrix.dtype)
    grad_feature = -(cols @ coef)
    node_matrix[:, nodes] += (lr * feature)[:, None] * coef[None, :]
    return loss, grad_feature


def sample_negatives(rng: Generator, num_tags: int, count: int, exclude: int) -> np.ndarray:
    """count i.i.d. uniform draws over [0, num_tags) excluding one id;
    collisions with the excluded id are redrawn."""
    if num_tags < 2:
        raise DegenerateTagSet("negative sampling needs at least two tags")
    out = np.empty(count, dtype=np.int64)
    for j in range(count):
        draw = int(rng.integers(num_tags))
        while draw == exclude:
            draw = int(rng.integers(num_tags))
        out[j] = draw
    return out


def tag_step(
    doc_vector: np.ndarray,
    pos_tag: int,
    neg_tags,
    tag_matrix: np.ndarray,
    alpha: float,
    lr: float,
) -> float:
    """One step pulling the document vector toward its tag and away from
    the sampled negatives.

    Minimizes -[log sigma(<d, t_pos>) + sum_j log sigma(-<d, t_neg_j>)],
    scaled by alpha; returns that scaled loss at the pre-update
    parameters.  Updates doc_vector and the touched tag columns in place.
    """
    pos_col = tag_matrix[:, pos_tag]
    z_pos = float(doc_vector @ pos_col)
    pos_coef = 1.0 - _sigma(z_pos)
    scale = lr * alpha

    if len(neg_tags) == 1:
        neg = int(neg_tags[0])
        neg_col = tag_matrix[:, neg]
        z_neg = float(doc_vector @ neg_col)
        loss = -_log_sigma(z_pos) - _log_sigma(-z_neg)
        neg_coef = _sigma(z_neg)
        grad_doc = neg_coef * neg_col - pos_coef * pos_col
        tag_matrix[:, pos_tag] += (scale * pos_coef) * doc_vector
        tag_matrix[:, neg] -= (scale * neg_coef) * doc_vector
        doc_vector -= scale * grad_doc
        return alpha * loss

    counts: dict[int, int] = {}
    for t in neg_tags:
        t = int(t)
        counts[t] = counts.get(t, 0) + 1
    neg_ids = np.array(list(counts.keys()), dtype=np.int64)
    neg_mult = np.array(list(counts.values()), dtype=np.float64)
    neg_cols = tag_matrix[:, neg_ids]
    z_neg = (doc_vector @ neg_cols).astype(np.float64)

    loss = -_log_sigma(z_pos) - float(neg_mult @ log_expit(-z_neg))
    neg_coef = (expit(z_neg) * neg_mult).astype(tag_matrix.dtype)
    grad_doc = neg_cols @ neg_coef - pos_coef * pos_col
    tag_matrix[:, pos_tag] += (scale * pos_coef) * doc_vector
    if neg_ids.size:
        tag_matrix[:, neg_ids] -= (scale * doc_vector)[:, None] * neg_coef[None, :]
    doc_vector -= scale * grad_doc
    return alpha * loss


def _train_positions(
    model: Model,
    doc_vector: np.ndarray,
    words: list[int],
    contexts,
    tags: tuple[int, ...],
    lr: float,
    rng: Generator,
) -> tuple[float, float]:
    """Inner SGD loop over one document's positions; returns the word loss
    and the unscaled tag loss."""
    h = model.hyper
    word_matrix = model.params.words
    tag_matrix = model.params.tags
    node_matrix = model.params.nodes
    tree = model.tree
    alpha = h.alpha
    negatives = h.negatives
    num_tags = len(model.tagdict)
    mean_mode = h.combine == "mean"
    per_position = h.tag_update == "position"

    hs_total = 0.0
    tag_total = 0.0
    for i, word in enumerate(words):
        ctx, uniq, mult = contexts[i]
        feature = _combine(doc_vector, word_matrix, ctx, mean_mode)
        loss, grad = hs_step(feature, word, tree, node_matrix, lr)
        hs_total += loss
        doc_vector -= lr * grad
        if ctx.size:
            step = (lr / ctx.size) if mean_mode else lr
            if mult is None:
                word_matrix[:, uniq] -= (step * grad)[:, None]
            else:
                word_matrix[:, uniq] -= (step * grad)[:, None] * mult[None, :]
        if per_position:
            for tag in tags:
                negs = sample_negatives(rng, num_tags, negatives, tag)
                tag_total += tag_step(doc_vector, tag, negs, tag_matrix, alpha, lr)
    if not per_position:
        for tag in tags:
            negs = sample_negatives(rng, num_tags, negatives, tag)
            tag_total += tag_step(doc_vector, tag, negs, tag_matrix, alpha, lr)
    if alpha > 0:
        tag_total /= alpha
    return hs_total, tag_total


def _train_document(
    model: Model, doc: TaggedDocument, lr: float, rng: Generator, contexts=None
) -> tuple[float, float, int]:
    """Returns (word loss, unscaled tag loss, positions)."""
    n = doc.num_words
    if n == 0:
        return 0.0, 0.0, 0
    words = doc.words.tolist()
    if contexts is None:
        contexts = _position_contexts(words, model.hyper.window)
    doc_vector = model.params.docs[:, doc.doc_id]
    hs_total, tag_total = _train_positions(
        model, doc_vector, words, contexts, doc.tags, lr, rng
    )
    return hs_total, tag_total, n


def train_document(model: Model, doc: TaggedDocument, lr: float, rng: Generator) -> float:
    """Full per-document loss (word part plus alpha-scaled tag part);
    parameters updated in place."""
    hs_total, tag_total, _ = _train_document(model, doc, lr, rng)
    return hs_total + model.hyper.alpha * tag_total


def _check_finite(model: Model, epoch: int) -> None:
    p = model.params
    for m in (p.words, p.docs, p.tags, p.nodes):
        if not np.isfinite(m).all():
            raise NaNDetected(epoch)


def _emit(config: TrainConfig, report: LossReport) -> None:
    if config.progress:
        print(
            json.dumps(
                {
                    "epoch": report.epoch,
                    "docs": report.docs_seen,
                    "hs_loss": round(report.mean_hs_loss, 6),
                    "tag_loss": round(report.mean_tag_loss, 6),
                    "lr": report.lr_current,
                }
            ),
            file=sys.stderr,
        )


def _make_report(epoch, docs_seen, hs_sum, tag_sum, positions, lr) -> LossReport:
    denom = max(positions, 1)
    return LossReport(
        epoch=epoch,
        docs_seen=docs_seen,
        mean_hs_loss=hs_sum / denom,
        mean_tag_loss=tag_sum / denom,
        lr_current=lr,
    )


def train(model: Model, dataset: Dataset, config: TrainConfig | None = None) -> list[LossReport]:
    """Run hyper.epochs full passes with the learning rate decaying
    linearly from lr_initial to lr_final over all scheduled positions.

    The lr is refreshed at each document from the count of positions
    completed so far.  With workers=1 the result is bit-deterministic for
    a fixed seed.  Per-epoch reports stream as JSON lines on stderr.
    """
    config = config or TrainConfig()
    if model.trained_docs != dataset.num_documents:
        raise ValueError(
            f"model has {model.trained_docs} document columns, dataset has "
            f"{dataset.num_documents}"
        )
    docs = dataset.documents
    h = model.hyper
    c = h.window
    contexts = [_position_contexts(d.words.tolist(), c) for d in docs]
    positions_per_epoch = sum(d.num_words for d in docs)
    total = h.epochs * positions_per_epoch
    order = np.arange(len(docs))
    done = 0
    reports = []
    for epoch in range(1, h.epochs + 1):
        if config.shuffle:
            model.rng.shuffle(order)
        if config.workers > 1:
            hs_sum, tag_sum, seen = _train_epoch_relaxed(
                model, docs, contexts, order, done, total, config
            )
            done += seen
        else:
            hs_sum = tag_sum = 0.0
            seen = 0
            for count, idx in enumerate(order, start=1):
                lr = linear_lr(done, total, h.lr_initial, h.lr_final)
                hs, tag, n = _train_document(
                    model, docs[idx], lr, model.rng, contexts[idx]
                )
                hs_sum += hs
                tag_sum += tag
                done += n
                seen += n
                if config.report_every and count % config.report_every == 0:
                    _emit(config, _make_report(epoch, count, hs_sum, tag_sum, seen, lr))
        _check_finite(model, epoch)
        report = _make_report(
            epoch, len(docs), hs_sum, tag_sum, seen,
            linear_lr(done, total, h.lr_initial, h.lr_final),
        )
        _emit(config, report)
        reports.append(report)
    return reports


def _train_epoch_relaxed(model, docs, contexts, order, done, total, config):
    """Lock-free multi-worker epoch: workers update the shared matrices
    concurrently, accepting benign races.  Not bit-deterministic."""
    h = model.hyper
    shards = np.array_split(order, config.workers)
    rngs = model.rng.spawn(config.workers)

    def run(shard, rng):
        hs_sum = tag_sum = 0.0
        seen = 0
        for idx in shard:
            lr = linear_lr(done + seen, total, h.lr_initial, h.lr_final)
            hs, tag, n = _train_document(model, docs[idx], lr, rng, contexts[idx])
            hs_sum += hs
            tag_sum += tag
            seen += n
        return hs_sum, tag_sum, seen

    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        results = list(pool.map(run, shards, rngs))
    hs_sum = sum(r[0] for r in results)
    tag_sum = sum(r[1] for r in results)
    seen = sum(r[2] for r in results)
    return hs_sum, tag_sum, seen


def encode_incremental(
    model: Model, docs: Sequence[tuple[Sequence[str], Sequence[str]]]
) -> list[tuple[np.ndarray, tuple[int, ...]]]:
    """Encode (tokens, tag_strings) pairs against the model's fixed maps.

    Out-of-vocabulary tokens are dropped; a tag missing from the tag
    dictionary raises UnknownTag (grow the tag set first with add_tags).
    """
    word_to_id = model.vocab.word_to_id
    tag_to_id = model.tagdict.tag_to_id
    encoded = []
    for tokens, tag_strings in docs:
        tag_ids = set()
        for tag in tag_strings:
            tag_id = tag_to_id.get(tag)
            if tag_id is None:
                raise UnknownTag(f"tag {tag!r} not in tag dictionary; add_tags first")
            tag_ids.add(tag_id)
        words = np.array(
            [word_to_id[t] for t in tokens if t in word_to_id], dtype=np.int64
        )
        encoded.append((words, tuple(sorted(tag_ids))))
    return encoded


def train_incremental(
    model: Model,
    docs: Sequence[tuple[Sequence[str], Sequence[str]]],
    config: TrainConfig | None = None,
    lr: float = INCREMENTAL_LR,
    epochs: int | None = None,
) -> LossReport:
    """Feed a chunk of new documents to an existing model.

    Each document gets a fresh column appended to the docs matrix; words,
    tags, and tree parameters continue from their current values.  The
    chunk is optimized for `epochs` passes (default: the model's epoch
    count) at a constant learning rate.  Returns the final-pass report.
    """
    config = config or TrainConfig()
    if lr <= 0:
        raise ValueError("lr must be positive")
    encoded = encode_incremental(model, docs)
    start = grow_docs(model, len(encoded))
    chunk = [
        TaggedDocument(doc_id=start + j, words=words, tags=tags)
        for j, (words, tags) in enumerate(encoded)
    ]
    contexts = [_position_contexts(d.words.tolist(), model.hyper.window) for d in chunk]
    passes = model.hyper.epochs if epochs is None else epochs
    order = np.arange(len(chunk))
    report = _make_report(0, len(chunk), 0.0, 0.0, 0, lr)
    for epoch in range(1, passes + 1):
        if config.shuffle:
            model.rng.shuffle(order)
        hs_sum = tag_sum = 0.0
        seen = 0
        for idx in order:
            hs, tag, n = _train_document(model, chunk[idx], lr, model.rng, contexts[idx])
            hs_sum += hs
            tag_sum += tag
            seen += n
        _check_finite(model, epoch)
        report = _make_report(epoch, len(chunk), hs_sum, tag_sum, seen, lr)
        _emit(config, report)
    return report
