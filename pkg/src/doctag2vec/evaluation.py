"""Precision@k / overall-recall metrics and the end-to-end experiment
loop (train an ensemble, predict on a held-out split, measure).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Collection, Sequence

from .corpus import Record, load_dataset, read_records, tokenize
from .errors import EmptyDocument
from .inference import INFER_LR, INFER_STEPS
from .model import Hyperparameters
from .predictor import (
    Ensemble,
    aggregate_selections,
    learner_scores,
    top_entries,
    train_ensemble,
)
from .trainer import TrainConfig


@dataclass
class MetricsReport:
    precision_at: dict[int, float]  # k -> mean precision over test documents
    overall_recall: float  # micro-averaged at recall_k
    n_test: int
    tag_coverage: float  # fraction of gold tag instances present in the dictionary
    recall_k: int = 5

    def as_dict(self) -> dict:
        return {
            "precision": {str(k): v for k, v in sorted(self.precision_at.items())},
            "overall_recall": self.overall_recall,
            "n_test": self.n_test,
            "tag_coverage": self.tag_coverage,
        }


def precision_at_k(predicted: Sequence, gold: Collection, k: int) -> float:
    """|top-k(predicted) intersect gold| / k.  The denominator stays k even
    when fewer than k predictions exist; empty gold scores 0."""
    if k < 1:
        raise ValueError("k must be >= 1")
    gold_set = set(gold)
    if not gold_set:
        return 0.0
    hits = sum(1 for item in predicted[:k] if item in gold_set)
    return hits / k


def overall_recall(predicted: Sequence[Collection], golds: Sequence[Collection]) -> float:
    """Micro-averaged recall: total predicted gold tags over total gold
    tags.  Documents with empty gold contribute to neither sum."""
    if len(predicted) != len(golds):
        raise ValueError("predicted and gold lists differ in length")
    hits = 0
    total = 0
    for pred, gold in zip(predicted, golds):
        gold_set = set(gold)
        total += len(gold_set)
        hits += len(gold_set.intersection(pred))
    return hits / total if total else 0.0


def _predict_tag_lists(
    ensemble: Ensemble,
    records: Sequence[Record],
    k: int,
    steps: int,
    lr: float,
) -> list[list[str]]:
    """Top-k predicted tag strings per record; empty list for documents
    with no in-vocabulary token."""
    out = []
    id_to_tag = ensemble.learners[0].tagdict.id_to_tag
    for rec in records:
        try:
            scores = learner_scores(ensemble, tokenize(rec.text), steps=steps, lr=lr)
        except EmptyDocument:
            out.append([])
            continue
        selections = [top_entries(s, ensemble.k_prime) for s in scores]
        prediction = aggregate_selections(selections, k)
        out.append([id_to_tag[tag] for tag in prediction.tag_ids])
    return out


def score_predictions(
    predicted: Sequence[Sequence[str]],
    records: Sequence[Record],
    known_tags: Collection[str],
    k_max: int,
    recall_k: int,
) -> MetricsReport:
    """Metrics from already-computed per-document tag rankings."""
    golds = [set(rec.tags) for rec in records]
    precision = {
        k: (
            sum(precision_at_k(pred, gold, k) for pred, gold in zip(predicted, golds))
            / len(records)
            if records
            else 0.0
        )
        for k in range(1, k_max + 1)
    }
    recall = overall_recall([set(pred[:recall_k]) for pred in predicted], golds)
    total_gold = sum(len(g) for g in golds)
    covered = sum(1 for g in golds for t in g if t in known_tags)
    return MetricsReport(
        precision_at=precision,
        overall_recall=recall,
        n_test=len(records),
        tag_coverage=covered / total_gold if total_gold else 1.0,
        recall_k=recall_k,
    )


def evaluate_ensemble(
    ensemble: Ensemble,
    records: Sequence[Record],
    k_max: int = 10,
    recall_k: int = 5,
    steps: int = INFER_STEPS,
    lr: float = INFER_LR,
) -> MetricsReport:
    """Predict tags for every record and compute the metric report."""
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    recall_k = min(recall_k, k_max) if recall_k >= 1 else k_max
    predicted = _predict_tag_lists(ensemble, records, max(k_max, recall_k), steps, lr)
    known = ensemble.learners[0].tagdict.tag_to_id
    return score_predictions(predicted, records, known, k_max, recall_k)


def run_experiment(
    train_path,
    test_path,
    hyper: Hyperparameters | None = None,
    b: int = 15,
    subsample: float = 0.5,
    k_prime: int = 5,
    k_max: int = 10,
    recall_k: int = 5,
    config: TrainConfig | None = None,
) -> MetricsReport:
    """Train an ensemble on one JSONL split and measure it on another.
    Fully seeded: identical inputs and seed give an identical report."""
    hyper = hyper or Hyperparameters()
    dataset = load_dataset(train_path, min_count=hyper.min_count)
    ensemble = train_ensemble(
        dataset, hyper, b=b, subsample=subsample, k_prime=k_prime, config=config
    )
    return evaluate_ensemble(ensemble, read_records(test_path), k_max=k_max, recall_k=recall_k)


@dataclass
class SweepPoint:
    """Metrics for one (number of learners, k_prime) configuration."""

    learners: int
    k_prime: int
    precision_at: dict[int, float]
    overall_recall: float


def sweep_ensemble(
    ensemble: Ensemble,
    records: Sequence[Record],
    learner_counts: Sequence[int],
    k_prime_values: Sequence[int],
    k_max: int = 10,
    recall_k: int = 5,
    steps: int = INFER_STEPS,
    lr: float = INFER_LR,
) -> list[SweepPoint]:
    """Metrics over a grid of ensemble sizes and per-learner neighbor
    counts.  Per-learner score vectors are computed once per document and
    reused, so the grid costs little more than a single evaluation.

    Learner prefixes are valid sub-ensembles because each learner trains
    independently of the ensemble size.
    """
    if any(c < 1 or c > ensemble.size for c in learner_counts):
        raise ValueError("learner counts must be in 1..ensemble size")
    recall_k = min(recall_k, k_max) if recall_k >= 1 else k_max
    k = max(k_max, recall_k)
    per_doc_scores = []
    for rec in records:
        try:
            per_doc_scores.append(
                learner_scores(ensemble, tokenize(rec.text), steps=steps, lr=lr)
            )
        except EmptyDocument:
            per_doc_scores.append(None)
    known = ensemble.learners[0].tagdict.tag_to_id
    id_to_tag = ensemble.learners[0].tagdict.id_to_tag
    points = []
    for count in learner_counts:
        for k_prime in k_prime_values:
            predicted = []
            for scores in per_doc_scores:
                if scores is None:
                    predicted.append([])
                    continue
                selections = [top_entries(s, k_prime) for s in scores[:count]]
                prediction = aggregate_selections(selections, k)
                predicted.append([id_to_tag[tag] for tag in prediction.tag_ids])
            report = score_predictions(predicted, records, known, k_max, recall_k)
            points.append(
                SweepPoint(
                    learners=count,
                    k_prime=k_prime,
                    precision_at=report.precision_at,
                    overall_recall=report.overall_recall,
                )
            )
    return points
