"""Top-k categorical accuracy, the dummy baseline, and average error reduction.

A category's prediction is a hit when any ground-truth label sits in the
model's top-k ranking for that category. The dummy predictor ignores its
input and always ranks labels by training-set frequency; AER averages the
per-category error reduction of the model relative to that baseline.
Categories small enough that top-k trivially covers them (size <= k) are
excluded from AER, since their accuracy is forced to 1.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .conditions import ConditionDictionary, decode_target
from .errors import ValidationError
from .model import RankedPrediction, ReactionInputs, ReactionModel, predict

REPORT_FORMAT_VERSION = 1


@dataclass
class RankingSet:
    """Per-sample rankings and truth sets, aligned by category name."""

    categories: list[str]
    predicted: list[dict[str, list[str]]]  # full ranking per category
    truth: list[dict[str, set[str]]]

    def __post_init__(self):
        if len(self.predicted) != len(self.truth):
            raise ValidationError("predicted and truth sample counts differ")


def categorical_accuracy(rankings: RankingSet, k: int) -> dict[str, float]:
    """A_c = mean over samples of [top-k prediction intersects truth]."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    if not rankings.predicted:
        raise ValidationError("cannot score an empty test set")
    out: dict[str, float] = {}
    for cat in rankings.categories:
        hits = sum(
            1
            for pred, truth in zip(rankings.predicted, rankings.truth)
            if set(pred[cat][:k]) & truth[cat]
        )
        out[cat] = hits / len(rankings.predicted)
    return out


@dataclass
class DummyPredictor:
    """Input-independent baseline: per-category labels by training frequency."""

    rankings: dict[str, list[str]]
    frequencies: dict[str, dict[str, int]] = field(default_factory=dict)

    def top(self, k: int) -> dict[str, list[str]]:
        return {cat: labels[:k] for cat, labels in self.rankings.items()}


def fit_dummy(
    targets: Sequence[np.ndarray], dictionary: ConditionDictionary
) -> DummyPredictor:
    """Order each category's bins by training-set hit count (ties: bin order)."""
    if not targets:
        raise ValidationError("cannot fit the dummy on zero targets")
    stacked = np.asarray(targets)
    counts = stacked.sum(axis=0)
    rankings: dict[str, list[str]] = {}
    frequencies: dict[str, dict[str, int]] = {}
    for name, window in dictionary.slices().items():
        labels = dictionary.category(name).labels()
        per_bin = counts[window]
        order = np.argsort(-per_bin, kind="stable")
        rankings[name] = [labels[i] for i in order]
        frequencies[name] = {labels[i]: int(per_bin[i]) for i in order}
    return DummyPredictor(rankings=rankings, frequencies=frequencies)


def aer(
    model_accuracy: Mapping[str, float],
    dummy_accuracy: Mapping[str, float],
    exclude: Sequence[str] = (),
) -> float:
    """Average error reduction over the included categories; may be negative."""
    included = [c for c in model_accuracy if c not in set(exclude)]
    if set(included) - set(dummy_accuracy):
        raise ValidationError("model and dummy accuracy categories are not aligned")
    if not included:
        raise ValidationError("no categories left to average")
    terms = []
    for cat in included:
        d = dummy_accuracy[cat]
        if d == 1.0:
            raise ValidationError(
                f"dummy accuracy is 1.0 in category {cat!r} (division by zero); "
                "exclude it from the AER average"
            )
        terms.append((model_accuracy[cat] - d) / (1.0 - d))
    return float(sum(terms) / len(terms))


@dataclass
class EvalReport:
    """Per-category accuracy table at one k, with the AER summary."""

    k: int
    n_samples: int
    categories: list[str]
    dummy_accuracy: dict[str, float]
    model_accuracy: dict[str, float] | None
    model_aer: float | None
    excluded: list[str]

    def to_json_dict(self) -> dict:
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "k": self.k,
            "n_samples": self.n_samples,
            "n_categories": len(self.categories),
            "categories": self.categories,
            "dummy_accuracy": self.dummy_accuracy,
            "model_accuracy": self.model_accuracy,
            "model_aer": self.model_aer,
            "excluded_from_aer": self.excluded,
        }


def evaluate(
    model: ReactionModel | None,
    dummy: DummyPredictor,
    pairs: Sequence[tuple[ReactionInputs, np.ndarray]],
    dictionary: ConditionDictionary,
    ks: Sequence[int] = (1, 3),
) -> list[EvalReport]:
    """Score the model (optional) and dummy on featurized test pairs.

    Categories whose size <= k are flagged as excluded from that k's AER;
    their accuracies still appear in the table.
    """
    if not pairs:
        raise ValidationError("cannot evaluate on an empty test set")
    categories = dictionary.category_names()
    truth = [decode_target(target, dictionary) for _, target in pairs]
    dummy_rankings = RankingSet(
        categories=categories,
        predicted=[dict(dummy.rankings) for _ in pairs],
        truth=truth,
    )
    model_rankings = None
    if model is not None:
        predictions: list[RankedPrediction] = [
            predict(model, inputs, dictionary) for inputs, _ in pairs
        ]
        model_rankings = RankingSet(
            categories=categories,
            predicted=[
                {c.name: c.labels() for c in p.categories} for p in predictions
            ],
            truth=truth,
        )

    reports = []
    for k in ks:
        dummy_acc = categorical_accuracy(dummy_rankings, k)
        excluded = [c for c in categories if dictionary.category(c).size <= k]
        model_acc = None
        model_aer = None
        if model_rankings is not None:
            model_acc = categorical_accuracy(model_rankings, k)
            model_aer = aer(model_acc, dummy_acc, exclude=excluded)
        reports.append(
            EvalReport(
                k=k,
                n_samples=len(pairs),
                categories=categories,
                dummy_accuracy=dummy_acc,
                model_accuracy=model_acc,
                model_aer=model_aer,
                excluded=excluded,
            )
        )
    return reports


def write_report_csv(report: EvalReport, path: str | Path) -> None:
    """Accuracy table: one row per category, AER as the closing row."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        handle.write(f"# rxncond eval report, format_version={REPORT_FORMAT_VERSION}\n")
        writer = csv.writer(handle)
        header = ["category", "dummy"]
        if report.model_accuracy is not None:
            header.append("model")
        header.append("excluded_from_aer")
        writer.writerow(header)
        for cat in report.categories:
            row = [cat, repr(report.dummy_accuracy[cat])]
            if report.model_accuracy is not None:
                row.append(repr(report.model_accuracy[cat]))
            row.append("yes" if cat in report.excluded else "no")
            writer.writerow(row)
        if report.model_aer is not None:
            writer.writerow(["AER", "", repr(report.model_aer), ""])


def write_report_json(report: EvalReport, path: str | Path, extra: Mapping | None = None) -> None:
    payload = report.to_json_dict()
    payload.update(extra or {})
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
