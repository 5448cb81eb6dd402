"""
Evaluation reports: confusion matrices, per-class precision/recall and
model comparison tables
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .dataset_pipeline import ClassVocabulary, PreprocessConfig
from .errors import (BadIndexError, EmptyInputError, LengthMismatchError,
                     ReportIOError)
from .logging_config import setup_logging
from .losses import categorical_cross_entropy
from .training_engine import predict_split

logger = setup_logging('evaluation')

UNDEFINED = 'n/a'


def _ratio(numerator, denominator):
    return None if denominator == 0 else numerator / denominator


def _fmt(value, digits=3):
    return UNDEFINED if value is None else f"{value:.{digits}f}"


def _mean_defined(values):
    defined = [value for value in values if value is not None]
    return sum(defined) / len(defined) if defined else None


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    counts: np.ndarray
    vocabulary: ClassVocabulary

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def support(self):
        return self.counts.sum(axis=1)

    @property
    def accuracy(self):
        total = self.total
        return int(np.trace(self.counts)) / total if total else None

    def to_list(self):
        return self.counts.tolist()


@dataclass
class ClassMetrics:
    name: str
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]
    support: int


def confusion_and_per_class(predictions, truths, vocabulary):
    """
    Confusion matrix and per-class metrics

    precision_c = CM[c][c] / column c; recall_c = CM[c][c] / row c; f1 their
    harmonic mean. A zero denominator leaves the value as None (rendered
    "n/a").

    Raises:
        LengthMismatchError: predictions and truths differ in length
        BadIndexError: an index outside the vocabulary
    """
    predictions = [int(p) for p in predictions]
    truths = [int(t) for t in truths]
    if len(predictions) != len(truths):
        raise LengthMismatchError(f"{len(predictions)} predictions for {len(truths)} truths")
    size = len(vocabulary)
    for position, (predicted, truth) in enumerate(zip(predictions, truths)):
        if not (0 <= predicted < size and 0 <= truth < size):
            raise BadIndexError(
                f"pair {position} ({truth}, {predicted}) outside the {size}-class vocabulary"
            )

    counts = np.zeros((size, size), dtype=np.int64)
    if truths:
        np.add.at(counts, (np.asarray(truths), np.asarray(predictions)), 1)
    matrix = ConfusionMatrix(counts, vocabulary)

    per_class = []
    for index, name in enumerate(vocabulary.names):
        hits = int(counts[index, index])
        precision = _ratio(hits, int(counts[:, index].sum()))
        recall = _ratio(hits, int(counts[index, :].sum()))
        if precision is None or recall is None or precision + recall == 0:
            f1 = None
        else:
            f1 = 2 * precision * recall / (precision + recall)
        per_class.append(ClassMetrics(name, precision, recall, f1, int(counts[index, :].sum())))
    return matrix, per_class


@dataclass
class ClassificationReport:
    split: str
    loss: float
    accuracy: float
    per_class: List[ClassMetrics]
    sample_count: int
    confusion: ConfusionMatrix
    label: str = 'model'

    @property
    def macro_precision(self):
        return _mean_defined(m.precision for m in self.per_class)

    @property
    def macro_recall(self):
        return _mean_defined(m.recall for m in self.per_class)

    @property
    def macro_f1(self):
        return _mean_defined(m.f1 for m in self.per_class)

    def headline(self):
        return f"{self.split} accuracy {self.accuracy * 100:.1f}%"

    def render(self):
        width = max([len('macro avg')] + [len(m.name) for m in self.per_class])
        lines = [
            f"{self.headline()} (loss {self.loss:.4f}, {self.sample_count} samples)",
            "",
            f"{'class':<{width}}  {'precision':>9}  {'recall':>6}  {'f1':>5}  {'support':>7}",
        ]
        for m in self.per_class:
            lines.append(f"{m.name:<{width}}  {_fmt(m.precision):>9}  {_fmt(m.recall):>6}  "
                         f"{_fmt(m.f1):>5}  {m.support:>7}")
        lines.append(f"{'macro avg':<{width}}  {_fmt(self.macro_precision):>9}  "
                     f"{_fmt(self.macro_recall):>6}  {_fmt(self.macro_f1):>5}  {self.sample_count:>7}")
        lines += ["", "confusion matrix (rows: true, columns: predicted)"]
        for name, row in zip(self.confusion.vocabulary.names, self.confusion.counts):
            lines.append(f"{name:<{width}}  " + " ".join(f"{int(c):>5}" for c in row))
        return "\n".join(lines)

    def to_dict(self):
        return {
            'label': self.label,
            'split': self.split,
            'loss': self.loss,
            'accuracy': self.accuracy,
            'sample_count': self.sample_count,
            'vocabulary': list(self.confusion.vocabulary.names),
            'confusion_matrix': self.confusion.to_list(),
            'per_class': [
                {'name': m.name, 'precision': m.precision, 'recall': m.recall, 'f1': m.f1, 'support': m.support}
                for m in self.per_class
            ],
            'macro': {'precision': self.macro_precision, 'recall': self.macro_recall, 'f1': self.macro_f1},
        }

    @classmethod
    def from_dict(cls, data):
        vocabulary = ClassVocabulary(tuple(data['vocabulary']))
        confusion = ConfusionMatrix(np.asarray(data['confusion_matrix'], dtype=np.int64), vocabulary)
        per_class = [ClassMetrics(m['name'], m['precision'], m['recall'], m['f1'], int(m['support']))
                     for m in data['per_class']]
        return cls(data['split'], float(data['loss']), float(data['accuracy']), per_class,
                   int(data['sample_count']), confusion, data.get('label', 'model'))

    def save(self, path):
        return _write_json(path, self.to_dict())

    @classmethod
    def load(cls, path):
        with open(path, 'r', encoding='utf-8') as f:
            return cls.from_dict(json.load(f))


def _write_json(path, data):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(data, f, indent=2)
    except OSError as exc:
        raise ReportIOError(f"cannot write {path}: {exc}") from None
    return path


def evaluate_split(arch, params, manifest, split, batch_size=32, preprocess=PreprocessConfig(),
                   workers=1, label='model'):
    """
    Score a split in eval mode

    Loss is the mean categorical cross-entropy; predictions are the per-row
    argmax, ties going to the lowest class index.

    Raises:
        EmptySplitError: the split has no records
    """
    probabilities, truths = predict_split(arch, params, manifest, split, batch_size, preprocess, workers)
    onehot = np.eye(arch.num_classes, dtype=probabilities.dtype)[truths]
    loss = categorical_cross_entropy(probabilities, onehot)
    predictions = probabilities.argmax(axis=1)
    confusion, per_class = confusion_and_per_class(predictions, truths, manifest.vocabulary)
    report = ClassificationReport(split, loss, confusion.accuracy, per_class, confusion.total, confusion, label)
    logger.info(f"[{label}] {report.headline()} (loss {loss:.4f}, {confusion.total} samples)")
    return report


@dataclass
class ComparisonRow:
    label: str
    best_val_accuracy: float
    test_accuracy: float
    test_loss: float
    total_params: int
    trainable_params: int
    epochs_trained: int


@dataclass
class ComparisonReport:
    rows: List[ComparisonRow] = field(default_factory=list)

    def render(self):
        width = max([len('model')] + [len(row.label) for row in self.rows])
        lines = [f"{'model':<{width}}  {'test acc':>8}  {'test loss':>9}  {'best val acc':>12}  "
                 f"{'params':>11}  {'trainable':>11}  {'epochs':>6}"]
        for row in self.rows:
            lines.append(
                f"{row.label:<{width}}  {row.test_accuracy * 100:>7.1f}%  {row.test_loss:>9.4f}  "
                f"{row.best_val_accuracy * 100:>11.1f}%  {row.total_params:>11,}  "
                f"{row.trainable_params:>11,}  {row.epochs_trained:>6}"
            )
        return "\n".join(lines)

    def to_dict(self):
        return {'runs': [vars(row).copy() for row in self.rows]}

    def save(self, path):
        return _write_json(path, self.to_dict())


def compare_runs(entries: Sequence):
    """
    Comparison table sorted by test accuracy, best first

    Args:
        entries: (TrainingHistory, ClassificationReport, ParameterCount)
            triples; equal accuracies keep their input order

    Raises:
        EmptyInputError: no entries
    """
    entries = list(entries)
    if not entries:
        raise EmptyInputError("compare needs at least one run")
    rows = []
    for history, report, counts in entries:
        rows.append(ComparisonRow(
            label=history.label,
            best_val_accuracy=history.metrics_for(history.best_epoch).val_accuracy,
            test_accuracy=report.accuracy,
            test_loss=report.loss,
            total_params=int(counts.total),
            trainable_params=int(counts.trainable),
            epochs_trained=len(history.epochs),
        ))
    rows.sort(key=lambda row: -row.test_accuracy)
    return ComparisonReport(rows)
