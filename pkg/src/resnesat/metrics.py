"""Confusion-matrix accounting and the five derived classification scores.

A metric whose denominator is zero is reported as None ("undefined" in
rendered output), never silently coerced to 0 or 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

METRIC_NAMES = ("recall", "specificity", "precision", "f1", "accuracy")


@dataclass
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int
    positive_name: str = "positive"

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @classmethod
    def from_predictions(cls, labels, predictions, positive=1,
                         positive_name="positive") -> "ConfusionMatrix":
        labels = np.asarray(labels)
        predictions = np.asarray(predictions)
        if labels.shape != predictions.shape:
            raise ValueError(f"labels {labels.shape} vs predictions {predictions.shape}")
        pos_pred = predictions == positive
        pos_true = labels == positive
        return cls(
            tp=int(np.sum(pos_pred & pos_true)),
            fp=int(np.sum(pos_pred & ~pos_true)),
            fn=int(np.sum(~pos_pred & pos_true)),
            tn=int(np.sum(~pos_pred & ~pos_true)),
            positive_name=positive_name,
        )

    def swapped(self) -> "ConfusionMatrix":
        """The same counts with the positive-class definition inverted."""
        return ConfusionMatrix(tp=self.tn, fp=self.fn, fn=self.fp, tn=self.tp,
                               positive_name=f"not {self.positive_name}")


def _ratio(num: int, den: int):
    return None if den == 0 else num / den


@dataclass
class MetricsReport:
    recall: float | None
    specificity: float | None
    precision: float | None
    f1: float | None
    accuracy: float | None

    @classmethod
    def from_confusion(cls, cm: ConfusionMatrix) -> "MetricsReport":
        recall = _ratio(cm.tp, cm.tp + cm.fn)
        specificity = _ratio(cm.tn, cm.tn + cm.fp)
        precision = _ratio(cm.tp, cm.tp + cm.fp)
        if recall is None or precision is None or recall + precision == 0:
            f1 = None
        else:
            f1 = 2 * recall * precision / (recall + precision)
        accuracy = _ratio(cm.tp + cm.tn, cm.total)
        return cls(recall, specificity, precision, f1, accuracy)

    def values(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_NAMES}

    def formatted(self, digits: int = 4) -> dict:
        return {name: "undefined" if v is None else f"{v:.{digits}f}"
                for name, v in self.values().items()}


def pooled_confusion(matrices) -> ConfusionMatrix:
    """Sum counts across folds (micro-average basis)."""
    matrices = list(matrices)
    return ConfusionMatrix(
        tp=sum(m.tp for m in matrices),
        fp=sum(m.fp for m in matrices),
        fn=sum(m.fn for m in matrices),
        tn=sum(m.tn for m in matrices),
        positive_name=matrices[0].positive_name if matrices else "positive",
    )


def aggregate_reports(reports) -> dict:
    """Unweighted per-fold mean and population stddev of each metric.

    Folds where a metric is undefined are skipped for that metric; the
    returned entry records how many folds contributed.
    """
    out = {}
    for name in METRIC_NAMES:
        defined = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        if defined:
            out[name] = {
                "mean": float(np.mean(defined)),
                "std": float(np.std(defined)),
                "n": len(defined),
            }
        else:
            out[name] = {"mean": None, "std": None, "n": 0}
    return out
