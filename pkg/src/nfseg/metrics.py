"""Confusion-matrix metrics: per-class, macro-mean and pooled IoU and F-score.

The pooled ("aggregate") variants sum TP, FP and FN over classes before
dividing. A class absent from both truth and prediction has no defined score
and is left out of the macro mean.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation

CSV_HEADER = (
    ["mean_iou", "aggregate_iou", "mean_f", "aggregate_f"]
    + [f"iou_{c}" for c in range(6)]
    + [f"f_{c}" for c in range(6)]
    + ["pixels", "params", "seed", "runtime_s"]
)


def confusion_matrix(pred, truth, K=6):
    """Counts of ``(truth, pred)`` pairs; rows are ground truth, columns prediction."""
    pred = np.asarray(pred).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    if pred.shape != truth.shape:
        raise ContractViolation(f"pred has {pred.size} entries, truth {truth.size}")
    for name, a in (("pred", pred), ("truth", truth)):
        if a.size and (a.min() < 0 or a.max() >= K):
            raise ContractViolation(f"{name} contains a class outside [0, {K})")
    idx = truth.astype(np.int64) * K + pred.astype(np.int64)
    return np.bincount(idx, minlength=K * K).reshape(K, K)


def _counts(confusion):
    confusion = np.asarray(confusion, dtype=np.float64)
    tp = np.diag(confusion)
    fp = confusion.sum(axis=0) - tp
    fn = confusion.sum(axis=1) - tp
    return tp, fp, fn


def _ratio(num, den):
    out = np.full(num.shape, np.nan)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out


def iou(confusion):
    """Returns ``(per_class, macro_mean, aggregate)``; undefined classes are NaN."""
    tp, fp, fn = _counts(confusion)
    per_class = _ratio(tp, tp + fp + fn)
    macro = float(np.nanmean(per_class)) if np.isfinite(per_class).any() else float("nan")
    den = tp.sum() + fp.sum() + fn.sum()
    aggregate = float(tp.sum() / den) if den > 0 else float("nan")
    return per_class, macro, aggregate


def f_score(confusion):
    """Dice/F1 analogue of :func:`iou`: ``2TP / (2TP + FP + FN)``."""
    tp, fp, fn = _counts(confusion)
    per_class = _ratio(2 * tp, 2 * tp + fp + fn)
    macro = float(np.nanmean(per_class)) if np.isfinite(per_class).any() else float("nan")
    den = 2 * tp.sum() + fp.sum() + fn.sum()
    aggregate = float(2 * tp.sum() / den) if den > 0 else float("nan")
    return per_class, macro, aggregate


def f_from_iou(iou_value):
    """F-score implied by an IoU value: ``2 IoU / (1 + IoU)``."""
    iou_value = np.asarray(iou_value, dtype=np.float64)
    return 2 * iou_value / (1 + iou_value)


@dataclass
class MetricsReport:
    confusion: np.ndarray
    per_class_iou: np.ndarray
    mean_iou: float
    aggregate_iou: float
    per_class_f: np.ndarray
    mean_f: float
    aggregate_f: float
    params: int = 0
    seed: int = 0
    runtime_s: float = 0.0
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_confusion(cls, confusion, **kwargs):
        confusion = np.asarray(confusion, dtype=np.int64)
        per_iou, mean_iou, agg_iou = iou(confusion)
        per_f, mean_f, agg_f = f_score(confusion)
        return cls(confusion, per_iou, mean_iou, agg_iou, per_f, mean_f, agg_f, **kwargs)

    @property
    def pixels(self):
        return int(self.confusion.sum())

    def csv_row(self, include_runtime=True):
        values = [self.mean_iou, self.aggregate_iou, self.mean_f, self.aggregate_f,
                  *self.per_class_iou, *self.per_class_f]
        cells = [format_value(v) for v in values]
        cells += [str(self.pixels), str(self.params), str(self.seed)]
        cells.append(f"{self.runtime_s:.3f}" if include_runtime else "")
        return ",".join(cells)

    def to_csv(self, include_runtime=True):
        return ",".join(CSV_HEADER) + "\n" + self.csv_row(include_runtime) + "\n"

    def table(self, class_names=None):
        names = class_names or [f"class {c}" for c in range(len(self.per_class_iou))]
        buf = io.StringIO()
        buf.write(f"{'class':<16}{'IoU':>10}{'F':>10}{'pixels':>10}\n")
        for name, i, f, n in zip(names, self.per_class_iou, self.per_class_f,
                                 self.confusion.sum(axis=1)):
            buf.write(f"{name:<16}{format_value(i):>10}{format_value(f):>10}{n:>10d}\n")
        fmt = format_value
        buf.write(f"{'macro mean':<16}{fmt(self.mean_iou):>10}{fmt(self.mean_f):>10}\n")
        buf.write(f"{'aggregate':<16}{fmt(self.aggregate_iou):>10}{fmt(self.aggregate_f):>10}"
                  f"{self.pixels:>10d}\n")
        return buf.getvalue()


def format_value(v):
    return "nan" if not np.isfinite(v) else f"{v:.6f}"
