"""Ranking metrics, run aggregation and paired t-tests."""
import csv
import io
import logging
from dataclasses import dataclass

import numpy as np
from .errors import InvalidInput

log = logging.getLogger(__name__)

# two-sided 99% critical value of Student's t with 4 degrees of freedom
T_CRIT_99_DF4 = 4.604


class UndefinedMetric(ValueError):
    pass


def average_precision(scores, labels):
    """Mean of precision@k over the ranks k of the positives.

    Items are ranked by descending score; equal scores keep their original
    order (stable sort), so tied AP values depend on input order.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise InvalidInput(f"scores {scores.shape} and labels {labels.shape} must be equal 1-D")
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise UndefinedMetric("average precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    hits = labels[order]
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, n_pos + 1) / ranks))


def roc_auc(scores, labels):
    """Area under the ROC curve: (concordant + 0.5 * tied) / (n_pos * n_neg)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise InvalidInput(f"scores {scores.shape} and labels {labels.shape} must be equal 1-D")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("ROC AUC needs both positive and negative labels")
    # midranks handle ties exactly
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    ranks = np.empty(s.size)
    bounds = np.flatnonzero(np.r_[True, s[1:] != s[:-1], True])
    for a, b in zip(bounds[:-1], bounds[1:]):
        ranks[a:b] = 0.5 * (a + 1 + b)
    pos_rank_sum = ranks[labels[order]].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


@dataclass(frozen=True)
class EvalReport:
    per_class_ap: tuple
    per_class_auc: tuple
    class_names: tuple = ()

    @property
    def map(self):
        return float(np.mean(self.per_class_ap))

    @property
    def mauc(self):
        return float(np.mean(self.per_class_auc))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "class", "value"])
        names = self.class_names or tuple(str(i) for i in range(len(self.per_class_ap)))
        for name, ap in zip(names, self.per_class_ap):
            w.writerow(["AP", name, repr(float(ap))])
        for name, auc in zip(names, self.per_class_auc):
            w.writerow(["AUC", name, repr(float(auc))])
        w.writerow(["MAP", "all", repr(self.map)])
        w.writerow(["MAUC", "all", repr(self.mauc)])
        return buf.getvalue()


def evaluate(scores, labels, class_names=(), skip_degenerate=False):
    """Macro AP / AUC over the columns of aligned score and label matrices.

    A class without both positives and negatives is an error, unless
    ``skip_degenerate`` is set, in which case it is dropped with a warning.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 2:
        raise InvalidInput(f"score matrix {scores.shape} not aligned with labels {labels.shape}")
    if not np.all(np.isfinite(scores)):
        raise InvalidInput("score matrix contains non-finite values")
    names = tuple(class_names) or tuple(str(i) for i in range(scores.shape[1]))
    pos = labels.sum(axis=0)
    degenerate = [names[c] for c in range(labels.shape[1]) if pos[c] == 0 or pos[c] == labels.shape[0]]
    if degenerate:
        msg = f"classes without both positives and negatives: {', '.join(degenerate)}"
        if not skip_degenerate or len(degenerate) == len(names):
            raise UndefinedMetric(msg)
        log.warning("%s; excluded from the averages", msg)
    keep = [c for c in range(scores.shape[1]) if names[c] not in degenerate]
    aps = tuple(average_precision(scores[:, c], labels[:, c]) for c in keep)
    aucs = tuple(roc_auc(scores[:, c], labels[:, c]) for c in keep)
    return EvalReport(aps, aucs, tuple(names[c] for c in keep) if class_names else ())


@dataclass(frozen=True)
class Aggregate:
    mean: float
    std: float
    n: int

    def __str__(self):
        return f"{self.mean:.3f} ± {self.std:.3f}"


def aggregate(values):
    """Mean and sample (n-1) standard deviation."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise InvalidInput(f"aggregation needs at least 2 runs, got {v.size}")
    return Aggregate(float(v.mean()), float(v.std(ddof=1)), int(v.size))


def aggregate_runs(reports):
    if len(reports) < 2:
        raise InvalidInput(f"aggregation needs at least 2 reports, got {len(reports)}")
    return {
        "MAP": aggregate([r.map for r in reports]),
        "MAUC": aggregate([r.mauc for r in reports]),
    }


def t_critical(df, confidence=0.99):
    """Two-sided critical t value; the df=4, 99% case is pinned to 4.604."""
    if df == 4 and confidence == 0.99:
        return T_CRIT_99_DF4
    from scipy.stats import t

    return float(t.ppf(0.5 + confidence / 2, df))


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: int
    threshold: float
    degenerate: bool = False

    @property
    def significant(self):
        return abs(self.t) > self.threshold


def paired_t_test(a, b, confidence=0.99):
    """Paired-sample t statistic on d = a - b (runs paired by seed).

    Zero spread in d with a non-zero mean gives t = +-inf, flagged
    ``degenerate``; identical samples give t = 0.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise InvalidInput("paired t-test needs two equal-length samples of size >= 2")
    d = a - b
    n = d.size
    mean = d.mean()
    sd = d.std(ddof=1)
    threshold = t_critical(n - 1, confidence)
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, n - 1, threshold)
        return TTestResult(float(np.copysign(np.inf, mean)), n - 1, threshold, degenerate=True)
    return TTestResult(float(mean / (sd / np.sqrt(n))), n - 1, threshold)
