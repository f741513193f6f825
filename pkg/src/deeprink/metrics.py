"""Per-class confusion tallies, precision/recall/F1, and report rendering.

F1 is the harmonic mean 2PR/(P+R). Any 0/0 denominator (a class with no
predicted positives, no actual positives, or P+R = 0) yields 0 by
convention, so a never-firing classifier scores 0 rather than crashing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FormatError


@dataclass
class MetricsReport:
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    macro_f1: float


def confusion_counts(predicted, truth):
    """Per-class (tp, fp, fn, tn) over N x k binary matrices."""
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape or predicted.ndim != 2:
        raise ValueError(
            f"predicted {predicted.shape} and truth {truth.shape} must be equal N x k"
        )
    pred = predicted.astype(bool)
    true = truth.astype(bool)
    tp = np.count_nonzero(pred & true, axis=0)
    fp = np.count_nonzero(pred & ~true, axis=0)
    fn = np.count_nonzero(~pred & true, axis=0)
    tn = np.count_nonzero(~pred & ~true, axis=0)
    return tp, fp, fn, tn


def prf1(tp, fp, fn):
    """Precision, recall, F1 for one class; 0/0 counts as 0."""
    if tp < 0 or fp < 0 or fn < 0:
        raise ValueError("counts must be non-negative")
    p = tp / (tp + fp) if tp + fp > 0 else 0.0
    r = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f1


def macro_f1(per_class_f1) -> float:
    """Unweighted mean of per-class F1 scores."""
    scores = np.asarray(per_class_f1, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("macro_f1 needs at least one class")
    return float(scores.mean())


def report_from_counts(tp, fp, fn, tn) -> MetricsReport:
    tp, fp, fn, tn = (np.asarray(a, dtype=np.int64) for a in (tp, fp, fn, tn))
    trip = [prf1(int(t), int(f_), int(n)) for t, f_, n in zip(tp, fp, fn)]
    precision = np.array([t[0] for t in trip])
    recall = np.array([t[1] for t in trip])
    f1 = np.array([t[2] for t in trip])
    return MetricsReport(
        tp=tp, fp=fp, fn=fn, tn=tn,
        precision=precision, recall=recall, f1=f1,
        macro_f1=macro_f1(f1),
    )


def evaluate_predictions(predicted, truth) -> MetricsReport:
    """Confusion counts plus derived scores in one call."""
    tp, fp, fn, tn = confusion_counts(predicted, truth)
    return report_from_counts(tp, fp, fn, tn)


def render_report(report: MetricsReport, class_names) -> str:
    """One line per class plus a macro_f1 footer, 6 decimal places."""
    if len(class_names) != len(report.tp):
        raise ValueError(
            f"{len(class_names)} names for {len(report.tp)} classes"
        )
    lines = []
    for i, name in enumerate(class_names):
        lines.append(
            f"{name} tp={report.tp[i]} fp={report.fp[i]} fn={report.fn[i]} "
            f"precision={report.precision[i]:.6f} recall={report.recall[i]:.6f} "
            f"f1={report.f1[i]:.6f}"
        )
    lines.append(f"macro_f1={report.macro_f1:.6f}")
    return "\n".join(lines) + "\n"


def parse_report(text: str):
    """Inverse of render_report; returns (report, class_names).

    tn is not rendered, so it comes back as zeros.
    """
    names, tp, fp, fn, prec, rec, f1 = [], [], [], [], [], [], []
    macro = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("macro_f1="):
            macro = float(line.split("=", 1)[1])
            continue
        tokens = line.split()
        fields = dict(t.split("=", 1) for t in tokens if "=" in t)
        name = " ".join(t for t in tokens if "=" not in t)
        try:
            names.append(name)
            tp.append(int(fields["tp"]))
            fp.append(int(fields["fp"]))
            fn.append(int(fields["fn"]))
            prec.append(float(fields["precision"]))
            rec.append(float(fields["recall"]))
            f1.append(float(fields["f1"]))
        except (KeyError, ValueError) as e:
            raise FormatError(f"report line {lineno}: {e}") from None
    if macro is None:
        raise FormatError("report missing macro_f1 footer")
    report = MetricsReport(
        tp=np.array(tp), fp=np.array(fp), fn=np.array(fn),
        tn=np.zeros(len(tp), dtype=np.int64),
        precision=np.array(prec), recall=np.array(rec), f1=np.array(f1),
        macro_f1=macro,
    )
    return report, names


def report_to_csv(report: MetricsReport, class_names) -> str:
    """Same fields as render_report, comma-separated with a header row."""
    if len(class_names) != len(report.tp):
        raise ValueError(f"{len(class_names)} names for {len(report.tp)} classes")
    lines = ["class,tp,fp,fn,precision,recall,f1"]
    for i, name in enumerate(class_names):
        lines.append(
            f"{name},{report.tp[i]},{report.fp[i]},{report.fn[i]},"
            f"{report.precision[i]:.6f},{report.recall[i]:.6f},{report.f1[i]:.6f}"
        )
    lines.append(f"macro_f1,,,,,,{report.macro_f1:.6f}")
    return "\n".join(lines) + "\n"
