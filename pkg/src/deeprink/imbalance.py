"""Class-imbalance machinery: log class weights, threshold softening, oversampling.

Two distinct remedies live here, matched to the two training strategies:

* The single k-output network trains with class weights
  w_i = max(1, ln(mu * m / m_i)) and, after an initial training pass, lowers
  each decision threshold to th_i = alpha * c_i / w_i, where c_i is the
  class's maximum confidence over *all* validation windows. Heavier (rarer)
  classes get softer thresholds, which buys back the recall the base rate
  costs them.

* The per-class binary networks of the ensemble instead balance their
  training sets by duplicating minority instances until the positive and
  negative counts match.

Everywhere in this package the decision rule is strict: predict positive iff
confidence > threshold. A class whose best validation confidence is 0 gets
threshold 0 and therefore predicts all-negative, not all-positive.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .nn import forward

logger = logging.getLogger(__name__)


@dataclass
class LabelStats:
    m: int  # training instances
    m_i: np.ndarray  # per-class positive counts


@dataclass
class CalibrationState:
    weights: np.ndarray
    max_confidences: np.ndarray
    thresholds: np.ndarray
    alpha: float = 0.5
    mu: float = 0.7


def label_stats(labels) -> LabelStats:
    labels = np.asarray(labels)
    if labels.ndim != 2 or labels.shape[0] < 1:
        raise ValueError(f"expected non-empty N x k labels, got shape {labels.shape}")
    return LabelStats(m=labels.shape[0], m_i=labels.sum(axis=0).astype(np.int64))


def class_weights(stats: LabelStats, mu: float = 0.7) -> np.ndarray:
    """w_i = ln(mu * m / m_i), clamped below at 1.

    A class absent from training (m_i = 0) is weighted as if it had one
    instance, the largest finite weight the formula can give; this is logged
    since such a class can never be learned from this split.
    """
    if not 0 < mu <= 1:
        raise ValueError(f"mu must be in (0, 1], got {mu}")
    if stats.m < 1:
        raise ValueError("m must be >= 1")
    weights = np.empty(len(stats.m_i))
    for i, count in enumerate(stats.m_i):
        if count == 0:
            logger.warning("class %d has no positive training instances", i)
            count = 1
        weights[i] = max(1.0, math.log(mu * stats.m / count))
    return weights


def max_confidences(model, volumes, batch_size: int = 64) -> np.ndarray:
    """Per-class maximum confidence over every validation window."""
    volumes = np.asarray(volumes, dtype=np.float64)
    if volumes.ndim != 5 or volumes.shape[0] == 0:
        raise ValueError(f"expected a non-empty (N,C,D,H,W) batch, got {volumes.shape}")
    best = None
    for lo in range(0, volumes.shape[0], batch_size):
        conf, _ = forward(model, volumes[lo : lo + batch_size])
        chunk = conf.max(axis=0)
        best = chunk if best is None else np.maximum(best, chunk)
    return best


def soften_thresholds(weights, confidences, alpha: float = 0.5) -> np.ndarray:
    """th_i = alpha * c_i / w_i; never above alpha, softer for heavier classes."""
    weights = np.asarray(weights, dtype=np.float64)
    confidences = np.asarray(confidences, dtype=np.float64)
    if weights.shape != confidences.shape:
        raise ValueError(
            f"weights {weights.shape} and confidences {confidences.shape} disagree"
        )
    if np.any(weights < 1.0):
        raise ValueError("weights must be clamped to >= 1 before softening")
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    return alpha * confidences / weights


def calibrate(stats: LabelStats, model, val_volumes, mu: float = 0.7,
              alpha: float = 0.5) -> CalibrationState:
    """Weights from the training label counts, thresholds from validation."""
    w = class_weights(stats, mu=mu)
    c = max_confidences(model, val_volumes)
    return CalibrationState(
        weights=w, max_confidences=c, thresholds=soften_thresholds(w, c, alpha),
        alpha=alpha, mu=mu,
    )


def oversample_binary(samples, target_class: int, seed: int):
    """Duplicate the minority side for one class until positives == negatives.

    All original samples are kept; duplicates are drawn with replacement by a
    seeded generator and appended, so the result is deterministic.
    """
    pos = [s for s in samples if s.label[target_class] == 1]
    neg = [s for s in samples if s.label[target_class] == 0]
    if not pos or not neg:
        raise ValueError(
            f"class {target_class} needs at least one positive and one negative"
        )
    if len(pos) == len(neg):
        return list(samples)
    minority = pos if len(pos) < len(neg) else neg
    deficit = abs(len(pos) - len(neg))
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(minority), size=deficit)
    return list(samples) + [minority[i] for i in picks]


def format_calibration(state: CalibrationState, class_names) -> str:
    """Line-oriented text form, 9 significant digits."""
    if len(class_names) != len(state.weights):
        raise ValueError(f"{len(class_names)} names for {len(state.weights)} classes")
    lines = [f"alpha={state.alpha:.9g}", f"mu={state.mu:.9g}"]
    for name, w, c, th in zip(
        class_names, state.weights, state.max_confidences, state.thresholds
    ):
        lines.append(f"class {name} weight={w:.9g} cmax={c:.9g} threshold={th:.9g}")
    return "\n".join(lines) + "\n"


def parse_calibration(text: str):
    """Inverse of format_calibration; returns (state, class_names)."""
    alpha = mu = None
    names, weights, cmaxes, thresholds = [], [], [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("alpha="):
            alpha = float(line.split("=", 1)[1])
        elif line.startswith("mu="):
            mu = float(line.split("=", 1)[1])
        elif line.startswith("class "):
            tokens = line.split()
            fields = dict(t.split("=", 1) for t in tokens if "=" in t)
            name = " ".join(t for t in tokens[1:] if "=" not in t)
            try:
                names.append(name)
                weights.append(float(fields["weight"]))
                cmaxes.append(float(fields["cmax"]))
                thresholds.append(float(fields["threshold"]))
            except (KeyError, ValueError) as e:
                raise FormatError(f"calibration line {lineno}: {e}") from None
        else:
            raise FormatError(f"calibration line {lineno}: unrecognized line {line!r}")
    if alpha is None or mu is None or not names:
        raise FormatError("calibration text missing alpha=, mu= or class lines")
    state = CalibrationState(
        weights=np.array(weights),
        max_confidences=np.array(cmaxes),
        thresholds=np.array(thresholds),
        alpha=alpha,
        mu=mu,
    )
    return state, names


def save_calibration(path, state: CalibrationState, class_names) -> None:
    Path(path).write_text(format_calibration(state, class_names), encoding="utf-8")


def load_calibration(path):
    return parse_calibration(Path(path).read_text(encoding="utf-8"))
