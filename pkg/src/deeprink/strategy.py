"""End-to-end learners: the single k-output network and the binary-relevance ensemble.

The single strategy trains one k-output network with class-weighted BCE,
then softens its per-class thresholds from validation confidences. The
ensemble strategy trains k independent single-output networks, each on an
oversampled (balanced) copy of the training set, and keeps every threshold
at 0.5; its multi-label prediction is just the concatenation of the member
predictions.

A TrainedSystem persists as a directory: architecture text, raw
little-endian float64 parameter blobs (one per model, weights then bias per
parametric layer, in layer order), calibration text and a small system.txt
with key=value metadata.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, TrainingError
from .imbalance import (
    CalibrationState,
    class_weights,
    label_stats,
    load_calibration,
    max_confidences,
    oversample_binary,
    save_calibration,
    soften_thresholds,
)
from .metrics import MetricsReport, evaluate_predictions
from .nn import (
    Hyperparameters,
    Model,
    arch_from_text,
    arch_to_text,
    backward,
    build_model,
    forward,
    init_velocity,
    sgd_step,
    weighted_bce,
)
from .pipeline import labels_of, volumes_of

logger = logging.getLogger(__name__)


@dataclass
class TrainedSystem:
    kind: str  # "single" | "ensemble"
    models: list  # [Model] for single; k entries (Model or None) for ensemble
    calibration: CalibrationState
    class_names: list[str]
    seed: int
    manifest: str = ""  # optional reference to the data this was trained on


@dataclass
class TrainLog:
    epoch_losses: list = field(default_factory=list)
    member_losses: dict = field(default_factory=dict)  # ensemble: class index -> losses
    skipped_members: list = field(default_factory=list)


def _train_model(model: Model, volumes, labels, hyper: Hyperparameters,
                 weights, seed: int) -> list[float]:
    """SGD with momentum over shuffled mini-batches; returns per-epoch mean loss."""
    n = volumes.shape[0]
    velocity = init_velocity(model)
    rng = np.random.default_rng([seed, 1])
    losses = []
    for _ in range(hyper.epochs):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, hyper.batch_size):
            idx = order[lo : lo + hyper.batch_size]
            conf, cache = forward(model, volumes[idx])
            loss, grad_conf = weighted_bce(conf, labels[idx], weights)
            grads = backward(model, cache, grad_conf)
            sgd_step(model, grads, hyper, velocity)
            total += loss * len(idx)
        losses.append(total / n)
    return losses


def train_single(train, val, arch, hyper: Hyperparameters, seed: int, *,
                 apply_class_weights: bool = True,
                 apply_threshold_softening: bool = True,
                 class_names=None):
    """Two-stage single k-output training; returns (TrainedSystem, TrainLog).

    Stage one trains with class-weighted BCE and all thresholds at 0.5; stage
    two computes each class's maximum validation confidence and softens its
    threshold to alpha * c_i / w_i. No retraining happens after calibration.

    The ablation switches exist to measure what the imbalance machinery buys:
    with both off this is a plain BCE network with fixed 0.5 thresholds.
    """
    if not train or not val:
        raise ValueError("train and validation sets must be non-empty")
    k = arch.output_count()
    if len(train[0].label) != k:
        raise ValueError(f"labels have {len(train[0].label)} classes, network has {k}")
    if class_names is None:
        class_names = [f"class{j}" for j in range(k)]

    stats = label_stats(labels_of(train))
    weights = class_weights(stats, mu=hyper.mu) if apply_class_weights else np.ones(k)

    model = build_model(arch, seed)
    volumes = volumes_of(train)
    labels = labels_of(train).astype(np.float64)
    losses = _train_model(model, volumes, labels, hyper, weights, seed)
    if losses[-1] >= losses[0]:
        raise TrainingError(
            f"training did not reduce the loss ({losses[0]:.6f} -> {losses[-1]:.6f}); "
            "lower the learning rate or train longer"
        )

    cmax = max_confidences(model, volumes_of(val))
    if apply_threshold_softening:
        thresholds = soften_thresholds(weights, cmax, alpha=hyper.alpha)
    else:
        thresholds = np.full(k, hyper.alpha)
    calibration = CalibrationState(
        weights=weights, max_confidences=cmax, thresholds=thresholds,
        alpha=hyper.alpha, mu=hyper.mu,
    )
    system = TrainedSystem(
        kind="single", models=[model], calibration=calibration,
        class_names=list(class_names), seed=seed,
    )
    return system, TrainLog(epoch_losses=losses)


def train_ensemble(train, val, arch, hyper: Hyperparameters, seed: int, *,
                   class_names=None):
    """Binary relevance: one oversampled single-output network per class.

    Member i trains with seed + i on the training set rebalanced for class i.
    A class with no positive training instance gets no model; that member
    always predicts negative and is listed in the log's skipped_members.
    """
    if not train or not val:
        raise ValueError("train and validation sets must be non-empty")
    if arch.output_count() != 1:
        raise ValueError("ensemble members need a single-output architecture")
    k = len(train[0].label)
    if class_names is None:
        class_names = [f"class{j}" for j in range(k)]

    models = []
    log = TrainLog()
    for j in range(k):
        member_seed = seed + j
        positives = int(sum(s.label[j] for s in train))
        if positives == 0 or positives == len(train):
            logger.warning(
                "class %d has %s positives; member skipped, predicts constant",
                j, "no" if positives == 0 else "only",
            )
            models.append(None)
            log.skipped_members.append(j)
            continue
        balanced = oversample_binary(train, j, seed=member_seed)
        volumes = volumes_of(balanced)
        labels = labels_of(balanced)[:, j : j + 1].astype(np.float64)
        model = build_model(arch, member_seed)
        log.member_losses[j] = _train_model(
            model, volumes, labels, hyper, np.ones(1), member_seed
        )
        models.append(model)

    calibration = CalibrationState(
        weights=np.ones(k), max_confidences=np.ones(k),
        thresholds=np.full(k, 0.5), alpha=hyper.alpha, mu=hyper.mu,
    )
    system = TrainedSystem(
        kind="ensemble", models=models, calibration=calibration,
        class_names=list(class_names), seed=seed,
    )
    return system, log


def predict_batch(system: TrainedSystem, volumes):
    """Bits and confidences for a (N,C,D,H,W) batch of normalized windows."""
    volumes = np.asarray(volumes, dtype=np.float64)
    if system.kind == "single":
        conf, _ = forward(system.models[0], volumes)
    else:
        cols = []
        for model in system.models:
            if model is None:
                cols.append(np.zeros((volumes.shape[0], 1)))
            else:
                c, _ = forward(model, volumes)
                cols.append(c)
        conf = np.concatenate(cols, axis=1)
    bits = (conf > system.calibration.thresholds).astype(np.uint8)
    return bits, conf


def predict(system: TrainedSystem, volume):
    """One window -> (k bits, k confidences); strict > against the thresholds."""
    volume = np.asarray(volume, dtype=np.float64)
    bits, conf = predict_batch(system, volume[np.newaxis])
    return bits[0], conf[0]


def evaluate(system: TrainedSystem, samples, batch_size: int = 64) -> MetricsReport:
    """Predict every window and tally per-class confusion counts."""
    if not samples:
        raise ValueError("cannot evaluate on an empty set")
    volumes = volumes_of(samples)
    all_bits = []
    for lo in range(0, len(samples), batch_size):
        bits, _ = predict_batch(system, volumes[lo : lo + batch_size])
        all_bits.append(bits)
    return evaluate_predictions(np.concatenate(all_bits), labels_of(samples))


def _params_blob(model: Model) -> bytes:
    parts = []
    for w, b in model.params:
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(parts)


def _params_from_blob(blob: bytes, template: Model) -> None:
    offset = 0
    for i, (w, b) in enumerate(template.params):
        for which, ref in enumerate((w, b)):
            n = ref.size * 8
            chunk = blob[offset : offset + n]
            if len(chunk) < n:
                raise FormatError("parameter blob shorter than the architecture needs")
            arr = np.frombuffer(chunk, dtype="<f8").reshape(ref.shape).copy()
            pair = list(template.params[i])
            pair[which] = arr
            template.params[i] = tuple(pair)
            offset += n
    if offset != len(blob):
        raise FormatError(
            f"parameter blob has {len(blob) - offset} trailing bytes"
        )


def save_system(system: TrainedSystem, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arch = system.models[0].arch if system.kind == "single" else next(
        m for m in system.models if m is not None
    ).arch
    (directory / "arch.txt").write_text(arch_to_text(arch), encoding="utf-8")

    lines = [
        f"kind={system.kind}",
        f"k={len(system.class_names)}",
        "class_names=" + ",".join(system.class_names),
        f"seed={system.seed}",
        f"manifest={system.manifest}",
    ]
    if system.kind == "single":
        (directory / "params.bin").write_bytes(_params_blob(system.models[0]))
    else:
        skipped = [j for j, m in enumerate(system.models) if m is None]
        lines.append("skipped=" + ",".join(str(j) for j in skipped))
        member_seeds = []
        for j, model in enumerate(system.models):
            if model is None:
                member_seeds.append("")
                continue
            member_seeds.append(str(model.seed))
            (directory / f"params_{j:03d}.bin").write_bytes(_params_blob(model))
        lines.append("member_seeds=" + ",".join(member_seeds))
    (directory / "system.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    save_calibration(directory / "calibration.txt", system.calibration, system.class_names)


def load_system(directory) -> TrainedSystem:
    directory = Path(directory)
    meta = {}
    for lineno, raw in enumerate(
        (directory / "system.txt").read_text(encoding="utf-8").splitlines(), 1
    ):
        line = raw.strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"system.txt:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        meta[key] = value
    kind = meta.get("kind")
    if kind not in ("single", "ensemble"):
        raise FormatError(f"system.txt: unknown kind {kind!r}")
    k = int(meta["k"])
    class_names = meta["class_names"].split(",") if meta.get("class_names") else []
    if len(class_names) != k:
        raise FormatError(f"system.txt: {len(class_names)} class names for k={k}")
    seed = int(meta.get("seed", "0"))
    arch = arch_from_text((directory / "arch.txt").read_text(encoding="utf-8"))
    calibration, cal_names = load_calibration(directory / "calibration.txt")
    if cal_names != class_names:
        raise FormatError("calibration class names disagree with system.txt")

    if kind == "single":
        model = build_model(arch, seed)
        _params_from_blob((directory / "params.bin").read_bytes(), model)
        models = [model]
    else:
        skipped = {int(s) for s in meta.get("skipped", "").split(",") if s != ""}
        member_seeds = meta.get("member_seeds", "").split(",")
        models = []
        for j in range(k):
            if j in skipped:
                models.append(None)
                continue
            member_seed = int(member_seeds[j]) if j < len(member_seeds) and member_seeds[j] else seed + j
            model = build_model(arch, member_seed)
            _params_from_blob((directory / f"params_{j:03d}.bin").read_bytes(), model)
            models.append(model)

    return TrainedSystem(
        kind=kind, models=models, calibration=calibration,
        class_names=class_names, seed=seed, manifest=meta.get("manifest", ""),
    )


def recalibrate(system: TrainedSystem, val_samples, alpha: float | None = None) -> TrainedSystem:
    """Re-run threshold softening on a trained single system (idempotent).

    Keeps the stored class weights, recomputes max validation confidences and
    the thresholds they imply. The ensemble keeps fixed 0.5 thresholds, so
    recalibrating one is rejected.
    """
    if system.kind != "single":
        raise ValueError("only the single strategy uses calibrated thresholds")
    if not val_samples:
        raise ValueError("validation set must be non-empty")
    if alpha is None:
        alpha = system.calibration.alpha
    cmax = max_confidences(system.models[0], volumes_of(val_samples))
    system.calibration = CalibrationState(
        weights=system.calibration.weights,
        max_confidences=cmax,
        thresholds=soften_thresholds(system.calibration.weights, cmax, alpha=alpha),
        alpha=alpha,
        mu=system.calibration.mu,
    )
    return system
