"""Preprocessing: downscale, normalize, window, majority-label, split.

One video becomes overlapping 15-frame windows (stride = size - overlap),
each labeled by taking the per-class majority over its 15 frame labels.
Normalization statistics come from the training split only; the same
normalizer is then applied to validation and test.

Window sets cache to disk as a WVD file (float64 volumes, header like the
HVD video format) plus `.labels` and `.sources` text sidecars.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataio import FrameSequence, read_labels, write_labels
from .errors import FormatError, ShapeError

WVD_MAGIC = b"WVD1"
WVD_HEADER = struct.Struct("<4sIIII")  # magic, count, depth, height, width

STD_FLOOR = 1e-8


@dataclass
class WindowSample:
    volume: np.ndarray  # (1, size, H, W) float64
    label: np.ndarray  # (k,) uint8
    source: tuple[int, int]  # (video index, start frame)


@dataclass
class Normalizer:
    mean: float
    std: float

    def __post_init__(self):
        if self.std <= 0:
            raise ValueError("std must be positive")


def downscale(frame, factor: int):
    """Box-average factor x factor blocks; trailing rows/cols are cropped."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2:
        raise ValueError(f"expected a 2-D frame, got shape {frame.shape}")
    h, w = frame.shape
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if factor > h or factor > w:
        raise ValueError(f"factor {factor} exceeds frame size {h}x{w}")
    h2, w2 = h // factor, w // factor
    cropped = frame[: h2 * factor, : w2 * factor]
    return cropped.reshape(h2, factor, w2, factor).mean(axis=(1, 3))


def downscale_stack(frames, factor: int):
    """downscale() applied to every frame of a (T, H, W) stack at once."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3:
        raise ValueError(f"expected (T, H, W), got shape {frames.shape}")
    t, h, w = frames.shape
    if factor > h or factor > w:
        raise ValueError(f"factor {factor} exceeds frame size {h}x{w}")
    h2, w2 = h // factor, w // factor
    cropped = frames[:, : h2 * factor, : w2 * factor]
    return cropped.reshape(t, h2, factor, w2, factor).mean(axis=(2, 4))


def fit_normalizer(volumes) -> Normalizer:
    """Global scalar mean/std over the training volumes (population std)."""
    if len(volumes) == 0:
        raise ValueError("cannot fit a normalizer on an empty set")
    stacked = np.concatenate([np.asarray(v, dtype=np.float64).ravel() for v in volumes])
    mean = float(stacked.mean())
    std = float(stacked.std())
    return Normalizer(mean=mean, std=max(std, STD_FLOOR))


def normalize(x, normalizer: Normalizer):
    return (np.asarray(x, dtype=np.float64) - normalizer.mean) / normalizer.std


def denormalize(x, normalizer: Normalizer):
    return np.asarray(x, dtype=np.float64) * normalizer.std + normalizer.mean


def window_starts(frame_count: int, size: int = 15, overlap: int = 5) -> list[int]:
    """Start offsets of every full window: 0, stride, 2*stride, ..."""
    if not 0 <= overlap < size:
        raise ValueError(f"need size > overlap >= 0, got size={size} overlap={overlap}")
    stride = size - overlap
    return list(range(0, frame_count - size + 1, stride)) if frame_count >= size else []


def windowize(video: FrameSequence, size: int = 15, overlap: int = 5):
    """Cut a labeled video into (frames, label rows, start) windows.

    Videos shorter than one window yield an empty list.
    """
    if video.labels is None:
        raise ValueError("windowize needs a labeled video")
    out = []
    for start in window_starts(len(video.frames), size, overlap):
        out.append(
            (video.frames[start : start + size], video.labels[start : start + size], start)
        )
    return out


def majority_label(window_labels) -> np.ndarray:
    """Per-class majority over the window's label rows (row count must be odd)."""
    rows = np.asarray(window_labels)
    if rows.ndim != 2:
        raise ValueError(f"expected (rows, k), got shape {rows.shape}")
    n = rows.shape[0]
    if n % 2 == 0:
        raise ValueError(f"window of {n} rows can tie; use an odd window size")
    return (rows.sum(axis=0) >= (n // 2 + 1)).astype(np.uint8)


def split_samples(samples, ratio: float = 0.7, seed: int = 0, granularity: str = "window"):
    """Deterministic (train, val, test) partition.

    First split is ratio:(1-ratio) into (train+val):test, then the same ratio
    splits the remainder into train:val. Sizes round to nearest. Video
    granularity keeps all windows of one video in the same part, which stops
    overlapping windows from leaking across the split.
    """
    if not 0 < ratio < 1:
        raise ValueError("ratio must be in (0, 1)")
    if len(samples) < 3:
        raise ValueError(f"need at least 3 samples to split, got {len(samples)}")
    rng = np.random.default_rng(seed)

    if granularity == "window":
        order = rng.permutation(len(samples))
        n_test = round((1 - ratio) * len(samples))
        n_val = round((1 - ratio) * (len(samples) - n_test))
        test_idx = order[:n_test]
        val_idx = order[n_test : n_test + n_val]
        train_idx = order[n_test + n_val :]
        pick = lambda idx: [samples[i] for i in sorted(idx)]
        return pick(train_idx), pick(val_idx), pick(test_idx)

    if granularity == "video":
        videos = sorted({s.source[0] for s in samples})
        if len(videos) < 3:
            raise ValueError(f"need at least 3 videos to split, got {len(videos)}")
        order = rng.permutation(len(videos))
        n_test = round((1 - ratio) * len(videos))
        n_val = round((1 - ratio) * (len(videos) - n_test))
        test_v = {videos[i] for i in order[:n_test]}
        val_v = {videos[i] for i in order[n_test : n_test + n_val]}
        train = [s for s in samples if s.source[0] not in test_v and s.source[0] not in val_v]
        val = [s for s in samples if s.source[0] in val_v]
        test = [s for s in samples if s.source[0] in test_v]
        return train, val, test

    raise ValueError(f"unknown granularity {granularity!r}")


@dataclass
class PreprocessResult:
    train: list[WindowSample]
    val: list[WindowSample]
    test: list[WindowSample]
    normalizer: Normalizer


def preprocess_sequences(
    sequences,
    *,
    resize_factor: int = 4,
    window_size: int = 15,
    window_overlap: int = 5,
    split_ratio: float = 0.7,
    seed: int = 0,
    granularity: str = "window",
) -> PreprocessResult:
    """Full preprocessing pass over labeled videos.

    Downscales, windows and majority-labels every video, splits
    deterministically, fits the normalizer on the training part only, then
    normalizes all three parts with it.
    """
    raw = []
    for vid, seq in enumerate(sequences):
        small = downscale_stack(seq.frames, resize_factor)
        for start in window_starts(len(seq.frames), window_size, window_overlap):
            frames = small[start : start + window_size]
            label = majority_label(seq.labels[start : start + window_size])
            raw.append(
                WindowSample(
                    volume=frames[np.newaxis], label=label, source=(vid, start)
                )
            )
    if len(raw) < 3:
        raise ValueError(f"only {len(raw)} windows; not enough to split")
    train, val, test = split_samples(raw, ratio=split_ratio, seed=seed, granularity=granularity)
    normalizer = fit_normalizer([s.volume for s in train])
    for part in (train, val, test):
        for s in part:
            s.volume = normalize(s.volume, normalizer)
    return PreprocessResult(train=train, val=val, test=test, normalizer=normalizer)


def volumes_of(samples) -> np.ndarray:
    """Stack sample volumes into one (N, 1, D, H, W) batch."""
    return np.stack([s.volume for s in samples])


def labels_of(samples) -> np.ndarray:
    """Stack sample labels into one (N, k) matrix."""
    return np.stack([s.label for s in samples])


def save_window_set(directory, name: str, samples) -> None:
    """Write <name>.wvd volumes plus .labels and .sources sidecars."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if not samples:
        raise ValueError("refusing to save an empty window set")
    shape = samples[0].volume.shape
    if any(s.volume.shape != shape for s in samples):
        raise ShapeError("window volumes disagree in shape")
    _, depth, height, width = shape
    with open(directory / f"{name}.wvd", "wb") as f:
        f.write(WVD_HEADER.pack(WVD_MAGIC, len(samples), depth, height, width))
        for s in samples:
            f.write(np.ascontiguousarray(s.volume, dtype="<f8").tobytes())
    write_labels(directory / f"{name}.labels", labels_of(samples))
    with open(directory / f"{name}.sources", "w", encoding="utf-8", newline="\n") as f:
        for s in samples:
            f.write(f"{s.source[0]},{s.source[1]}\n")


def load_window_set(directory, name: str, k: int) -> list[WindowSample]:
    directory = Path(directory)
    path = directory / f"{name}.wvd"
    with open(path, "rb") as f:
        header = f.read(WVD_HEADER.size)
        if len(header) < WVD_HEADER.size:
            raise FormatError(f"{path}: truncated header")
        magic, count, depth, height, width = WVD_HEADER.unpack(header)
        if magic != WVD_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r} at byte 0")
        expected = count * depth * height * width * 8
        data = f.read(expected + 1)
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} data bytes, found {len(data)}")
    volumes = np.frombuffer(data, dtype="<f8").reshape(count, 1, depth, height, width)
    labels = read_labels(directory / f"{name}.labels", k)
    if len(labels) != count:
        raise FormatError(f"{name}.labels has {len(labels)} rows for {count} volumes")
    sources = []
    for lineno, line in enumerate(
        (directory / f"{name}.sources").read_text(encoding="utf-8").splitlines(), 1
    ):
        parts = line.split(",")
        if len(parts) != 2:
            raise FormatError(f"{name}.sources:{lineno}: expected video,start")
        sources.append((int(parts[0]), int(parts[1])))
    if len(sources) != count:
        raise FormatError(f"{name}.sources has {len(sources)} rows for {count} volumes")
    return [
        WindowSample(volume=volumes[i].copy(), label=labels[i], source=sources[i])
        for i in range(count)
    ]
