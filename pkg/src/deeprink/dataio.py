"""On-disk formats and the seeded synthetic dataset generator.

HVD video format (bit-exact):
    bytes 0..3    magic "HVD1"
    bytes 4..15   width, height, frame_count as little-endian uint32
    bytes 16..    frame_count * height * width bytes of 8-bit grayscale,
                  frame-major, row-major within each frame

Label files are UTF-8 text with LF endings, one line per frame, each line
exactly k characters of '0'/'1' (bit j set means class j is active in that
frame). Manifests are line-oriented key=value text; `entry=` lines repeat,
one per video, as `entry=<video path>,<label path>,<split>` with paths
relative to the manifest's directory.

The synthetic generator renders each class as a small bright blob moving in
its own fixed direction over a noisy background, so class identity is only
recoverable from motion across frames, not from any single frame.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError

HVD_MAGIC = b"HVD1"
HVD_HEADER = struct.Struct("<4sIII")

MIN_RUN = 5  # shortest positive run; keeps majority labeling able to recover runs


@dataclass
class FrameSequence:
    """One grayscale video with optional per-frame k-bit labels."""

    frames: np.ndarray  # (T, H, W) uint8
    labels: np.ndarray | None = None  # (T, k) uint8

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.uint8)
        if self.frames.ndim != 3:
            raise ValueError(f"frames must be (T, H, W), got {self.frames.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.uint8)
            if self.labels.ndim != 2 or len(self.labels) != len(self.frames):
                raise ValueError(
                    f"labels {self.labels.shape} do not match {len(self.frames)} frames"
                )
            if not np.isin(self.labels, (0, 1)).all():
                raise ValueError("labels must be 0/1")

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]


def write_video(path, seq: FrameSequence) -> None:
    frames = seq.frames
    header = HVD_HEADER.pack(HVD_MAGIC, seq.width, seq.height, len(frames))
    with open(path, "wb") as f:
        f.write(header)
        f.write(frames.tobytes())


def read_video(path) -> FrameSequence:
    """Read an HVD file; labels are not part of this format."""
    with open(path, "rb") as f:
        header = f.read(HVD_HEADER.size)
        if len(header) < HVD_HEADER.size:
            raise FormatError(f"{path}: truncated header ({len(header)} of 16 bytes)")
        magic, width, height, count = HVD_HEADER.unpack(header)
        if magic != HVD_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r} at byte 0")
        if width == 0 or height == 0:
            raise FormatError(f"{path}: zero dimension in header")
        expected = width * height * count
        data = f.read(expected + 1)
    if len(data) < expected:
        raise FormatError(
            f"{path}: truncated at byte {HVD_HEADER.size + len(data)}, "
            f"expected {HVD_HEADER.size + expected} bytes total"
        )
    if len(data) > expected:
        raise FormatError(f"{path}: {len(data) - expected}+ trailing bytes after frame data")
    frames = np.frombuffer(data, dtype=np.uint8).reshape(count, height, width)
    return FrameSequence(frames=frames.copy())


def write_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for row in labels:
            f.write("".join("1" if b else "0" for b in row))
            f.write("\n")


def read_labels(path, k: int) -> np.ndarray:
    """Parse a label file into a (T, k) uint8 matrix."""
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if len(line) != k:
                raise FormatError(
                    f"{path}:{lineno}: expected {k} characters, got {len(line)}"
                )
            if set(line) - {"0", "1"}:
                raise FormatError(f"{path}:{lineno}: illegal character in {line!r}")
            rows.append([1 if c == "1" else 0 for c in line])
    return np.array(rows, dtype=np.uint8).reshape(len(rows), k)


@dataclass
class ManifestEntry:
    video: str
    label: str
    split: str = "unassigned"


@dataclass
class DatasetManifest:
    k: int
    class_names: list[str]
    entries: list[ManifestEntry] = field(default_factory=list)
    resize_factor: int = 4
    norm_mean: float | None = None
    norm_std: float | None = None

    def __post_init__(self):
        if len(self.class_names) != self.k:
            raise ValueError(f"{len(self.class_names)} names for k={self.k}")


def write_manifest(path, manifest: DatasetManifest) -> None:
    lines = [
        f"k={manifest.k}",
        "class_names=" + ",".join(manifest.class_names),
        f"resize_factor={manifest.resize_factor}",
    ]
    if manifest.norm_mean is not None:
        lines.append(f"norm_mean={manifest.norm_mean!r}")
        lines.append(f"norm_std={manifest.norm_std!r}")
    for e in manifest.entries:
        lines.append(f"entry={e.video},{e.label},{e.split}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> DatasetManifest:
    """Parse a manifest and verify every referenced file exists."""
    base = Path(path).parent
    k = None
    names = []
    entries = []
    resize = 4
    mean = std = None
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        if key == "k":
            k = int(value)
        elif key == "class_names":
            names = value.split(",") if value else []
        elif key == "resize_factor":
            resize = int(value)
        elif key == "norm_mean":
            mean = float(value)
        elif key == "norm_std":
            std = float(value)
        elif key == "entry":
            parts = value.split(",")
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: entry needs video,label,split")
            entries.append(ManifestEntry(*parts))
        else:
            raise FormatError(f"{path}:{lineno}: unknown key {key!r}")
    if k is None:
        raise FormatError(f"{path}: missing k=")
    for e in entries:
        for rel in (e.video, e.label):
            if not (base / rel).exists():
                raise FormatError(f"{path}: referenced file {rel} does not exist")
    return DatasetManifest(
        k=k, class_names=names, entries=entries,
        resize_factor=resize, norm_mean=mean, norm_std=std,
    )


def load_sequences(manifest: DatasetManifest, base) -> list[FrameSequence]:
    """Read every manifest entry's video and labels into memory."""
    base = Path(base)
    out = []
    for e in manifest.entries:
        seq = read_video(base / e.video)
        seq.labels = read_labels(base / e.label, manifest.k)
        if len(seq.labels) != len(seq.frames):
            raise FormatError(
                f"{e.label}: {len(seq.labels)} label lines for {len(seq.frames)} frames"
            )
        out.append(seq)
    return out


@dataclass
class SynthConfig:
    k: int
    videos: int
    frames_per_video: int
    width: int = 128
    height: int = 128
    class_prevalence: list[float] | None = None

    def __post_init__(self):
        if self.class_prevalence is None:
            self.class_prevalence = [0.3] * self.k
        if len(self.class_prevalence) != self.k:
            raise ConfigError(
                f"{len(self.class_prevalence)} prevalences for k={self.k}"
            )
        if any(not 0 < p <= 1 for p in self.class_prevalence):
            raise ConfigError("prevalences must lie in (0, 1]")
        if self.width < 8 or self.height < 8:
            raise ConfigError("frames must be at least 8x8")
        if self.k < 1 or self.videos < 1 or self.frames_per_video < 1:
            raise ConfigError("k, videos and frames_per_video must be positive")


def _plan_runs(total_frames: int, prevalence: float, rng) -> list[int]:
    """Split the target positive-frame budget into run lengths of >= MIN_RUN."""
    target = round(prevalence * total_frames)
    if target < MIN_RUN:
        raise ConfigError(
            f"prevalence {prevalence} yields only {target} positive frames; "
            f"runs need at least {MIN_RUN}"
        )
    n_runs = max(1, min(round(target / 10), target // MIN_RUN))
    base, rem = divmod(target, n_runs)
    return [base + 1] * rem + [base] * (n_runs - rem)


def _place_runs(labels: np.ndarray, class_idx: int, lengths, rng) -> None:
    """Drop runs into random free spans; fall back to a scan when crowded."""
    videos, frames = labels.shape[0], labels.shape[1]
    for length in lengths:
        placed = False
        for _ in range(200):
            v = int(rng.integers(videos))
            if length > frames:
                break
            s = int(rng.integers(frames - length + 1))
            if not labels[v, s : s + length, class_idx].any():
                labels[v, s : s + length, class_idx] = 1
                placed = True
                break
        if not placed:
            for v in range(videos):
                col = labels[v, :, class_idx]
                for s in range(frames - length + 1):
                    if not col[s : s + length].any():
                        col[s : s + length] = 1
                        placed = True
                        break
                if placed:
                    break
        if not placed:
            raise ConfigError(
                "could not place a coherent positive run; prevalence too high "
                "for this many frames (use 1.0 for an always-on class)"
            )


def _render_video(labels_v: np.ndarray, config: SynthConfig, rng) -> np.ndarray:
    """Noise background plus one moving blob per active class."""
    t_count, k = labels_v.shape
    h, w = config.height, config.width
    frames = rng.integers(0, 40, size=(t_count, h, w)).astype(np.float64)
    radius = max(2.0, min(h, w) / 10.0)
    speed = max(2.0, min(h, w) / 24.0)
    yy, xx = np.mgrid[0:h, 0:w]
    # per-class starting point; direction is fixed by the class index
    starts = rng.uniform(0, 1, size=(k, 2))
    for j in range(k):
        angle = 2 * np.pi * j / k
        vx, vy = speed * np.cos(angle), speed * np.sin(angle)
        x0, y0 = starts[j, 0] * w, starts[j, 1] * h
        for t in np.nonzero(labels_v[:, j])[0]:
            cx = (x0 + vx * t) % w
            cy = (y0 + vy * t) % h
            # wrap distances so the blob slides across edges instead of jumping
            dx = np.minimum(np.abs(xx - cx), w - np.abs(xx - cx))
            dy = np.minimum(np.abs(yy - cy), h - np.abs(yy - cy))
            blob = 180.0 * np.exp(-(dx * dx + dy * dy) / (2 * radius * radius))
            frames[t] += blob
    return np.clip(frames, 0, 255).astype(np.uint8)


def synth_dataset(config: SynthConfig, seed: int, out_dir) -> DatasetManifest:
    """Generate videos, label files and a manifest under out_dir.

    Same (config, seed) always produces byte-identical files. Per-class
    positive frames form runs of >= MIN_RUN consecutive frames whose total
    lands within 10% of the requested prevalence.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    labels = np.zeros((config.videos, config.frames_per_video, config.k), dtype=np.uint8)
    total = config.videos * config.frames_per_video
    for j, p in enumerate(config.class_prevalence):
        if p >= 1.0:
            labels[:, :, j] = 1
            continue
        lengths = _plan_runs(total, p, rng)
        _place_runs(labels, j, lengths, rng)

    entries = []
    for v in range(config.videos):
        frames = _render_video(labels[v], config, rng)
        video_name = f"v{v:03d}.hvd"
        label_name = f"v{v:03d}.labels"
        write_video(out / video_name, FrameSequence(frames=frames, labels=labels[v]))
        write_labels(out / label_name, labels[v])
        entries.append(ManifestEntry(video=video_name, label=label_name))

    manifest = DatasetManifest(
        k=config.k,
        class_names=[f"class{j}" for j in range(config.k)],
        entries=entries,
    )
    write_manifest(out / "manifest.txt", manifest)
    return manifest
