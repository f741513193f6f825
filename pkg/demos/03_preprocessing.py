"""Follow one video through the preprocessing pipeline.

Downscale by box-averaging, cut into overlapping 15-frame windows (stride
10), label each window by per-class majority over its 15 frame labels, then
split deterministically and normalize with statistics fitted on the
training part only.
"""

import tempfile
from pathlib import Path

import numpy as np

from deeprink.dataio import SynthConfig, load_sequences, synth_dataset
from deeprink.pipeline import (
    downscale,
    majority_label,
    preprocess_sequences,
    window_starts,
)

out = Path(tempfile.mkdtemp(prefix="deeprink_demo_"))
config = SynthConfig(k=3, videos=5, frames_per_video=75, width=64, height=64,
                     class_prevalence=[0.5, 0.3, 0.15])
manifest = synth_dataset(config, seed=21, out_dir=out)
sequences = load_sequences(manifest, out)

print("== downscale ==")
frame = sequences[0].frames[0]
small = downscale(frame, 4)
print(f"{frame.shape} uint8 -> {small.shape} float64 via 4x4 box averages")
print(f"intensity range preserved: [{small.min():.1f}, {small.max():.1f}] within [0, 255]")

print("\n== windowing ==")
n = len(sequences[0].frames)
starts = window_starts(n, size=15, overlap=5)
print(f"{n} frames, window 15, overlap 5 -> stride 10 -> starts {starts}")

print("\n== majority labeling ==")
rows = sequences[0].labels[starts[1] : starts[1] + 15]
label = majority_label(rows)
print(f"window at frame {starts[1]}: column sums {rows.sum(axis=0)} of 15 "
      f"-> majority label {label} (bit set iff >= 8 ones)")

print("\n== split + normalize ==")
result = preprocess_sequences(sequences, resize_factor=4, seed=3)
sizes = len(result.train), len(result.val), len(result.test)
print(f"{sum(sizes)} windows split train/val/test = {sizes} "
      "(test = round(30%), then val = round(30%) of the rest)")
train_values = np.concatenate([s.volume.ravel() for s in result.train])
test_values = np.concatenate([s.volume.ravel() for s in result.test])
print(f"train after normalization: mean {train_values.mean():+.2e}, std {train_values.std():.6f}")
print(f"test with the train normalizer: mean {test_values.mean():+.3f} "
      "(not exactly 0: statistics come from train only)")

print("\nvideo-level splitting (granularity='video') keeps overlapping windows")
print("of one video inside a single part, avoiding train/test leakage.")
