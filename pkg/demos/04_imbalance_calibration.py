"""The class-imbalance machinery, end to end on counts you can check by eye.

Weights: w_i = max(1, ln(mu * m / m_i)) with mu = 0.7, so classes rarer
than 70% of the training set earn weights above 1. Thresholds: after
training, class i's threshold drops from 0.5 to alpha * c_i / w_i, where
c_i is its best validation confidence. Rare classes therefore fire on
confidences well below 0.5, trading precision for the recall they lack.
"""

import numpy as np

from deeprink.imbalance import (
    LabelStats,
    class_weights,
    format_calibration,
    CalibrationState,
    oversample_binary,
    soften_thresholds,
)
from deeprink.pipeline import WindowSample

print("== class weights from label counts (m = 1000 training windows) ==")
counts = np.array([700, 150, 30, 10])
stats = LabelStats(m=1000, m_i=counts)
weights = class_weights(stats, mu=0.7)
for c, w in zip(counts, weights):
    print(f"  m_i={c:4d}  ->  w={w:.6f}" + ("  (clamped)" if w == 1.0 else ""))

print("\n== threshold softening from validation confidences ==")
cmax = np.array([0.99, 0.95, 0.80, 0.62])
thresholds = soften_thresholds(weights, cmax, alpha=0.5)
for i, (w, c, th) in enumerate(zip(weights, cmax, thresholds)):
    print(f"  class{i}: weight {w:.3f}, best val confidence {c:.2f} -> threshold {th:.4f}")
print("the rarest class now fires above", f"{thresholds[-1]:.4f}",
      "instead of 0.5; its best validation window always fires")

print("\n== what softening changes on a confidence matrix ==")
rng = np.random.default_rng(5)
conf = rng.uniform(size=(200, 4)) * cmax  # rare classes rarely look confident
fired_default = (conf > 0.5).sum(axis=0)
fired_soft = (conf > thresholds).sum(axis=0)
for i in range(4):
    print(f"  class{i}: fires {fired_default[i]:3d} windows at 0.5, "
          f"{fired_soft[i]:3d} at {thresholds[i]:.3f}")

print("\n== oversampling, the ensemble-side remedy ==")
samples = [
    WindowSample(volume=np.zeros((1, 1, 1, 1)), label=np.array([1], dtype=np.uint8), source=(0, i))
    for i in range(2)
] + [
    WindowSample(volume=np.zeros((1, 1, 1, 1)), label=np.array([0], dtype=np.uint8), source=(0, i))
    for i in range(2, 8)
]
balanced = oversample_binary(samples, target_class=0, seed=9)
pos = sum(int(s.label[0]) for s in balanced)
print(f"2 positives + 6 negatives -> {len(balanced)} samples, {pos} positive "
      f"({len(balanced) - pos} negative): duplicates drawn with replacement, seeded")

print("\n== the calibration state serializes to plain text ==")
state = CalibrationState(weights=weights, max_confidences=cmax,
                         thresholds=thresholds, alpha=0.5, mu=0.7)
print(format_calibration(state, ["play", "check", "shot", "goal"]), end="")
