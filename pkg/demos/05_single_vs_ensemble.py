"""Train both strategies on the same small synthetic set and compare reports.

The single k-output network shares one feature extractor across classes and
handles imbalance with weights + softened thresholds. The ensemble trains k
independent binary networks on oversampled data and thresholds each at 0.5.
This demo stays small (16x16 windows, few epochs) so it runs in about a
minute; expect rough scores, not the ceiling of either method.
"""

import tempfile
import time
from pathlib import Path

from deeprink.dataio import SynthConfig, load_sequences, synth_dataset
from deeprink.metrics import render_report
from deeprink.nn import (
    ArchitectureSpec,
    ConvLayer,
    DenseLayer,
    FlattenLayer,
    Hyperparameters,
    PoolLayer,
    ReluLayer,
    SigmoidLayer,
)
from deeprink.pipeline import preprocess_sequences
from deeprink.strategy import evaluate, train_ensemble, train_single


def arch(outputs: int) -> ArchitectureSpec:
    return ArchitectureSpec(
        input_shape=(1, 15, 16, 16),
        layers=(
            ConvLayer(8, (3, 3, 3)), ReluLayer(), PoolLayer((2, 2, 2), (2, 2, 2)),
            ConvLayer(16, (3, 3, 3)), ReluLayer(), PoolLayer((2, 2, 2), (2, 2, 2)),
            FlattenLayer(), DenseLayer(32), ReluLayer(),
            DenseLayer(outputs), SigmoidLayer(),
        ),
    )


out = Path(tempfile.mkdtemp(prefix="deeprink_demo_"))
config = SynthConfig(k=3, videos=8, frames_per_video=255, width=64, height=64,
                     class_prevalence=[0.45, 0.25, 0.08])
manifest = synth_dataset(config, seed=31, out_dir=out)
result = preprocess_sequences(load_sequences(manifest, out), resize_factor=4, seed=2)
print(f"windows: {len(result.train)} train / {len(result.val)} val / {len(result.test)} test")

hyper = Hyperparameters(learning_rate=0.02, momentum=0.9, epochs=15, batch_size=8)

t0 = time.time()
single, single_log = train_single(result.train, result.val, arch(3), hyper, seed=11,
                                  class_names=manifest.class_names)
print(f"\nsingle 3-output network trained in {time.time() - t0:.0f}s "
      f"(loss {single_log.epoch_losses[0]:.3f} -> {single_log.epoch_losses[-1]:.3f})")
print("calibrated thresholds:", [f"{t:.3f}" for t in single.calibration.thresholds])
print(render_report(evaluate(single, result.test), manifest.class_names))

t0 = time.time()
ensemble, ens_log = train_ensemble(result.train, result.val, arch(1), hyper, seed=11,
                                   class_names=manifest.class_names)
print(f"ensemble of 3 binary networks trained in {time.time() - t0:.0f}s "
      f"({len(ens_log.member_losses)} members, thresholds fixed at 0.5)")
print(render_report(evaluate(ensemble, result.test), manifest.class_names))

print("the ensemble costs k trainings and k forward passes per prediction;")
print("the single model amortizes one network across all classes.")
