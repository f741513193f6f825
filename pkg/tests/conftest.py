"""Shared helpers: small architectures and synthetic window sets."""

import numpy as np

from deeprink.nn import (
    ArchitectureSpec,
    ConvLayer,
    DenseLayer,
    FlattenLayer,
    PoolLayer,
    ReluLayer,
    SigmoidLayer,
)
from deeprink.pipeline import WindowSample


def small_arch(k: int, input_shape=(1, 15, 8, 8)) -> ArchitectureSpec:
    """Conv/pool/dense stack small enough for second-scale training in tests."""
    return ArchitectureSpec(
        input_shape=input_shape,
        layers=(
            ConvLayer(filters=2, kernel=(3, 3, 3)),
            ReluLayer(),
            PoolLayer(window=(2, 2, 2), stride=(2, 2, 2)),
            FlattenLayer(),
            DenseLayer(units=k),
            SigmoidLayer(),
        ),
    )


def random_windows(n: int, k: int, seed: int, shape=(1, 15, 8, 8), labels=None):
    """Random normalized-looking windows with every class mixed (pos and neg)."""
    rng = np.random.default_rng(seed)
    if labels is None:
        while True:
            labels = rng.integers(0, 2, size=(n, k)).astype(np.uint8)
            counts = labels.sum(axis=0)
            if np.all(counts > 0) and np.all(counts < n):
                break
    return [
        WindowSample(
            volume=rng.normal(size=shape),
            label=np.asarray(labels[i], dtype=np.uint8),
            source=(0, 10 * i),
        )
        for i in range(n)
    ]


def moving_blob_windows(n: int, k: int, seed: int, size: int = 8, depth: int = 15):
    """Learnable windows: class j is a blob sweeping in direction 2*pi*j/k.

    Multi-hot labels; volumes are roughly zero-mean so they can feed a
    network directly without the full preprocessing pipeline.
    """
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=(n, k)).astype(np.uint8)
    # ensure each class fires somewhere and not everywhere
    for j in range(k):
        labels[j % n, j] = 1
        labels[(j + 1) % n, j] = 0
    yy, xx = np.mgrid[0:size, 0:size]
    samples = []
    for i in range(n):
        vol = rng.normal(scale=0.2, size=(depth, size, size))
        for j in range(k):
            if not labels[i, j]:
                continue
            angle = 2 * np.pi * j / k
            x0, y0 = rng.uniform(0, size), rng.uniform(0, size)
            for t in range(depth):
                cx = (x0 + np.cos(angle) * t * 0.7) % size
                cy = (y0 + np.sin(angle) * t * 0.7) % size
                dx = np.minimum(np.abs(xx - cx), size - np.abs(xx - cx))
                dy = np.minimum(np.abs(yy - cy), size - np.abs(yy - cy))
                vol[t] += 2.0 * np.exp(-(dx * dx + dy * dy) / 2.0)
        samples.append(
            WindowSample(
                volume=vol[np.newaxis] - vol.mean(),
                label=labels[i],
                source=(0, 10 * i),
            )
        )
    return samples
