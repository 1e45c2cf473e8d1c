"""Input-gradient saliency and cross-group similarity of average maps.

A dense network has no convolutional feature maps to attribute, so the
attention map of an input is the absolute gradient of the predicted class
logit with respect to that input.  Averaging the maps over each attribute
group and comparing the averages with cosine similarity measures how
similarly the network processes the two groups.
"""

from __future__ import annotations

import csv

import numpy as np

from .datagen import Dataset
from .distill import BinaryAttribute, binarize_attribute
from .errors import DegenerateEmbeddingError, TrainingAbortError
from .model import EmbeddingNet, _check_input, _forward_cached


def logit_input_gradient(net: EmbeddingNet, X, classes=None) -> np.ndarray:
    """Gradient of ``logits[c]`` w.r.t. each input row (``c`` defaults to the argmax)."""
    X = np.atleast_2d(_check_input(net, X))
    acts, pre, logits = _forward_cached(net, X)
    if classes is None:
        classes = logits.argmax(axis=1)
    d_h = net.head_weight[np.asarray(classes)]
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if layer.activation == "relu":
            d_h = d_h * (pre[i] > 0)
        d_h = d_h @ layer.weight
    return d_h


def input_saliency(net: EmbeddingNet, x) -> np.ndarray:
    """``|d logit_pred / dx|`` for one input (or row-wise for a batch)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.abs(logit_input_gradient(net, x))
    if not np.isfinite(g).all():
        raise TrainingAbortError("non-finite saliency gradient")
    return g[0] if x.ndim == 1 else g


def group_mean_maps(net: EmbeddingNet, dataset: Dataset, attr: BinaryAttribute) -> dict[str, np.ndarray]:
    data = binarize_attribute(dataset, attr)
    maps = {}
    for label in attr.categories:
        X = data.features[data.label_mask(label)]
        if len(X) == 0:
            raise DegenerateEmbeddingError(f"group {label!r} has no samples")
        maps[label] = input_saliency(net, X).mean(axis=0)
    return maps


def group_attention_similarity(net: EmbeddingNet, dataset: Dataset, attr: BinaryAttribute) -> float:
    """Cosine similarity between the two groups' mean saliency maps."""
    maps = group_mean_maps(net, dataset, attr)
    a, b = (maps[l] for l in attr.categories)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na <= 1e-12 or nb <= 1e-12:
        raise DegenerateEmbeddingError("zero-norm mean saliency map")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def write_maps_csv(maps: dict[str, np.ndarray], path) -> None:
    """One row per input dimension, one column per group."""
    labels = list(maps)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dim", *labels])
        for i in range(len(maps[labels[0]])):
            w.writerow([i, *(repr(float(maps[l][i])) for l in labels)])
