"""Labelled feature datasets: seeded synthetic generator and file I/O.

The synthetic model draws one Gaussian center per identity, adds a fixed
per-group offset (so attribute information is present in the features) and
scatters samples around each center with a per-group noise level.  A group
with a larger noise level is harder to verify, which is what produces a
measurable TPR gap between groups.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import FormatError, ShapeError

FEATURE_MAGIC = b"DNDFEAT1"


@dataclass
class Dataset:
    """Feature vectors with identity and attribute labels.

    ``attribute`` holds indices into ``labels``.  ``num_identities`` is the
    size of the identity universe, which may exceed the identities actually
    present once a dataset has been filtered to one attribute group.
    """

    features: np.ndarray
    identity: np.ndarray
    attribute: np.ndarray
    labels: tuple[str, ...]
    num_identities: int | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.identity = np.asarray(self.identity, dtype=np.int64)
        self.attribute = np.asarray(self.attribute, dtype=np.int64)
        self.labels = tuple(self.labels)
        n = self.features.shape[0]
        if self.features.ndim != 2:
            raise ShapeError("features must be a 2-D array")
        if self.identity.shape != (n,) or self.attribute.shape != (n,):
            raise ShapeError("identity/attribute arrays must have one entry per sample")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError(f"duplicate attribute labels {self.labels}")
        if n and (self.attribute.min() < 0 or self.attribute.max() >= len(self.labels)):
            raise ValueError("attribute index outside the label table")
        if n and self.identity.min() < 0:
            raise ValueError("negative identity id")
        if self.num_identities is None:
            self.num_identities = int(self.identity.max()) + 1 if n else 0
        elif n and self.identity.max() >= self.num_identities:
            raise ValueError("identity id outside the identity universe")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    @property
    def attribute_labels(self) -> np.ndarray:
        """Per-sample attribute label strings."""
        return np.asarray(self.labels, dtype=object)[self.attribute]

    def label_mask(self, label: str) -> np.ndarray:
        if label not in self.labels:
            return np.zeros(len(self), dtype=bool)
        return self.attribute == self.labels.index(label)

    def subset(self, mask) -> "Dataset":
        """Samples selected by a boolean mask or index array; the identity universe is kept."""
        return Dataset(
            self.features[mask],
            self.identity[mask],
            self.attribute[mask],
            self.labels,
            self.num_identities,
        )

    def with_group(self, label: str) -> "Dataset":
        return self.subset(self.label_mask(label))

    def identities_of(self, label: str) -> np.ndarray:
        return np.unique(self.identity[self.label_mask(label)])

    def check_contiguous(self) -> None:
        """Raise unless identities are exactly 0..K-1, each with a sample."""
        present = np.unique(self.identity)
        if len(present) != self.num_identities or (
            len(present) and present[-1] != len(present) - 1
        ):
            raise ValueError("identities are not contiguous 0..K-1")

    def equals(self, other: "Dataset") -> bool:
        return (
            self.labels == other.labels
            and self.num_identities == other.num_identities
            and np.array_equal(self.identity, other.identity)
            and np.array_equal(self.attribute, other.attribute)
            and self.features.shape == other.features.shape
            and self.features.tobytes() == other.features.tobytes()
        )


@dataclass
class SynthSpec:
    ids_per_group: Mapping[str, int] = field(default_factory=lambda: {"high": 8, "low": 8})
    samples_per_id: int = 40
    input_dim: int = 32
    center_scale: float = 1.0
    noise_sigma_per_group: Mapping[str, float] = field(
        default_factory=lambda: {"high": 1.2, "low": 3.6}
    )
    seed: int = 0
    group_shift: float = 1.0
    eval_samples_per_id: int = 10

    def __post_init__(self):
        if set(self.ids_per_group) != set(self.noise_sigma_per_group):
            raise ValueError("ids_per_group and noise_sigma_per_group name different groups")
        for g, k in self.ids_per_group.items():
            if k < 2:
                raise ValueError(f"group {g!r} needs at least 2 identities, got {k}")
        for g, s in self.noise_sigma_per_group.items():
            if not s > 0:
                raise ValueError(f"noise sigma for group {g!r} must be positive")
        if self.samples_per_id < 1 or self.input_dim < 1:
            raise ValueError("samples_per_id and input_dim must be positive")
        if not self.center_scale > 0:
            raise ValueError("center_scale must be positive")
        if self.eval_samples_per_id < 0:
            raise ValueError("eval_samples_per_id must be nonnegative")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


def _identity_layout(spec: SynthSpec):
    groups = list(spec.ids_per_group)
    group_of_id = np.concatenate(
        [np.full(spec.ids_per_group[g], i) for i, g in enumerate(groups)]
    )
    return groups, group_of_id


def _centers(spec: SynthSpec) -> np.ndarray:
    groups, group_of_id = _identity_layout(spec)
    rng = np.random.default_rng([spec.seed, 0])
    centers = spec.center_scale * rng.standard_normal((len(group_of_id), spec.input_dim))
    shifts = rng.standard_normal((len(groups), spec.input_dim))
    shifts *= spec.group_shift / np.linalg.norm(shifts, axis=1, keepdims=True)
    return centers + shifts[group_of_id]


def generate_synthetic(spec: SynthSpec, split: str = "train") -> Dataset:
    """Draw a seeded attribute-biased dataset.

    ``split="eval"`` draws ``eval_samples_per_id`` fresh samples around the
    same identity centers from an independent stream, for held-out
    verification.
    """
    if split not in ("train", "eval"):
        raise ValueError(f"unknown split {split!r}")
    groups, group_of_id = _identity_layout(spec)
    centers = _centers(spec)
    per_id = spec.samples_per_id if split == "train" else spec.eval_samples_per_id
    rng = np.random.default_rng([spec.seed, 1 if split == "train" else 2])
    sigmas = np.array([spec.noise_sigma_per_group[g] for g in groups])

    identity = np.repeat(np.arange(len(group_of_id)), per_id)
    attribute = group_of_id[identity]
    noise = rng.standard_normal((len(identity), spec.input_dim))
    features = centers[identity] + sigmas[attribute][:, None] * noise
    return Dataset(features, identity, attribute, tuple(groups), len(group_of_id))


# --- DNDFEAT1 binary format ---------------------------------------------------


def write_features(dataset: Dataset, path) -> None:
    n, d = dataset.features.shape
    if n and (dataset.identity.max() >= 2**32 or len(dataset.labels) >= 2**16):
        raise ValueError("identity or label table too large for the feature format")
    head = FEATURE_MAGIC + struct.pack("<QI", n, d)
    rec = np.dtype([("id", "<u4"), ("attr", "<u2"), ("x", "<f8", (d,))])
    body = np.empty(n, dtype=rec)
    body["id"] = dataset.identity
    body["attr"] = dataset.attribute
    body["x"] = dataset.features
    table = "\n".join(dataset.labels).encode("utf-8")
    if any("\n" in lab for lab in dataset.labels):
        raise ValueError("attribute labels may not contain newlines")
    tail = struct.pack("<II", len(dataset.labels), len(table)) + table
    Path(path).write_bytes(head + body.tobytes() + tail)


def read_features(path) -> Dataset:
    return features_from_bytes(Path(path).read_bytes())


def features_from_bytes(data: bytes) -> Dataset:
    if len(data) < 8 or data[:8] != FEATURE_MAGIC:
        raise FormatError("bad feature-file magic", 0)
    if len(data) < 20:
        raise FormatError("truncated feature-file header", len(data))
    n, d = struct.unpack_from("<QI", data, 8)
    rec = np.dtype([("id", "<u4"), ("attr", "<u2"), ("x", "<f8", (d,))])
    start = 20
    end = start + n * rec.itemsize
    if end + 8 > len(data):
        raise FormatError(
            f"truncated feature file: {n} records of {rec.itemsize} bytes expected",
            min(len(data), end),
        )
    body = np.frombuffer(data, dtype=rec, count=n, offset=start)
    n_labels, table_len = struct.unpack_from("<II", data, end)
    if end + 8 + table_len != len(data):
        raise FormatError("label table length does not match file size", end)
    try:
        text = data[end + 8 :].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError("label table is not valid UTF-8", end + 8 + exc.start) from exc
    labels = tuple(text.split("\n")) if n_labels else ()
    if len(labels) != n_labels:
        raise FormatError(f"expected {n_labels} labels, found {len(labels)}", end + 8)
    try:
        dataset = Dataset(
            body["x"].astype(np.float64),
            body["id"].astype(np.int64),
            body["attr"].astype(np.int64),
            labels,
        )
        dataset.check_contiguous()
    except ValueError as exc:
        raise FormatError(f"invalid records: {exc}", start) from exc
    return dataset


def read_features_csv(path, labels: Sequence[str] | None = None) -> Dataset:
    """Import ``id, attribute, f0 .. f{d-1}`` rows from an external extractor."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["id", "attribute"]:
            raise FormatError("CSV header must start with 'id,attribute'", 0)
        d = len(header) - 2
        ids, attrs, feats = [], [], []
        for row in reader:
            if not row:
                continue
            if len(row) != d + 2:
                raise FormatError(f"row {reader.line_num} has {len(row)} columns, expected {d + 2}")
            ids.append(int(row[0]))
            attrs.append(row[1])
            feats.append([float(v) for v in row[2:]])
    table = list(labels) if labels is not None else sorted(set(attrs))
    index = {lab: i for i, lab in enumerate(table)}
    missing = sorted(set(attrs) - set(index))
    if missing:
        raise FormatError(f"attribute labels not in label table: {missing}")
    dataset = Dataset(
        np.array(feats, dtype=np.float64).reshape(len(ids), d),
        np.array(ids, dtype=np.int64),
        np.array([index[a] for a in attrs], dtype=np.int64),
        tuple(table),
    )
    try:
        dataset.check_contiguous()
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
    return dataset


def write_features_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "attribute", *[f"f{i}" for i in range(dataset.input_dim)]])
        for ident, lab, x in zip(dataset.identity, dataset.attribute_labels, dataset.features):
            w.writerow([int(ident), lab, *(repr(float(v)) for v in x)])
