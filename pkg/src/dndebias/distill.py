"""Teacher/student training pipelines with feature-level distillation.

Three pipelines share one training loop:

* ``DND``: teacher on the ``a_high`` group, then a student initialised from
  the teacher and trained on the ``a_low`` group with the cosine distance to
  the frozen teacher's embeddings added to the classification loss.
* ``DNDPP``: the DND stages, then a second student initialised from the
  first and trained on all data, distilling from the (frozen) first student.
* ``OSD``: teacher on ``a_high``, then a single student trained on all data
  distilling from the teacher.

Each stage draws its initialisation and batch order from a generator keyed
by ``(seed, stage name)``, so the full-data stage of DNDPP and OSD consume
identical random streams.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .datagen import Dataset
from .errors import (
    ArityError,
    ContaminationError,
    CoverageError,
    DegenerateEmbeddingError,
    MappingError,
    ShapeError,
    TrainingAbortError,
)
from .model import (
    EmbeddingNet,
    TrainSpec,
    backward,
    embed,
    init_net,
    save_checkpoint,
    sgd_step,
)

log = logging.getLogger(__name__)

STAGE_KEYS = {"init": 0, "teacher": 1, "student": 2, "final_student": 3, "baseline": 4}


class Method(str, Enum):
    DND = "dnd"
    DNDPP = "dndpp"
    OSD = "osd"


@dataclass(frozen=True)
class BinaryAttribute:
    """Two-way regrouping of a raw attribute.

    ``mapping`` sends raw labels to ``a_high`` or ``a_low``.  The default
    mapping is the identity on the two category names.
    """

    name: str
    a_high: str
    a_low: str
    mapping: Mapping[str, str] | None = None

    def __post_init__(self):
        if self.a_high == self.a_low:
            raise ValueError("a_high and a_low must differ")
        if self.mapping is None:
            object.__setattr__(self, "mapping", {self.a_high: self.a_high, self.a_low: self.a_low})
        bad = {v for v in self.mapping.values()} - {self.a_high, self.a_low}
        if bad:
            raise ValueError(f"mapping targets {sorted(bad)} are not {self.a_high!r}/{self.a_low!r}")

    @property
    def categories(self) -> tuple[str, str]:
        return (self.a_high, self.a_low)

    @classmethod
    def from_groups(cls, name: str, high: Sequence[str], low: Sequence[str], a_high="high", a_low="low"):
        mapping = {r: a_high for r in high}
        mapping.update({r: a_low for r in low})
        if len(mapping) != len(high) + len(low):
            raise ValueError("a raw category is assigned to both sides")
        return cls(name, a_high, a_low, mapping)

    def swapped(self) -> "BinaryAttribute":
        return BinaryAttribute(self.name, self.a_low, self.a_high, self.mapping)


def binarize_attribute(dataset: Dataset, attr: BinaryAttribute) -> Dataset:
    """Replace raw attribute labels by ``(a_high, a_low)``; samples are unchanged."""
    raw = set(dataset.labels[i] for i in np.unique(dataset.attribute))
    missing = sorted(raw - set(attr.mapping))
    if missing:
        raise MappingError(f"attribute {attr.name!r}: no mapping for category {missing[0]!r}")
    labels = attr.categories
    lut = np.array([labels.index(attr.mapping.get(l, attr.a_high)) for l in dataset.labels], dtype=np.int64)
    return Dataset(dataset.features, dataset.identity, lut[dataset.attribute], labels, dataset.num_identities)


def assign_high_low(group_tprs: Mapping[str, float]) -> tuple[str, str]:
    """Return ``(a_high, a_low)``: the label with the higher TPR first.

    Ties go to the lexicographically smaller label, with a warning.
    """
    if len(group_tprs) != 2:
        raise ArityError(f"expected two attribute categories, got {len(group_tprs)}")
    (l0, t0), (l1, t1) = sorted(group_tprs.items())
    if not (np.isfinite(t0) and np.isfinite(t1)):
        raise ValueError("group TPRs must be finite")
    if t0 == t1:
        log.warning("equal TPR %.6g for %r and %r; taking %r as a_high", t0, l0, l1, l0)
        return l0, l1
    return (l0, l1) if t0 > t1 else (l1, l0)


def distill_loss(f_s, f_t) -> float:
    """Cosine distance ``1 - cos(f_s, f_t)``, in [0, 2]."""
    f_s = np.asarray(f_s, dtype=np.float64)
    f_t = np.asarray(f_t, dtype=np.float64)
    if f_s.shape != f_t.shape:
        raise ShapeError(f"embedding shapes differ: {f_s.shape} vs {f_t.shape}")
    ns, nt = np.linalg.norm(f_s), np.linalg.norm(f_t)
    if ns <= 1e-12 or nt <= 1e-12:
        raise DegenerateEmbeddingError("near-zero-norm embedding in distillation loss")
    return float(1.0 - np.dot(f_s, f_t) / (ns * nt))


# --- training ---------------------------------------------------------------------


@dataclass
class EpochLoss:
    class_loss: float
    distill_loss: float


def stage_rng(seed: int, stage: str) -> np.random.Generator:
    return np.random.default_rng([seed, STAGE_KEYS[stage]])


def fit(
    net: EmbeddingNet,
    data: Dataset,
    spec: TrainSpec,
    rng: np.random.Generator,
    teacher: EmbeddingNet | None = None,
    lam: float = 0.0,
    epochs: int | None = None,
    batch_log: list | None = None,
) -> list[EpochLoss]:
    """Mini-batch SGD on ``L_class + lam * L_dis``, updating ``net`` in place.

    One permutation of ``data`` is drawn from ``rng`` per epoch.  Teacher
    embeddings are recomputed for every batch.  Returns per-epoch
    sample-weighted means of both loss components.
    """
    epochs = spec.epochs if epochs is None else epochs
    if len(data) == 0 and epochs:
        raise CoverageError("cannot train on an empty dataset")
    X, y = data.features, data.identity
    trace = []
    for epoch in range(epochs):
        lr = spec.learning_rate(epoch)
        order = rng.permutation(len(data))
        sum_c = sum_d = 0.0
        for start in range(0, len(order), spec.batch_size):
            idx = order[start : start + spec.batch_size]
            f_t = embed(teacher, X[idx]) if teacher is not None and lam != 0 else None
            grads, parts = backward(net, X[idx], y[idx], f_t, lam)
            if batch_log is not None:
                batch_log.append(parts)
            sgd_step(net, grads, lr)
            if not net.is_finite():
                raise TrainingAbortError(f"non-finite parameters after epoch {epoch} step")
            sum_c += parts.class_loss * len(idx)
            sum_d += parts.distill_loss * len(idx)
        trace.append(EpochLoss(sum_c / len(data), sum_d / len(data)))
    return trace


def train_teacher(
    data_high: Dataset,
    spec: TrainSpec,
    a_high: str | None = None,
    init: EmbeddingNet | None = None,
    arch: Mapping | None = None,
    epochs: int | None = None,
) -> tuple[EmbeddingNet, list[EpochLoss]]:
    """Train the teacher with ``L_class`` only on ``a_high`` samples.

    Args:
        data_high: training samples, all labelled ``a_high``.
        spec: training hyperparameters.
        a_high: expected label; any other label present raises
            :class:`ContaminationError`.  Defaults to the only label present.
        init: starting network; a fresh seeded one (see :func:`default_net`)
            when omitted.
        arch: keyword overrides for :func:`default_net`.
        epochs: override for ``spec.epochs``.
    """
    present = {data_high.labels[i] for i in np.unique(data_high.attribute)}
    if a_high is None:
        if len(present) > 1:
            raise ContaminationError(f"teacher data holds several attribute labels {sorted(present)}")
    elif present - {a_high}:
        raise ContaminationError(
            f"teacher data contains samples of {sorted(present - {a_high})}, expected only {a_high!r}"
        )
    if len(np.unique(data_high.identity)) < 2:
        raise CoverageError("teacher needs at least two identities")
    net = init.copy() if init is not None else default_net(data_high, spec.seed, **(arch or {}))
    trace = fit(net, data_high, spec, stage_rng(spec.seed, "teacher"), epochs=epochs)
    return net, trace


def train_student(
    teacher: EmbeddingNet,
    data: Dataset,
    lam: float,
    spec: TrainSpec,
    init: EmbeddingNet,
    stage: str = "student",
    epochs: int | None = None,
    batch_log: list | None = None,
) -> tuple[EmbeddingNet, list[EpochLoss]]:
    """Train a copy of ``init`` on ``L_class + lam * L_dis`` against a frozen teacher.

    The teacher is never modified; its digest is checked after training.
    """
    if teacher.architecture != init.architecture:
        raise ShapeError("teacher and student architectures differ")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    before = teacher.digest()
    student = init.copy()
    trace = fit(student, data, spec, stage_rng(spec.seed, stage), teacher, lam, epochs, batch_log)
    if teacher.digest() != before:
        raise RuntimeError("frozen teacher was modified during student training")
    return student, trace


def default_net(
    data: Dataset,
    seed: int,
    hidden_dims: Sequence[int] = (64,),
    embed_dim: int = 16,
) -> EmbeddingNet:
    return init_net(data.input_dim, hidden_dims, embed_dim, data.num_identities, stage_rng(seed, "init"))


def train_baseline(
    data: Dataset, spec: TrainSpec, arch: Mapping | None = None, epochs: int | None = None
) -> tuple[EmbeddingNet, list[EpochLoss]]:
    """Un-debiased reference: ``L_class`` on all data from the shared seeded init."""
    net = default_net(data, spec.seed, **(arch or {}))
    trace = fit(net, data, spec, stage_rng(spec.seed, "baseline"), epochs=epochs)
    return net, trace


# --- pipelines ---------------------------------------------------------------------


@dataclass
class StageRecord:
    name: str
    data: str
    lam: float
    epochs: int
    init: str
    teacher: str | None
    teacher_digest_before: str | None
    teacher_digest_after: str | None
    result_digest: str
    loss_trace: list[EpochLoss]


@dataclass
class PipelineResult:
    """Networks produced by a pipeline.

    ``student`` is the first distilled network (``M_s`` for DND/DNDPP, the
    single student for OSD); ``final_student`` is DNDPP's ``M*_s``.
    """

    method: Method
    attribute: BinaryAttribute
    teacher: EmbeddingNet
    student: EmbeddingNet
    final_student: EmbeddingNet | None = None
    stages: list[StageRecord] = field(default_factory=list)
    teacher_checkpoint_digest: str = ""

    @property
    def deployed(self) -> EmbeddingNet:
        """The network used for verification."""
        return self.final_student if self.final_student is not None else self.student

    @property
    def loss_trace(self) -> list[EpochLoss]:
        return [e for s in self.stages for e in s.loss_trace]

    def manifest(self, checkpoints: Mapping[str, str] | None = None) -> dict:
        return {
            "method": self.method.value,
            "attribute": {
                "name": self.attribute.name,
                "a_high": self.attribute.a_high,
                "a_low": self.attribute.a_low,
                "mapping": dict(sorted(self.attribute.mapping.items())),
            },
            "checkpoints": dict(checkpoints or {}),
            "stages": [
                {
                    "name": s.name,
                    "data": s.data,
                    "lambda": s.lam,
                    "epochs": s.epochs,
                    "init": s.init,
                    "teacher": s.teacher,
                    "teacher_digest_before": s.teacher_digest_before,
                    "teacher_digest_after": s.teacher_digest_after,
                    "result_digest": s.result_digest,
                    "loss_trace": [
                        {"class_loss": e.class_loss, "distill_loss": e.distill_loss}
                        for e in s.loss_trace
                    ],
                }
                for s in self.stages
            ],
        }

    def save(self, out_dir, prefix: str = "") -> dict:
        """Write stage checkpoints plus ``manifest.json`` into ``out_dir``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        names = {"teacher": self.teacher, "student": self.student}
        if self.final_student is not None:
            names["final_student"] = self.final_student
        paths = {}
        for name, net in names.items():
            fname = f"{prefix}{name}.dndnet"
            save_checkpoint(net, out / fname)
            paths[name] = fname
        manifest = self.manifest(paths)
        (out / f"{prefix}manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return manifest


def _require_coverage(data: Dataset, attr: BinaryAttribute) -> None:
    for label in attr.categories:
        ids = data.identities_of(label)
        if len(ids) < 2:
            raise CoverageError(
                f"category {label!r} has {len(ids)} identities; at least 2 are required"
            )


def run_pipeline(
    method: Method | str,
    dataset: Dataset,
    attr: BinaryAttribute,
    spec: TrainSpec,
    stage_epochs: Mapping[str, int] | None = None,
    arch: Mapping | None = None,
    teacher: EmbeddingNet | None = None,
) -> PipelineResult:
    """Run DND, DNDPP or OSD end to end.

    Args:
        method: pipeline name.
        dataset: training data with raw attribute labels; it is binarised
            with ``attr`` first.
        attr: binary attribute with ``a_high``/``a_low`` already assigned.
        spec: hyperparameters; ``lambda1``/``lambda2``/``lambda_osd`` weight
            the distillation terms of the respective stages.
        stage_epochs: per-stage epoch overrides keyed by ``teacher``,
            ``student``, ``final_student``.
        arch: network shape overrides (``hidden_dims``, ``embed_dim``).
        teacher: a previously trained teacher, skipping Step 1.
    """
    method = Method(method)
    epochs = {"teacher": spec.epochs, "student": spec.epochs, "final_student": spec.epochs}
    epochs.update(stage_epochs or {})
    data = binarize_attribute(dataset, attr)
    _require_coverage(data, attr)
    high = data.with_group(attr.a_high)
    low = data.with_group(attr.a_low)

    stages: list[StageRecord] = []
    if teacher is None:
        teacher, t_trace = train_teacher(high, spec, attr.a_high, arch=arch, epochs=epochs["teacher"])
        stages.append(StageRecord("teacher", attr.a_high, 0.0, epochs["teacher"], "seeded", None,
                                  None, None, teacher.digest(), t_trace))
    teacher_digest = teacher.digest()

    def distill_stage(name, t_net, t_name, init, init_name, subset, subset_name, lam):
        d0 = t_net.digest()
        net, trace = train_student(t_net, subset, lam, spec, init, stage=name, epochs=epochs[name])
        stages.append(StageRecord(name, subset_name, lam, epochs[name], init_name, t_name,
                                  d0, t_net.digest(), net.digest(), trace))
        return net

    final = None
    if method is Method.OSD:
        student = distill_stage("final_student", teacher, "teacher", teacher, "teacher",
                                data, "all", spec.lambda_osd)
    else:
        student = distill_stage("student", teacher, "teacher", teacher, "teacher",
                                low, attr.a_low, spec.lambda1)
        if method is Method.DNDPP:
            final = distill_stage("final_student", student, "student", student, "student",
                                  data, "all", spec.lambda2)
    return PipelineResult(method, attr, teacher, student, final, stages, teacher_digest)


# default distillation weights per attribute
DEFAULT_LAMBDAS = {
    "gender": {"lambda1": 1.0, "lambda2": 1.0, "lambda_osd": 1.0},
    "skintone": {"lambda1": 1.0, "lambda2": 1.0, "lambda_osd": 0.5},
}


def default_spec(attribute: str = "gender", **overrides) -> TrainSpec:
    """TrainSpec with the default lambdas for ``attribute`` unless overridden."""
    values = dict(DEFAULT_LAMBDAS[attribute])
    values.update(overrides)
    return TrainSpec(**values)
