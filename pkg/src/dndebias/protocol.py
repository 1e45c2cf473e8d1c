"""Template-based 1:1 verification protocol.

Templates pool the L2-normalised feature vectors of one subject into a
single unit vector; pairs of templates are scored by cosine similarity.
Only pairs whose two templates share an attribute label belong to a group
protocol; mixed pairs count toward the overall ROC only.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .datagen import Dataset
from .errors import DegenerateEmbeddingError, FormatError

_EPS = 1e-12


@dataclass(frozen=True)
class Template:
    aggregated: np.ndarray
    subject_id: int
    group: str | None
    members: tuple[int, ...] = ()


@dataclass
class PairProtocol:
    """Template pairs stored column-wise.

    ``group_tag[i]`` is the shared attribute label of pair ``i`` or ``None``
    for a mixed pair.
    """

    templates: list[Template]
    a: np.ndarray
    b: np.ndarray
    genuine: np.ndarray
    group_tag: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.int64)
        self.b = np.asarray(self.b, dtype=np.int64)
        self.genuine = np.asarray(self.genuine, dtype=bool)
        self.group_tag = np.asarray(self.group_tag, dtype=object)

    def __len__(self) -> int:
        return len(self.a)

    def select(self, mask) -> "PairProtocol":
        return PairProtocol(
            self.templates, self.a[mask], self.b[mask], self.genuine[mask], self.group_tag[mask]
        )

    @classmethod
    def from_pairs(cls, templates: list[Template], pairs: Iterable[tuple[int, int]]):
        """Derive genuine flags and group tags from the templates themselves."""
        pairs = list(pairs)
        a = np.array([p[0] for p in pairs], dtype=np.int64)
        b = np.array([p[1] for p in pairs], dtype=np.int64)
        subj = np.array([t.subject_id for t in templates])
        grp = np.array([t.group for t in templates], dtype=object)
        tags = np.where(grp[a] == grp[b], grp[a], None) if len(pairs) else np.array([], dtype=object)
        return cls(templates, a, b, subj[a] == subj[b], tags)


def _unit_rows(features: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(features, axis=1, keepdims=True)
    if (norms <= _EPS).any():
        raise DegenerateEmbeddingError("zero-norm feature vector in template")
    return features / norms


def aggregate_template(features) -> np.ndarray:
    """Mean of the L2-normalised members, renormalised to unit length."""
    feats = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if feats.shape[0] == 0 or feats.size == 0:
        raise DegenerateEmbeddingError("empty template")
    mean = _unit_rows(feats).mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm <= _EPS:
        raise DegenerateEmbeddingError("template members cancel out (zero-norm mean)")
    return mean / norm


def make_template(features, subject_id: int, group: str | None, members=()) -> Template:
    return Template(aggregate_template(features), int(subject_id), group, tuple(members))


def cosine_score(t1: Template, t2: Template) -> float:
    return float(np.dot(t1.aggregated, t2.aggregated))


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get("DND_THREADS", "1")))
    except ValueError:
        return 1


def score_pairs(protocol: PairProtocol, threads: int | None = None) -> np.ndarray:
    """Cosine scores for every pair, in protocol order.

    Pair ranges are scored on up to ``threads`` workers (default from the
    ``DND_THREADS`` environment variable) and concatenated in order.
    """
    if not protocol.templates:
        return np.zeros(0)
    mat = np.stack([t.aggregated for t in protocol.templates])
    n = len(protocol)
    threads = threads or _thread_count()

    def chunk(lo_hi):
        lo, hi = lo_hi
        return np.einsum("ij,ij->i", mat[protocol.a[lo:hi]], mat[protocol.b[lo:hi]])

    bounds = np.linspace(0, n, min(threads, max(n, 1)) + 1).astype(int)
    ranges = list(zip(bounds[:-1], bounds[1:]))
    if len(ranges) <= 1:
        return chunk((0, n))
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return np.concatenate(list(pool.map(chunk, ranges)))


def split_pairs_by_group(
    protocol: PairProtocol, attribute: Sequence[str] | None = None
) -> dict[str, PairProtocol]:
    """Group protocols of same-label pairs, one per label in ``attribute``.

    Labels with no same-label pairs map to empty protocols when named
    explicitly and are omitted otherwise.
    """
    if attribute is None:
        attribute = sorted({t for t in protocol.group_tag if t is not None})
    return {g: protocol.select(protocol.group_tag == g) for g in attribute}


def templates_from_dataset(
    dataset: Dataset, embeddings: np.ndarray, template_size: int = 1
) -> list[Template]:
    """Chunk each identity's samples, in file order, into templates of ``template_size``.

    A trailing partial chunk becomes a smaller template.  Templates whose
    members carry different attribute labels get no group.
    """
    if template_size < 1:
        raise ValueError("template_size must be positive")
    templates = []
    labels = dataset.attribute_labels
    for ident in np.unique(dataset.identity):
        idx = np.flatnonzero(dataset.identity == ident)
        for start in range(0, len(idx), template_size):
            members = idx[start : start + template_size]
            groups = set(labels[members])
            group = groups.pop() if len(groups) == 1 else None
            templates.append(make_template(embeddings[members], ident, group, members))
    return templates


def all_pairs_protocol(templates: list[Template]) -> PairProtocol:
    """Every unordered template pair ``(i, j)``, ``i < j``."""
    a, b = np.triu_indices(len(templates), k=1)
    return PairProtocol.from_pairs(templates, zip(a, b))


def group_scores(protocol: PairProtocol, scores: np.ndarray, labels: Sequence[str] | None = None):
    """``(overall, {label: (genuine, impostor)})`` score splits for reporting."""
    overall = (scores[protocol.genuine], scores[~protocol.genuine])
    per_group = {}
    present = sorted({t for t in protocol.group_tag if t is not None})
    for g in labels if labels is not None else present:
        m = protocol.group_tag == g
        per_group[g] = (scores[m & protocol.genuine], scores[m & ~protocol.genuine])
    return overall, per_group


# --- CSV files -------------------------------------------------------------------


def read_membership_csv(path) -> dict[str, list[int]]:
    """``sample_id,template_id`` rows -> ``{template_id: [sample indices]}`` (first-seen order)."""
    out: dict[str, list[int]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"sample_id", "template_id"} <= set(reader.fieldnames):
            raise FormatError("membership CSV needs columns sample_id,template_id")
        for row in reader:
            out.setdefault(row["template_id"], []).append(int(row["sample_id"]))
    return out


def write_membership_csv(membership: dict[str, list[int]], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "template_id"])
        for tid, members in membership.items():
            for s in members:
                w.writerow([s, tid])


def read_pairs_csv(path) -> list[tuple[str, str, bool]]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"template_a_id", "template_b_id", "genuine"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise FormatError("pair CSV needs columns template_a_id,template_b_id,genuine")
        for row in reader:
            if row["genuine"] not in ("0", "1"):
                raise FormatError(f"genuine must be 0/1, got {row['genuine']!r} on line {reader.line_num}")
            rows.append((row["template_a_id"], row["template_b_id"], row["genuine"] == "1"))
    return rows


def write_pairs_csv(rows: Iterable[tuple[str, str, bool]], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["template_a_id", "template_b_id", "genuine"])
        for a, b, g in rows:
            w.writerow([a, b, int(bool(g))])


def protocol_from_files(dataset: Dataset, embeddings: np.ndarray, membership_path, pairs_path) -> PairProtocol:
    """Build a protocol from membership and pair-list CSVs.

    The genuine column must agree with the subject ids of the templates.
    """
    membership = read_membership_csv(membership_path)
    order = list(membership)
    index = {tid: i for i, tid in enumerate(order)}
    labels = dataset.attribute_labels
    templates = []
    for tid in order:
        members = np.array(membership[tid])
        if members.min() < 0 or members.max() >= len(dataset):
            raise FormatError(f"template {tid!r} references a sample outside the feature file")
        subjects = set(dataset.identity[members].tolist())
        if len(subjects) != 1:
            raise FormatError(f"template {tid!r} mixes subjects {sorted(subjects)}")
        groups = set(labels[members])
        group = groups.pop() if len(groups) == 1 else None
        templates.append(make_template(embeddings[members], subjects.pop(), group, members))
    rows = read_pairs_csv(pairs_path)
    pairs = []
    for a, b, _ in rows:
        if a not in index or b not in index:
            raise FormatError(f"pair ({a}, {b}) names an unknown template")
        pairs.append((index[a], index[b]))
    proto = PairProtocol.from_pairs(templates, pairs)
    declared = np.array([g for _, _, g in rows], dtype=bool)
    if len(declared) and not np.array_equal(declared, proto.genuine):
        bad = int(np.flatnonzero(declared != proto.genuine)[0])
        raise FormatError(f"pair {bad}: genuine flag disagrees with template subject ids")
    return proto
