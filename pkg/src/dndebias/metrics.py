"""Verification ROC analysis and group-bias measures.

Decision rule throughout: a pair is accepted as a match when its score is
``>= threshold``.  Tied scores therefore cross a threshold together, and
TPR/FPR values are exact multiples of ``1/n_genuine`` and ``1/n_impostor``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ArityError, InsufficientDataError, QuantizationError, UndefinedBPCError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RocCurve:
    """Operating points ordered by descending threshold.

    The first point has threshold ``+inf`` (nothing accepted, (0, 0)); the
    last has the minimum score as threshold (everything accepted, (1, 1)).
    """

    thresholds: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    n_genuine: int
    n_impostor: int

    @property
    def tpr(self) -> np.ndarray:
        return self.tp / self.n_genuine

    @property
    def fpr(self) -> np.ndarray:
        return self.fp / self.n_impostor

    def __len__(self) -> int:
        return len(self.thresholds)


@dataclass(frozen=True)
class OperatingPoint:
    tpr: float
    achieved_fpr: float
    threshold: float


def _scores(values, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise InsufficientDataError(f"no {what} scores")
    if not np.isfinite(arr).all():
        raise ValueError(f"non-finite {what} score")
    return arr


def build_roc(genuine, impostor) -> RocCurve:
    """ROC over every distinct score used as a threshold."""
    gen = _scores(genuine, "genuine")
    imp = _scores(impostor, "impostor")
    scores = np.concatenate([gen, imp])
    is_gen = np.concatenate([np.ones(gen.size, dtype=np.int64), np.zeros(imp.size, dtype=np.int64)])
    order = np.argsort(-scores, kind="stable")
    scores = scores[order]
    is_gen = is_gen[order]
    tp = np.cumsum(is_gen)
    fp = np.cumsum(1 - is_gen)
    # keep the last position of each run of equal scores
    last = np.flatnonzero(np.append(scores[1:] != scores[:-1], True))
    return RocCurve(
        thresholds=np.concatenate([[np.inf], scores[last]]),
        tp=np.concatenate([[0], tp[last]]),
        fp=np.concatenate([[0], fp[last]]),
        n_genuine=gen.size,
        n_impostor=imp.size,
    )


def tpr_at_fpr(roc: RocCurve, target_fpr: float, interpolate: bool = False) -> OperatingPoint:
    """TPR at the operating point with the largest FPR not exceeding ``target_fpr``.

    With ``interpolate=True`` the TPR is instead linearly interpolated between
    the bracketing operating points (for comparison with tools that do so);
    the reported threshold is still the conservative one.

    Raises:
        QuantizationError: ``target_fpr`` is below ``1 / n_impostor``.
    """
    if not 0 < target_fpr <= 1:
        raise ValueError(f"target FPR must lie in (0, 1], got {target_fpr}")
    if target_fpr < 1.0 / roc.n_impostor:
        raise QuantizationError(
            f"FPR {target_fpr:g} is below the ROC resolution 1/{roc.n_impostor}"
        )
    fpr = roc.fpr
    idx = int(np.flatnonzero(fpr <= target_fpr)[-1])
    point = OperatingPoint(float(roc.tpr[idx]), float(fpr[idx]), float(roc.thresholds[idx]))
    if not interpolate or fpr[idx] == target_fpr or idx + 1 >= len(roc):
        return point
    # points sharing fpr[idx+1] form a vertical segment; interpolate to its lowest tpr
    nxt = idx + 1
    w = (target_fpr - fpr[idx]) / (fpr[nxt] - fpr[idx])
    tpr = float(roc.tpr[idx] + w * (roc.tpr[nxt] - roc.tpr[idx]))
    return OperatingPoint(tpr, float(target_fpr), point.threshold)


def attribute_bias(tpr_a0: float, tpr_a1: float) -> float:
    """Absolute TPR gap between two same-attribute pair groups at a common FPR."""
    for v in (tpr_a0, tpr_a1):
        if not 0 <= v <= 1:
            raise ValueError(f"TPR {v} outside [0, 1]")
    return abs(tpr_a0 - tpr_a1)


def bpc(tpr: float, bias: float, tpr_deb: float, bias_deb: float) -> float:
    """Bias-performance coefficient of a de-biased system against its reference.

    Fractional bias reduction minus fractional TPR drop: 0 for the
    reference itself, 1 for zero bias at unchanged TPR.
    """
    if tpr <= 0 or bias <= 0:
        raise UndefinedBPCError(
            f"BPC undefined for reference tpr={tpr}, bias={bias} (zero denominator)"
        )
    return (bias - bias_deb) / bias - (tpr - tpr_deb) / tpr


def group_mean_std(tprs: Sequence[float]) -> tuple[float, float]:
    """Mean and population (divide-by-N) standard deviation of group TPRs."""
    arr = np.asarray(tprs, dtype=np.float64).ravel()
    if arr.size < 2:
        raise ArityError(f"need at least 2 group TPRs, got {arr.size}")
    # centring on one member first keeps constant inputs at exactly 0
    return float(arr.mean()), float((arr - arr[0]).std(ddof=0))


def group_std(tprs: Sequence[float]) -> float:
    return group_mean_std(tprs)[1]


def equalized_odds_thresholds(
    group_scores: Mapping[str, tuple], target_fpr: float
) -> dict[str, OperatingPoint]:
    """Per-group thresholds that equalise FPR at ``target_fpr``.

    Each group gets its own conservative threshold (largest FPR not above the
    target), so both groups run at the same FPR up to ROC quantization and
    the remaining TPR gap can be read off the returned points.

    Args:
        group_scores: ``{label: (genuine_scores, impostor_scores)}`` for
            exactly two groups.
        target_fpr: common FPR target.
    """
    if len(group_scores) != 2:
        raise ArityError(f"equalized odds needs exactly two groups, got {len(group_scores)}")
    out = {}
    for label, (gen, imp) in group_scores.items():
        roc = build_roc(gen, imp)
        try:
            out[label] = tpr_at_fpr(roc, target_fpr)
        except QuantizationError as exc:
            raise QuantizationError(f"group {label!r}: {exc}") from exc
    return out


# --- reports --------------------------------------------------------------------


@dataclass
class BiasRow:
    fpr: float
    tpr_overall: float
    achieved_fpr: float
    tpr_per_group: dict[str, float]
    bias: float
    bpc: float | None = None
    std: float | None = None


@dataclass
class BiasReport:
    rows: list[BiasRow]
    bias_groups: tuple[str, str]
    reference: str | None = None
    tag: str = ""
    groups: tuple[str, ...] = field(default_factory=tuple)

    def row(self, fpr: float) -> BiasRow:
        for r in self.rows:
            if r.fpr == fpr:
                return r
        raise KeyError(fpr)

    def to_dict(self) -> dict:
        return {
            "tag": self.tag,
            "reference": self.reference,
            "bias_groups": list(self.bias_groups),
            "groups": list(self.groups),
            "rows": [
                {
                    "fpr": r.fpr,
                    "tpr_overall": r.tpr_overall,
                    "achieved_fpr": r.achieved_fpr,
                    "tpr_per_group": dict(r.tpr_per_group),
                    "bias": r.bias,
                    "bpc": r.bpc,
                    "std": r.std,
                }
                for r in self.rows
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "BiasReport":
        rows = [BiasRow(**r) for r in d["rows"]]
        return cls(
            rows=rows,
            bias_groups=tuple(d["bias_groups"]),
            reference=d.get("reference"),
            tag=d.get("tag", ""),
            groups=tuple(d.get("groups", ())),
        )

    @classmethod
    def from_json(cls, text: str) -> "BiasReport":
        return cls.from_dict(json.loads(text))

    def to_table(self) -> str:
        """Aligned text table: FPR, TPR, TPR per bias group, Bias, BPC (+ STD)."""
        g0, g1 = self.bias_groups
        extra = [g for g in self.groups if g not in self.bias_groups]
        header = ["FPR", "TPR", f"TPR_{g0}", f"TPR_{g1}", *[f"TPR_{g}" for g in extra], "Bias", "BPC"]
        with_std = any(r.std is not None for r in self.rows)
        if with_std:
            header.append("STD")
        lines = [header]
        for r in self.rows:

            def cell(g):
                v = r.tpr_per_group.get(g)
                return "-" if v is None else f"{v:.3f}"

            cells = [
                f"{r.fpr:.0e}",
                f"{r.tpr_overall:.3f}",
                *[cell(g) for g in (g0, g1, *extra)],
                f"{r.bias:.3f}",
                "-" if r.bpc is None else f"{r.bpc:.3f}",
            ]
            if with_std:
                cells.append("-" if r.std is None else f"{r.std:.3f}")
            lines.append(cells)
        widths = [max(len(row[i]) for row in lines) for i in range(len(header))]
        text = ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in lines]
        title = f"# {self.tag}" + (f" (reference: {self.reference})" if self.reference else "")
        return "\n".join([title, *text]) + "\n"


def report_from_scores(
    overall: tuple,
    groups: Mapping[str, tuple],
    fpr_list: Sequence[float],
    bias_groups: tuple[str, str],
    reference: BiasReport | None = None,
    tag: str = "",
) -> BiasReport:
    """Assemble a :class:`BiasReport` from genuine/impostor score lists.

    Args:
        overall: ``(genuine, impostor)`` scores over all pairs.
        groups: ``{label: (genuine, impostor)}`` over same-label pairs.
        fpr_list: FPR targets, one report row each.
        bias_groups: the two labels whose TPR gap is the bias
            (conventionally ``(a_high, a_low)``).
        reference: un-debiased baseline report; enables BPC.
        tag: name of the evaluated system.
    """
    for g in bias_groups:
        if g not in groups:
            raise KeyError(f"bias group {g!r} has no pairs")
    roc_all = build_roc(*overall)
    rocs = {g: build_roc(*s) for g, s in groups.items()}
    rows = []
    for F in fpr_list:
        pt = tpr_at_fpr(roc_all, F)
        per_group = {}
        for g, roc in rocs.items():
            try:
                per_group[g] = tpr_at_fpr(roc, F).tpr
            except QuantizationError as exc:
                raise QuantizationError(f"group {g!r} at FPR {F:g}: {exc}") from exc
        b = attribute_bias(per_group[bias_groups[0]], per_group[bias_groups[1]])
        std = group_std(list(per_group.values())) if len(per_group) >= 3 else None
        bpc_val = None
        if reference is not None:
            ref = reference.row(F)
            try:
                bpc_val = bpc(ref.tpr_overall, ref.bias, pt.tpr, b)
            except UndefinedBPCError as exc:
                log.warning("BPC left empty at FPR %g: %s", F, exc)
        rows.append(BiasRow(F, pt.tpr, pt.achieved_fpr, per_group, b, bpc_val, std))
    return BiasReport(
        rows=rows,
        bias_groups=tuple(bias_groups),
        reference=(reference.tag or "reference") if reference is not None else None,
        tag=tag,
        groups=tuple(groups),
    )


def report_from_table(
    rows: Mapping[float, Mapping],
    bias_groups: tuple[str, str],
    reference: BiasReport | None = None,
    tag: str = "",
) -> BiasReport:
    """Report from transcribed values ``{fpr: {"tpr": .., "bias": .., "tpr_per_group": {..}}}``.

    ``bias`` is taken as given because published group TPRs are rounded and
    need not reproduce the published bias column.  It is computed from
    ``tpr_per_group`` only when omitted.
    """
    out = []
    for F, r in rows.items():
        per_group = dict(r.get("tpr_per_group", {}))
        b = r["bias"] if "bias" in r else attribute_bias(*(per_group[g] for g in bias_groups))
        bpc_val = None
        if reference is not None:
            ref = reference.row(F)
            bpc_val = bpc(ref.tpr_overall, ref.bias, r["tpr"], b)
        out.append(BiasRow(F, r["tpr"], F, per_group, b, bpc_val))
    return BiasReport(
        out,
        tuple(bias_groups),
        (reference.tag or "reference") if reference is not None else None,
        tag,
        tuple(bias_groups),
    )
