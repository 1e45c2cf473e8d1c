"""Score a network on a held-out dataset and assemble its bias report."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .datagen import Dataset
from .metrics import BiasReport, report_from_scores
from .model import EmbeddingNet, embed
from .protocol import PairProtocol, all_pairs_protocol, group_scores, score_pairs, templates_from_dataset


def dataset_protocol(net: EmbeddingNet, data: Dataset, template_size: int = 1) -> PairProtocol:
    """All-pairs protocol over templates of the network's embeddings."""
    return all_pairs_protocol(templates_from_dataset(data, embed(net, data.features), template_size))


def bias_report(
    protocol: PairProtocol,
    fpr_list: Sequence[float],
    bias_groups: tuple[str, str],
    reference: BiasReport | None = None,
    groups: Sequence[str] | None = None,
    tag: str = "",
) -> BiasReport:
    """Bias report for an already-built protocol (templates hold the network's embeddings)."""
    scores = score_pairs(protocol)
    overall, per_group = group_scores(protocol, scores, groups)
    return report_from_scores(overall, per_group, fpr_list, bias_groups, reference, tag)


def evaluate_network(
    net: EmbeddingNet,
    data: Dataset,
    fpr_list: Sequence[float],
    bias_groups: tuple[str, str] | None = None,
    reference: BiasReport | None = None,
    template_size: int = 1,
    tag: str = "",
) -> BiasReport:
    if bias_groups is None:
        if len(data.labels) != 2:
            raise ValueError("bias_groups must be given when the data has more than two labels")
        bias_groups = tuple(data.labels)
    present = [l for l in data.labels if np.any(data.label_mask(l))]
    proto = dataset_protocol(net, data, template_size)
    return bias_report(proto, fpr_list, bias_groups, reference, present, tag)
