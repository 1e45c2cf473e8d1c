"""
Bias and BPC from published table values
========================================

The bias measures only need group TPRs, so they can be checked by hand
against numbers copied from any results table.
"""

from dndebias import attribute_bias, bpc, group_mean_std
from dndebias.metrics import report_from_table

# bias is the absolute TPR gap between two same-attribute groups at one FPR
print("bias(0.869, 0.794) =", round(attribute_bias(0.869, 0.794), 3))

# BPC compares a de-biased system against its reference:
# fractional bias reduction minus fractional TPR drop
print("BPC at 1e-5:", round(bpc(0.879, 0.042, 0.825, 0.002), 3))
print("BPC at 1e-4:", round(bpc(0.914, 0.032, 0.880, 0.009), 3))

# a system compared with itself scores 0, an ideal de-biaser scores 1
print("self:", bpc(0.9, 0.05, 0.9, 0.05), " ideal:", bpc(0.9, 0.05, 0.9, 0.0))

# with three or more groups the spread is the population standard deviation
mean, std = group_mean_std([0.912, 0.883, 0.883])
print(f"light/medium/dark mean {mean:.3f}, std {std:.4f}")

# transcribed rows can be assembled into a report and printed as a table;
# bias is taken as given because rounded group TPRs need not reproduce it
reference = report_from_table(
    {1e-5: {"tpr": 0.879, "bias": 0.042, "tpr_per_group": {"male": 0.884, "female": 0.841}},
     1e-4: {"tpr": 0.914, "bias": 0.032, "tpr_per_group": {"male": 0.922, "female": 0.890}}},
    ("male", "female"), tag="baseline",
)
debiased = report_from_table(
    {1e-5: {"tpr": 0.825, "bias": 0.002}, 1e-4: {"tpr": 0.880, "bias": 0.009}},
    ("male", "female"), reference=reference, tag="debiased",
)
print(reference.to_table())
print(debiased.to_table())
