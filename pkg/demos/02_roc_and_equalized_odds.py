"""
ROC operating points and per-group thresholds
=============================================

TPR at a fixed FPR uses the conservative operating point: the largest
achievable FPR that does not exceed the target.
"""

import numpy as np

from dndebias import build_roc, equalized_odds_thresholds, tpr_at_fpr
from dndebias.errors import QuantizationError

rng = np.random.default_rng(0)
genuine = rng.normal(2.0, 1.0, 200)
impostor = rng.normal(0.0, 1.0, 2000)

roc = build_roc(genuine, impostor)
print(len(roc), "operating points, from", (float(roc.tpr[0]), float(roc.fpr[0])), "to", (float(roc.tpr[-1]), float(roc.fpr[-1])))

for F in (1e-1, 1e-2, 1e-3):
    pt = tpr_at_fpr(roc, F)
    print(f"FPR<={F:g}: TPR {pt.tpr:.3f} at achieved FPR {pt.achieved_fpr:.4f}, threshold {pt.threshold:.3f}")

# the interpolating mode exists for comparison with tools that use it
print("interpolated at 1e-2:", round(tpr_at_fpr(roc, 1e-2, interpolate=True).tpr, 4))

# targets below one impostor's worth of FPR cannot be measured
try:
    tpr_at_fpr(roc, 1e-4)
except QuantizationError as exc:
    print("QuantizationError:", exc)

# a second group whose scores are a rescaled copy of the first has zero bias
# at every FPR, yet needs its own threshold to reach the same operating point
groups = {"a": (genuine, impostor), "b": (0.5 * genuine - 0.3, 0.5 * impostor - 0.3)}
for label, pt in equalized_odds_thresholds(groups, 1e-2).items():
    print(f"group {label}: threshold {pt.threshold:+.3f}, TPR {pt.tpr:.3f}, FPR {pt.achieved_fpr:.4f}")
