"""
Do the groups get looked at the same way?
=========================================

The attention map of an input is the absolute gradient of the predicted
class logit with respect to that input.  Averaging maps per group and
comparing the averages shows how similarly a network treats the groups.
"""

import numpy as np

from dndebias import BinaryAttribute, SynthSpec, TrainSpec, generate_synthetic, run_pipeline, train_baseline
from dndebias.saliency import group_attention_similarity, group_mean_maps, input_saliency

attr = BinaryAttribute("group", "high", "low")
synth = SynthSpec(seed=0)
train, test = generate_synthetic(synth), generate_synthetic(synth, "eval")
spec = TrainSpec(epochs=50, seed=0)

base, _ = train_baseline(train, spec)
dnd = run_pipeline("dnd", train, attr, spec).deployed

# one map per input: which feature dimensions drive the decision
print("first test sample map (8 dims):", np.round(input_saliency(base, test.features[0])[:8], 3))

maps = group_mean_maps(base, test, attr)
print("baseline mean map norms:", {k: round(float(np.linalg.norm(v)), 3) for k, v in maps.items()})

for name, net in (("baseline", base), ("D&D student", dnd)):
    print(f"{name:>12}: cosine similarity of group mean maps {group_attention_similarity(net, test, attr):.3f}")
