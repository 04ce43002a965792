# # One-to-several assignment and the loss
#
# OTA runs once, on the last layer. Every ground truth gets a dynamic number
# of positives. Earlier layers reuse those sets with soft labels that shrink
# with depth. The last layer keeps a single Hungarian pick per ground truth.
# That single pick is why inference can skip NMS.

from o2slane.assignment import OtaConfig, one_to_several
from o2slane.decoder import LayerTrace
from o2slane.geometry import GeometryConfig
from o2slane.losses import LossWeights, loss_breakdown
from o2slane.simgen import Noise, SceneSpec, gen_scene, perfect_layers, scene_layers

geo = GeometryConfig()
spec = SceneSpec(seed=4, num_lanes=3, noise=Noise(x_sigma=0.01, theta_sigma=0.02))
gts = gen_scene(spec)

# Six layers of 192 predictions: noisy copies of the lanes (noise halves per layer) and low-score background.

traces = [LayerTrace(preds, [p.anchor() for p in preds]) for preds in scene_layers(gts, spec, 192, 6)]
assignments = one_to_several(traces, gts, OtaConfig(), geo)

for a in assignments:
    per_gt = [sum(p.gt_index == g for p in a.positives) for g in range(len(gts))]
    labels = sorted(round(p.soft_label, 3) for p in a.positives)
    print(f"layer {a.layer}: positives per gt {per_gt}, soft labels {labels}")

print("fully positive:", assignments[-1].fully_positive)

# Loss: focal classification plus Line-IoU and smooth-l1 regression, weighted (2, 2, 0.3, 1).

b = loss_breakdown(assignments, traces, gts, LossWeights(), geo)
print(f"cls {b.cls:.4f}  reg {b.reg:.4f}  total {b.total:.4f}")

# Exact predictions give a loss at rounding level.

perfect = [LayerTrace(p, [q.anchor() for q in p]) for p in perfect_layers(gts, geo, 6)]
b = loss_breakdown(one_to_several(perfect, gts, OtaConfig(), geo), perfect, gts, LossWeights(), geo)
print(f"perfect total {b.total:.2e}")
