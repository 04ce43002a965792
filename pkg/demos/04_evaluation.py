# # Precision, recall and F1
#
# Predictions below the score threshold are dropped. The rest are matched one
# to one against ground truth by Hungarian on Line-IoU, keeping pairs above
# the IoU threshold. Counts are summed over images before computing F1.

from o2slane.evaluation import EvalConfig, aggregate, f1, match_image, report
from o2slane.geometry import GeometryConfig, anchor_to_polyline
from o2slane.simgen import Noise, SceneSpec, gen_scene, perturb

geo = GeometryConfig()
cfg = EvalConfig(liou_threshold=0.5, score_threshold=0.5)

per_image = []
for seed in range(50):
    spec = SceneSpec(seed, 1 + seed % 4, noise=Noise(x_sigma=0.005, theta_sigma=0.01, drop_prob=0.1, clutter_count=2))
    gts = gen_scene(spec)
    preds = [(p.score, anchor_to_polyline(p.anchor(), geo)) for p in perturb(gts, spec)]
    per_image.append(match_image(preds, [g.polyline for g in gts], cfg, geo))

total = aggregate(per_image)
print(total)
print(report(total))

# A duplicate of a correct lane is a false positive, since matching is one to one.

lane = gen_scene(SceneSpec(0, 1))[0].polyline
print(match_image([(0.9, lane), (0.8, lane)], [lane], cfg, geo))
print("P/R/F:", f1(match_image([(0.9, lane), (0.8, lane)], [lane], cfg, geo)))
