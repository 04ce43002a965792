# # Decoder forward pass
#
# The decoder refines a set of lane anchors layer by layer. Each layer runs
# self-attention between anchors, cross-attention into a feature map, an FFN,
# the prediction heads, and an anchor update. The positional query of every
# anchor is rebuilt from its current parameters, so it follows the update.

import numpy as np

from o2slane.decoder import DecoderConfig, DecoderWeights, FeatureMap, decoder_forward
from o2slane.geometry import GeometryConfig, default_anchors

cfg = DecoderConfig()  # 6 layers, D = 256, 8 heads, 72 rows
geo = GeometryConfig()
anchors = default_anchors(192, geo)
weights = DecoderWeights.init(seed=0, cfg=cfg)

# There is no backbone here. A seeded random grid stands in for the encoder output.

fmap = FeatureMap.random(seed=1, height=10, width=25, dim=cfg.dim)
traces = decoder_forward(anchors, fmap, weights)
print(len(traces), "layers x", len(traces[0].predictions), "predictions")

# Predictions start near the anchors; the classification prior keeps scores near 0.01.

p = traces[-1].predictions[0]
print("score %.4f  start (%.3f, %.3f)  theta %.3f  length %.3f" % (p.score, p.start_x, p.start_y, p.theta, p.length))

# With the update MLP zeroed the anchors never move.

frozen = decoder_forward(anchors, fmap, weights.with_zero_update())
print("anchors fixed:", all(a == b for t in frozen for a, b in zip(anchors, t.anchors_after)))

# The decoder is equivariant over anchor order: permuting the input permutes every output.

perm = np.random.default_rng(0).permutation(192)
again = decoder_forward([anchors[i] for i in perm], fmap, weights)
same = all(again[-1].predictions[k].score == traces[-1].predictions[i].score for k, i in enumerate(perm))
print("equivariant:", same)
