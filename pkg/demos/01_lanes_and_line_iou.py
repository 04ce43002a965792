# # Lane anchors and Line-IoU
#
# A lane anchor is a ray from a start point plus one horizontal offset per
# sampling row. Rasterizing it gives the x position on each of the z rows,
# with a validity mask for rows the lane does not cover.

import math

import numpy as np

from o2slane.geometry import GeometryConfig, LaneAnchor, LanePolyline, anchor_to_polyline, line_iou

geo = GeometryConfig()  # 800 x 320 image, 72 rows, radius 15 px
print(geo)

# A vertical lane that starts mid-bottom and covers the lower half of the image.

a = LaneAnchor(0.5, 0.0, math.pi / 2, 0.5, np.zeros(72))
poly = anchor_to_polyline(a, geo)
print("valid rows:", int(poly.valid.sum()))
print("x on first rows:", poly.xs[:4])

# Offsets shift every row sideways by offset * width.

shifted = anchor_to_polyline(a.with_offsets(np.full(72, 0.01)), geo)
print("shift in px:", (shifted.xs - poly.xs)[poly.valid][:3])

# ## Line-IoU
#
# Each row point is widened into a segment of radius e. The per-row overlaps
# and unions are summed over rows both lanes cover. Disjoint segments give a
# negative overlap, so the score can go below zero.

def single_row(x):
    xs, valid = np.zeros(3), np.zeros(3, bool)
    xs[1], valid[1] = x, True
    return LanePolyline(xs, valid)

print("partial overlap:", line_iou(single_row(10.0), single_row(14.0), 5.0), "expected", 3 / 7)
print("disjoint:", line_iou(single_row(0.0), single_row(20.0), 5.0), "expected", -1 / 3)
print("self:", line_iou(poly, poly, 15.0))
print("vs shifted by 8 px:", round(line_iou(poly, shifted, 15.0), 4))
