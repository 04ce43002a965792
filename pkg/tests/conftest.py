import numpy as np
import pytest

from o2slane.decoder import DecoderConfig, DecoderWeights, FeatureMap
from o2slane.geometry import GeometryConfig, LanePolyline


@pytest.fixture
def geo():
    return GeometryConfig(image_width=800.0, image_height=320.0, num_points=72, liou_radius=15.0)


@pytest.fixture
def small_cfg():
    return DecoderConfig(num_layers=3, dim=32, num_heads=4, num_points=12)


@pytest.fixture
def small_weights(small_cfg):
    return DecoderWeights.init(11, small_cfg)


@pytest.fixture
def small_fmap(small_cfg):
    return FeatureMap.random(5, 4, 6, small_cfg.dim)


def random_polyline(rng, z, width=800.0, min_valid=1):
    xs = rng.uniform(-50.0, width + 50.0, z)
    valid = rng.random(z) < 0.7
    if valid.sum() < min_valid:
        valid[rng.choice(z, min_valid, replace=False)] = True
    return LanePolyline(xs, valid)


def as_traces(layers):
    from o2slane.decoder import LayerTrace

    return [LayerTrace(preds, [p.anchor() for p in preds]) for preds in layers]


def scene_traces(seed, lanes=4, anchors=192, layers=6, x_sigma=0.01, theta_sigma=0.02, geo=None):
    from o2slane.geometry import GeometryConfig
    from o2slane.simgen import Noise, SceneSpec, gen_scene, scene_layers

    spec = SceneSpec(seed, lanes, geo=geo or GeometryConfig(), noise=Noise(x_sigma, theta_sigma))
    gts = gen_scene(spec)
    return gts, as_traces(scene_layers(gts, spec, anchors, layers))
