"""Seeded synthetic aerial road scenes for desk-scale training and tests.

Scenes have textured ground, a few building-like rectangles, 1-4 polyline
roads of 2-8 px width, optional dark blobs sitting on roads (tree shadows) and
an optional low-contrast mode where roads take on the ground's colour. The
mask marks road pixels before occlusion.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from PIL import Image, ImageDraw
from scipy.ndimage import gaussian_filter

from .data import Sample

__all__ = ["SynthParams", "synth_road_sample", "synth_dataset"]


@dataclass(frozen=True)
class SynthParams:
    num_roads: Optional[int] = None  # None -> uniform in road_range
    road_range: Tuple[int, int] = (1, 4)
    width_range: Tuple[int, int] = (2, 8)
    occlusion_prob: float = 0.5
    max_blobs: int = 4
    low_contrast_prob: float = 0.2
    num_buildings: Tuple[int, int] = (0, 4)
    noise: float = 0.03


def _edge_point(rng, size, side):
    t = rng.uniform(0, size - 1)
    return [(t, 0.0), (size - 1.0, t), (t, size - 1.0), (0.0, t)][side]


def _polyline(rng, size):
    # reject corner-clipping stubs
    while True:
        a, b = rng.choice(4, size=2, replace=False)
        p0, p1 = np.array(_edge_point(rng, size, a)), np.array(_edge_point(rng, size, b))
        if np.hypot(*(p1 - p0)) >= 0.9 * size:
            break
    pts = [p0]
    n_mid = int(rng.integers(0, 3))
    for k in range(1, n_mid + 1):
        mid = p0 + (p1 - p0) * k / (n_mid + 1)
        pts.append(np.clip(mid + rng.normal(0, size * 0.08, 2), 0, size - 1))
    pts.append(p1)
    return [tuple(map(float, p)) for p in pts]


def _stroke(points, width, size):
    """Pixels whose centre lies within width/2 of the polyline."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dist = np.full((size, size), np.inf)
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        dx, dy = x1 - x0, y1 - y0
        t = np.clip(((xx - x0) * dx + (yy - y0) * dy) / max(dx * dx + dy * dy, 1e-12), 0.0, 1.0)
        dist = np.minimum(dist, np.hypot(xx - x0 - t * dx, yy - y0 - t * dy))
    return (dist <= width / 2).astype(np.uint8)


def synth_road_sample(seed, size=128, params=SynthParams()):
    if size < 32 or size % 32:
        raise ValueError(f"size must be a multiple of 32 and >= 32, got {size}")
    rng = np.random.default_rng(seed)

    ground = rng.uniform([0.15, 0.25, 0.1], [0.45, 0.5, 0.35])
    texture = gaussian_filter(rng.normal(0, 1, (4, size, size)), sigma=(0, 3, 3))
    texture /= texture.std(axis=(1, 2), keepdims=True) + 1e-12
    image = ground[:, None, None] + 0.06 * texture[:1] + 0.015 * texture[1:]

    for _ in range(int(rng.integers(params.num_buildings[0], params.num_buildings[1] + 1))):
        w, h = rng.integers(size // 16, size // 5, size=2)
        x, y = rng.integers(0, size - w), rng.integers(0, size - h)
        image[:, y : y + h, x : x + w] = rng.uniform(0.35, 0.8, 3)[:, None, None]

    n_roads = params.num_roads if params.num_roads is not None else int(rng.integers(params.road_range[0], params.road_range[1] + 1))
    mask = np.zeros((size, size), dtype=np.uint8)
    for _ in range(n_roads):
        width = int(rng.integers(params.width_range[0], params.width_range[1] + 1))
        mask |= _stroke(_polyline(rng, size), width, size)

    if rng.random() < params.low_contrast_prob:
        road = ground + rng.uniform(0.04, 0.08, 3)
    else:
        road = np.full(3, rng.uniform(0.5, 0.75))
    m = mask.astype(bool)
    image[:, m] = road[:, None] + 0.02 * rng.normal(0, 1, (3, int(m.sum())))

    if n_roads and rng.random() < params.occlusion_prob:
        ys, xs = np.nonzero(mask)
        shadow = Image.new("L", (size, size), 0)
        sd = ImageDraw.Draw(shadow)
        for _ in range(int(rng.integers(1, params.max_blobs + 1))):
            j = int(rng.integers(len(ys)))
            r = float(rng.uniform(2, max(3, size / 20)))
            sd.ellipse((xs[j] - r, ys[j] - r, xs[j] + r, ys[j] + r), fill=1)
        s = np.asarray(shadow, dtype=bool)
        image[:, s] = image[:, s] * 0.4 + np.array([0.02, 0.08, 0.02])[:, None]

    image = image + params.noise * rng.normal(0, 1, image.shape)
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return Sample(image, mask, f"synth-{seed}")


def synth_dataset(n, seed=0, size=128, params=SynthParams()):
    return [synth_road_sample(seed * 100_003 + i, size, params) for i in range(n)]
