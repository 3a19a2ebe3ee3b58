"""Synthetic RGB/depth scenes with a fixed, platform-independent random stream.

Random numbers come from SplitMix64::

    state += 0x9E3779B97F4A7C15            (mod 2**64)
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    return z ^ (z >> 31)

seeded with ``state = seed``; a float in [0, 1) is ``(next >> 11) * 2**-53``.

Scene recipe (all coordinates normalised to [0, 1] at pixel centres):

* ``3 + next % 6`` Gaussian bumps, each with centre ~ U(0, 1)^2,
  width ~ U(0.25, 0.5) and height ~ U(0.4, 1.0), plus a tilt plane with
  slopes ~ U(-0.4, 0.4);
* the surface is mapped linearly so its highest point sits at 20 mm and its
  lowest at 150 mm from the camera;
* the image is Lambertian shading under a light near the camera
  (offset ~ U(-0.3, 0.3) per axis) with an inverse-distance falloff
  ``20 / depth``, times an albedo of 0.8 plus three sinusoidal ripples of
  amplitude 0.06, times a tissue-like colour tint, times an exposure of 6,
  clipped to [0, 1].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .depthmap import DepthMap

MASK64 = (1 << 64) - 1
DEPTH_NEAR_MM = 20.0
DEPTH_FAR_MM = 150.0
FIELD_OF_VIEW_MM = 100.0
EXPOSURE = 6.0
ALBEDO_RIPPLE = 0.06


class SplitMix64:
    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def random(self) -> float:
        return (self.next_u64() >> 11) * 2.0 ** -53

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()


@dataclass
class Sample:
    image: np.ndarray  # H x W x 3 in [0, 1]
    depth: DepthMap

    def __post_init__(self):
        if self.image.shape[:2] != self.depth.shape:
            raise ValueError(f"image {self.image.shape} and depth {self.depth.shape} differ in size")


def synth_scene(seed: int, h: int, w: int) -> Sample:
    if h < 16 or w < 16:
        raise ValueError(f"scenes need H, W >= 16, got {h}x{w}")
    rng = SplitMix64(seed)
    y, x = np.meshgrid((np.arange(h) + 0.5) / h, (np.arange(w) + 0.5) / w, indexing="ij")

    n_bumps = 3 + rng.next_u64() % 6
    height = np.zeros((h, w))
    for _ in range(n_bumps):
        cx, cy = rng.random(), rng.random()
        sigma = rng.uniform(0.25, 0.5)
        amp = rng.uniform(0.4, 1.0)
        height += amp * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2.0 * sigma ** 2))
    height += rng.uniform(-0.4, 0.4) * x + rng.uniform(-0.4, 0.4) * y
    t = (height - height.min()) / (height.max() - height.min())
    depth = np.clip(DEPTH_FAR_MM - (DEPTH_FAR_MM - DEPTH_NEAR_MM) * t, DEPTH_NEAR_MM, DEPTH_FAR_MM)

    gy, gx = np.gradient(depth, FIELD_OF_VIEW_MM / h, FIELD_OF_VIEW_MM / w)
    light = np.array([rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), -1.0])
    light /= np.linalg.norm(light)
    lambert = (gx * light[0] + gy * light[1] - light[2]) / np.sqrt(gx ** 2 + gy ** 2 + 1.0)
    lambert = np.clip(lambert, 0.0, 1.0)

    albedo = np.full((h, w), 0.8)
    for _ in range(3):
        fx, fy = rng.uniform(2.0, 6.0), rng.uniform(2.0, 6.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        albedo += ALBEDO_RIPPLE * np.sin(2.0 * np.pi * (fx * x + fy * y) + phase)
    tint = np.array([1.0, rng.uniform(0.5, 0.65), rng.uniform(0.45, 0.6)])

    shade = albedo * lambert * (DEPTH_NEAR_MM / depth)
    image = np.clip(EXPOSURE * shade[..., None] * tint, 0.0, 1.0)
    return Sample(image, DepthMap(depth, np.ones((h, w), dtype=bool)))


def synth_dataset(n: int, seed: int, h: int, w: int) -> list[Sample]:
    """``n`` scenes seeded ``seed, seed + 1, ...``."""
    return [synth_scene(seed + i, h, w) for i in range(n)]
