"""Procedural family of smoothly deformed hair caps with known ground truth."""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from ..scene.types import TemplateMesh


@dataclass(frozen=True)
class HairstyleParams:
    """Shape knobs; the defaults give the template back.

    Args:
        volume: relative radial growth applied everywhere.
        flare: extra radial growth that increases towards the rim.
        length: downward stretch of the lower cap, as a fraction of the radius.
        sweep: sideways (x) drift of the lower cap, as a fraction of the radius.
        lift: upward drift of the crown, as a fraction of the radius.
        taper: exponent shaping how fast flare and length grow towards the rim.
        heading: direction of the sweep in the horizontal plane (radians, 0 = +x).
        twist: rotation about the vertical axis at the rim (radians), fading to 0 at the crown.
    """

    volume: float = 0.0
    flare: float = 0.0
    length: float = 0.0
    sweep: float = 0.0
    lift: float = 0.0
    taper: float = 2.0
    heading: float = 0.0
    twist: float = 0.0

    def to_vector(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)])

    @classmethod
    def sample(cls, rng: np.random.Generator, scale: float = 1.0) -> "HairstyleParams":
        return cls(volume=scale * rng.uniform(-0.05, 0.12), flare=scale * rng.uniform(0.0, 0.35),
                   length=scale * rng.uniform(0.0, 0.45), sweep=scale * rng.uniform(-0.15, 0.15),
                   lift=scale * rng.uniform(-0.05, 0.1), taper=rng.uniform(1.5, 3.0),
                   heading=rng.uniform(-np.pi, np.pi), twist=scale * rng.uniform(-0.3, 0.3))


def hairstyle_vertices(template: TemplateMesh, params: HairstyleParams, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Deform the template's vertices; the map is smooth in both the vertex and the parameters."""
    p = template.vertices - np.asarray(center, dtype=np.float64)
    r = np.linalg.norm(p, axis=1, keepdims=True)
    radius = float(np.max(r))
    u = p / np.maximum(r, 1e-12)
    depth = np.clip(0.5 * (1.0 - u[:, 1:2]), 0.0, 1.0)  # 0 at the crown, 0.5 at the equator
    crown = (1.0 - depth) ** 2
    rim = depth ** params.taper
    out = p * (1.0 + params.volume + params.flare * rim)
    angle = params.twist * depth[:, 0] ** 2
    c, s = np.cos(angle), np.sin(angle)
    x, z = out[:, 0].copy(), out[:, 2].copy()
    out[:, 0] = c * x + s * z
    out[:, 2] = -s * x + c * z
    out[:, 1:2] -= params.length * radius * rim
    out[:, 0:1] += params.sweep * radius * np.cos(params.heading) * depth ** 2
    out[:, 2:3] += params.sweep * radius * np.sin(params.heading) * depth ** 2
    out[:, 1:2] += params.lift * radius * crown
    return out + np.asarray(center, dtype=np.float64)


def hairstyle(template: TemplateMesh, params: HairstyleParams, center=(0.0, 0.0, 0.0)) -> TemplateMesh:
    return template.with_vertices(hairstyle_vertices(template, params, center))


def hairstyle_family(template: TemplateMesh, count: int, seed: int = 0, scale: float = 1.0):
    """``count`` random hairstyles (meshes, params) from a seeded generator."""
    rng = np.random.default_rng(seed)
    params = [HairstyleParams.sample(rng, scale) for _ in range(count)]
    return [hairstyle(template, p) for p in params], params
