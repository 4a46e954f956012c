"""Synthetic registration cases with known ground truth.

Two kinds:

* ``sinusoid``: smooth random texture and a sinusoidal displacement whose
  normal component vanishes on every boundary face. ``moving`` is built
  so that ``warp(moving, gt_ddf) ≈ fixed``; registering moving to fixed
  should therefore recover ``gt_ddf`` itself.
* ``spheres``: a ball label and a shifted, enlarged ball, with blurred,
  noisy intensity images derived from them.
"""
from dataclasses import dataclass

import numpy as np

from .errors import SpecInvalid
from .grid import Volume, VectorField, identity_grid, interpolate, pool2, resize, warp


@dataclass(frozen=True)
class SynthSpec:
    kind: str = "sinusoid"
    size: int = 32
    amplitude: float = 3.0
    radius: float = 8.0
    offset: tuple = (4.0, 0.0, 0.0)
    scale: float = 1.15
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("sinusoid", "spheres"):
            raise SpecInvalid(f"unknown synth kind {self.kind!r}")
        if int(self.size) != self.size or self.size < 16:
            raise SpecInvalid(f"size must be an integer >= 16, got {self.size}")
        if self.kind == "sinusoid" and not 0 <= self.amplitude <= self.size / 8:
            raise SpecInvalid(f"amplitude must lie in [0, size/8], got {self.amplitude}")
        reach = self.radius * max(self.scale, 1.0) + float(np.linalg.norm(self.offset))
        if self.kind == "spheres" and not (self.radius > 0 and reach < self.size / 2):
            raise SpecInvalid("scaled radius plus offset must stay below size/2")


def smooth_noise(shape, rng):
    """White noise pooled twice by 2x2x2 means and resized back (trailing axes kept)."""
    noise = rng.standard_normal(shape)
    return resize(pool2(pool2(noise)), shape[:3])


def smooth_texture(dims, seed):
    """Smooth random intensities min-max normalized to [0, 1]."""
    tex = smooth_noise(tuple(dims), np.random.default_rng(seed))
    return (tex - tex.min()) / (tex.max() - tex.min())


def smooth_field(dims, amplitude, seed):
    """Smooth random displacement with largest component magnitude ``amplitude``."""
    field = smooth_noise(tuple(dims) + (3,), np.random.default_rng(seed))
    return VectorField(field * (amplitude / np.abs(field).max()))


def sinusoid_ddf(n, amplitude):
    """Component c is ``a * sin(pi t_c) * sin(2 pi t_{c+1})`` with ``t = x / (n - 1)``."""
    t = identity_grid((n, n, n)) / (n - 1)
    u = np.empty_like(t)
    for c in range(3):
        u[..., c] = amplitude * np.sin(np.pi * t[..., c]) * np.sin(2.0 * np.pi * t[..., (c + 1) % 3])
    return VectorField(u)


def invert_ddf(u, iterations=50):
    """Fixed-point inverse: ``w(y) = -u(y + w(y))``."""
    grid = identity_grid(u.dims)
    w = -np.asarray(u)
    for _ in range(iterations):
        w = -interpolate(u, grid + w)
    return VectorField(w, u.spacing)


def lattice_landmarks(n):
    lo, hi = n // 4, (3 * n) // 4
    return np.array([(x, y, z) for x in (lo, hi) for y in (lo, hi) for z in (lo, hi)], dtype=float)


def gen_sinusoid(spec):
    n = int(spec.size)
    fixed = Volume(smooth_texture((n, n, n), spec.seed))
    gt = sinusoid_ddf(n, spec.amplitude)
    moving = warp(fixed, invert_ddf(gt)) if spec.amplitude > 0 else fixed
    points = lattice_landmarks(n)
    moved = points + np.asarray(gt)[tuple(points.astype(int).T)]
    return {"fixed": fixed, "moving": moving, "gt_ddf": gt, "landmarks": (points, moved)}


def ball(n, center, radius):
    x = identity_grid((n, n, n))
    return (np.linalg.norm(x - np.asarray(center), axis=-1) <= radius).astype(np.float64)


def gen_spheres(spec):
    n = int(spec.size)
    rng = np.random.default_rng(spec.seed)
    center = np.full(3, (n - 1) / 2.0)
    fixed_label = ball(n, center, spec.radius)
    moving_label = ball(n, center + np.asarray(spec.offset, dtype=float), spec.radius * spec.scale)
    images = []
    for lab in (fixed_label, moving_label):
        blurred = resize(pool2(lab), lab.shape)
        images.append(blurred + 0.05 * rng.standard_normal(lab.shape))
    return {"fixed": Volume(images[0]), "moving": Volume(images[1]),
            "fixed_label": Volume(fixed_label), "moving_label": Volume(moving_label)}


def generate(spec):
    return gen_sinusoid(spec) if spec.kind == "sinusoid" else gen_spheres(spec)
