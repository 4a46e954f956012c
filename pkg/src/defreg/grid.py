"""Volumetric grid types, trilinear sampling, warping and its adjoint.

Arrays are indexed ``[i, j, k]`` with ``i`` along x. Vector fields carry
their three components on a trailing axis and are expressed in voxels of
the grid they live on. Sampling clamps coordinates to ``[0, n - 1]`` per
axis before interpolating.
"""
from dataclasses import dataclass

import numpy as np

from .errors import DimsMismatch, RangeViolation


def _as_spacing(spacing):
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3 or not all(np.isfinite(s) and s > 0 for s in spacing):
        raise ValueError(f"spacing must be three positive numbers, got {spacing}")
    return spacing


def _frozen_copy(data, ndim):
    arr = np.array(data, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise DimsMismatch(f"expected a {ndim}-d array, got shape {arr.shape}")
    if arr.size == 0:
        raise DimsMismatch("empty grid")
    if not np.all(np.isfinite(arr)):
        raise RangeViolation("grid values must be finite")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Volume:
    """Scalar 3-D grid with physical spacing in millimetres per voxel."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen_copy(self.data, 3))
        object.__setattr__(self, "spacing", _as_spacing(self.spacing))

    @property
    def dims(self):
        return self.data.shape

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def is_label(self):
        return bool(np.all((self.data >= 0.0) & (self.data <= 1.0)))


@dataclass(frozen=True, eq=False)
class VectorField:
    """Per-voxel 3-vectors in voxel units; all-zero is the identity."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        arr = _frozen_copy(self.data, 4)
        if arr.shape[-1] != 3:
            raise DimsMismatch(f"vector field needs a trailing axis of 3, got {arr.shape}")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", _as_spacing(self.spacing))

    @property
    def dims(self):
        return self.data.shape[:3]

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    @classmethod
    def zeros(cls, dims, spacing=(1.0, 1.0, 1.0)):
        return cls(np.zeros(tuple(dims) + (3,)), spacing)


def check_same_dims(*grids):
    dims = [tuple(g.dims) if hasattr(g, "dims") else tuple(np.shape(g)[:3]) for g in grids]
    if any(d != dims[0] for d in dims[1:]):
        raise DimsMismatch(f"grid dimensions differ: {dims}")
    return dims[0]


def identity_grid(dims):
    """Voxel coordinates of every grid point, shape ``dims + (3,)``."""
    axes = [np.arange(n, dtype=np.float64) for n in dims]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


class _Stencil:
    """Corner indices and weights of clamped trilinear interpolation.

    Built once for a set of sample points and reused for sampling, the
    interpolant's spatial gradient and the transposed scatter.
    """

    def __init__(self, coords, dims):
        coords = np.asarray(coords, dtype=np.float64)
        self.shape = coords.shape[:-1]
        self.dims = tuple(int(n) for n in dims)
        self.size = int(np.prod(self.dims))
        lo, frac, inside = [], [], []
        for axis, n in enumerate(self.dims):
            p = coords[..., axis]
            inside.append((p >= 0.0) & (p <= n - 1))
            pc = np.clip(p, 0.0, n - 1)
            if n == 1:
                i0 = np.zeros(p.shape, dtype=np.intp)
            else:
                i0 = np.minimum(np.floor(pc), n - 2).astype(np.intp)
            lo.append(i0)
            frac.append(pc - i0)
        self.lo, self.frac, self.inside = lo, frac, inside
        nx, ny, nz = self.dims
        sx, sy = ny * nz, nz
        self.corners = []
        for dx in (0, 1):
            ix = np.minimum(lo[0] + dx, nx - 1)
            wx = frac[0] if dx else 1.0 - frac[0]
            for dy in (0, 1):
                iy = np.minimum(lo[1] + dy, ny - 1)
                wy = frac[1] if dy else 1.0 - frac[1]
                for dz in (0, 1):
                    iz = np.minimum(lo[2] + dz, nz - 1)
                    wz = frac[2] if dz else 1.0 - frac[2]
                    flat = ix * sx + iy * sy + iz
                    self.corners.append(((dx, dy, dz), flat, (wx, wy, wz)))

    def sample(self, arr):
        arr = np.asarray(arr, dtype=np.float64)
        flat = arr.reshape((self.size,) + arr.shape[3:])
        out = None
        for _, idx, (wx, wy, wz) in self.corners:
            w = wx * wy * wz
            term = flat[idx] * (w[..., None] if arr.ndim == 4 else w)
            out = term if out is None else out + term
        return out

    def gradient(self, arr):
        """d(sample)/d(coords); trailing axis is the derivative direction."""
        arr = np.asarray(arr, dtype=np.float64)
        flat = arr.reshape((self.size,) + arr.shape[3:])
        extra = arr.shape[3:]
        grad = np.zeros(self.shape + extra + (3,))
        for (dx, dy, dz), idx, (wx, wy, wz) in self.corners:
            v = flat[idx]
            sx = 1.0 if dx else -1.0
            sy = 1.0 if dy else -1.0
            sz = 1.0 if dz else -1.0
            parts = (sx * wy * wz, sy * wx * wz, sz * wx * wy)
            for axis, w in enumerate(parts):
                grad[..., axis] += v * (w[..., None] if extra else w)
        for axis, n in enumerate(self.dims):
            mask = self.inside[axis] if n > 1 else np.zeros(self.shape, dtype=bool)
            if extra:
                mask = mask[..., None]
            grad[..., axis] *= mask
        return grad

    def scatter(self, values):
        """Transpose of :meth:`sample` for scalar values per sample point."""
        values = np.asarray(values, dtype=np.float64)
        out = np.zeros(self.size)
        for _, idx, (wx, wy, wz) in self.corners:
            out += np.bincount(idx.ravel(), weights=(values * wx * wy * wz).ravel(),
                               minlength=self.size)
        return out.reshape(self.dims)


def interpolate(arr, coords):
    """Clamped trilinear sampling of a grid array at continuous coordinates."""
    arr = np.asarray(arr, dtype=np.float64)
    return _Stencil(coords, arr.shape[:3]).sample(arr)


def sample_trilinear(vol, p):
    return float(interpolate(vol, np.asarray(p, dtype=np.float64)[None])[0])


def sample_gradient(vol, p):
    """Exact gradient of the trilinear interpolant at ``p``.

    Components along axes where ``p`` lies outside the grid are zero, since
    clamping makes the sample constant in that direction.
    """
    arr = np.asarray(vol, dtype=np.float64)
    stencil = _Stencil(np.asarray(p, dtype=np.float64)[None], arr.shape)
    return stencil.gradient(arr)[0]


def warp(vol, u, interp="linear"):
    """Resample ``vol`` at ``x + u(x)``; output lives on the input grid."""
    check_same_dims(vol, u)
    coords = identity_grid(vol.dims) + np.asarray(u)
    if interp == "linear":
        out = interpolate(vol, coords)
    elif interp == "nearest":
        idx = [np.clip(np.floor(coords[..., a] + 0.5), 0, n - 1).astype(np.intp)
               for a, n in enumerate(vol.dims)]
        out = np.asarray(vol)[idx[0], idx[1], idx[2]]
    else:
        raise ValueError(f"unknown interpolation {interp!r}")
    return Volume(out, vol.spacing)


def warp_adjoint(vol, u, upstream):
    """Gradient of ``<warp(vol, u), upstream>`` with respect to ``u``."""
    check_same_dims(vol, u, upstream)
    coords = identity_grid(vol.dims) + np.asarray(u)
    grad = _Stencil(coords, vol.dims).gradient(vol)
    return VectorField(grad * np.asarray(upstream)[..., None], vol.spacing)


def pool2(arr):
    """2x2x2 mean pooling over the leading three axes, replicating odd edges."""
    arr = np.asarray(arr, dtype=np.float64)
    pad = [(0, n % 2) for n in arr.shape[:3]] + [(0, 0)] * (arr.ndim - 3)
    arr = np.pad(arr, pad, mode="edge")
    nx, ny, nz = arr.shape[:3]
    blocks = arr.reshape((nx // 2, 2, ny // 2, 2, nz // 2, 2) + arr.shape[3:])
    return blocks.mean(axis=(1, 3, 5))


def downsample2(grid):
    """Halve resolution by mean pooling; spacing doubles.

    Vector fields are pooled component-wise without unit conversion.
    """
    spacing = tuple(2.0 * s for s in grid.spacing)
    return type(grid)(pool2(grid), spacing)


def resize(arr, target_dims):
    """Trilinear resampling with corner-aligned coordinates (no unit change)."""
    arr = np.asarray(arr, dtype=np.float64)
    src = arr.shape[:3]
    axes = []
    for s, t in zip(src, target_dims):
        if s == 1 or t == 1:
            axes.append(np.zeros(t))
        else:
            axes.append(np.arange(t) * ((s - 1) / (t - 1)))
    coords = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return interpolate(arr, coords)


def upsample_field(u, target_dims):
    """Resample a displacement field onto a finer grid of ``target_dims``.

    Components are rescaled by the per-axis dim ratio so the displacement
    is expressed in voxels of the target grid.
    """
    target_dims = tuple(int(n) for n in target_dims)
    if len(target_dims) != 3 or any(t < s for t, s in zip(target_dims, u.dims)):
        raise DimsMismatch(f"target {target_dims} is smaller than source {u.dims}")
    ratio = np.array([t / s for t, s in zip(target_dims, u.dims)])
    spacing = tuple(sp / r for sp, r in zip(u.spacing, ratio))
    return VectorField(resize(u, target_dims) * ratio, spacing)
