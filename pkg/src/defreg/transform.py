"""Transformation models and their parameter-gradient pullbacks.

Each model turns its parameters into a dense displacement field (DDF) via
``ddf(dims)`` and maps a gradient with respect to that DDF back onto its
parameters via ``pullback(g)``. ``compose(a, b)`` applies ``b`` first.
"""
import math

import numpy as np

from .errors import DimsMismatch
from .grid import VectorField, _Stencil, check_same_dims, identity_grid, upsample_field

DEFAULT_STEPS = 7
MAX_STEPS = 16


def compose(a, b):
    """(a ⊕ b)(x) = b(x) + a(x + b(x))."""
    check_same_dims(a, b)
    b_arr = np.asarray(b)
    stencil = _Stencil(identity_grid(b.dims) + b_arr, b.dims)
    return VectorField(b_arr + stencil.sample(a), b.spacing)


def compose_pullback(a, b, g):
    """Gradients of ``<compose(a, b), g>`` with respect to ``a`` and ``b``."""
    check_same_dims(a, b, g)
    b_arr, g_arr = np.asarray(b), np.asarray(g)
    stencil = _Stencil(identity_grid(b.dims) + b_arr, b.dims)
    # jac[..., c, axis] = d a_c / d x_axis at x + b(x)
    jac = stencil.gradient(a)
    g_b = g_arr + np.einsum("...c,...ca->...a", g_arr, jac)
    g_a = np.stack([stencil.scatter(g_arr[..., c]) for c in range(3)], axis=-1)
    return g_a, g_b


def _check_steps(steps):
    if not isinstance(steps, (int, np.integer)) or not 0 <= steps <= MAX_STEPS:
        raise ValueError(f"steps must be an integer in [0, {MAX_STEPS}], got {steps!r}")


def _squarings(v, steps):
    _check_steps(steps)
    u = VectorField(np.asarray(v) / 2.0 ** steps, v.spacing)
    chain = [u]
    for _ in range(steps):
        u = compose(u, u)
        chain.append(u)
    return chain


def exp_svf(v, steps=DEFAULT_STEPS):
    """Exponential of a stationary velocity field by scaling and squaring."""
    return _squarings(v, steps)[-1]


def exp_svf_pullback(v, steps, g_ddf):
    """Reverse-mode transpose of :func:`exp_svf`; returns dL/dv."""
    chain = _squarings(v, steps)
    g = np.asarray(g_ddf, dtype=np.float64)
    for u in reversed(chain[:-1]):
        g_a, g_b = compose_pullback(u, u, g)
        g = g_a + g_b
    return g / 2.0 ** steps


def jacobian_det(u):
    """det(I + grad u) with central differences inside, one-sided at edges."""
    arr = np.asarray(u)
    if any(n < 2 for n in arr.shape[:3]):
        raise DimsMismatch(f"jacobian needs at least 2 voxels per axis, got {arr.shape[:3]}")
    jac = np.empty(arr.shape[:3] + (3, 3))
    for c in range(3):
        for a, d in enumerate(np.gradient(arr[..., c], axis=(0, 1, 2))):
            jac[..., c, a] = d + (1.0 if a == c else 0.0)
    return np.linalg.det(jac)


def _bspline_basis(t):
    t = np.asarray(t, dtype=np.float64)
    return np.stack([
        (1.0 - t) ** 3 / 6.0,
        (3.0 * t ** 3 - 6.0 * t ** 2 + 4.0) / 6.0,
        (-3.0 * t ** 3 + 3.0 * t ** 2 + 3.0 * t + 1.0) / 6.0,
        t ** 3 / 6.0,
    ], axis=-1)


def control_count(n, s):
    """Control points along an axis of ``n`` voxels with spacing ``s``."""
    return math.ceil((n - 1) / s) + 3


def _bspline_matrix(n, s):
    """Weights ``W[x, j]`` of control point ``j`` (at position ``(j-1)*s``) on voxel ``x``."""
    m = control_count(n, s)
    cells = max(m - 3, 1)
    x = np.arange(n)
    i = np.minimum(x // s, cells - 1)
    t = x / s - i
    w = np.zeros((n, m + 1))
    basis = _bspline_basis(t)
    for k in range(4):
        w[x, i + k] = basis[:, k]
    return w[:, :m]


class DenseDDF:
    """The displacement field is its own parameter set."""

    kind = "ddf"

    def __init__(self, u):
        self.u = u if isinstance(u, VectorField) else VectorField(u)

    @classmethod
    def zeros(cls, dims):
        return cls(VectorField.zeros(dims))

    @property
    def params(self):
        return np.asarray(self.u)

    def with_params(self, p):
        return type(self)(VectorField(p, self.u.spacing))

    def ddf(self, dims=None):
        if dims is not None and tuple(dims) != self.u.dims:
            raise DimsMismatch(f"DDF has dims {self.u.dims}, asked for {tuple(dims)}")
        return self.u

    def pullback(self, g_ddf):
        return np.asarray(g_ddf, dtype=np.float64)

    def refine(self, dims, source_dims=None):
        return type(self)(upsample_field(self.u, dims))


class SVF(DenseDDF):
    """Stationary velocity field; the DDF is its group exponential."""

    kind = "svf"

    def __init__(self, v, steps=DEFAULT_STEPS):
        super().__init__(v)
        _check_steps(steps)
        self.steps = int(steps)

    @classmethod
    def zeros(cls, dims, steps=DEFAULT_STEPS):
        return cls(VectorField.zeros(dims), steps)

    def with_params(self, p):
        return type(self)(VectorField(p, self.u.spacing), self.steps)

    def ddf(self, dims=None):
        return exp_svf(super().ddf(dims), self.steps)

    def pullback(self, g_ddf):
        return exp_svf_pullback(self.u, self.steps, g_ddf)

    def refine(self, dims, source_dims=None):
        return type(self)(upsample_field(self.u, dims), self.steps)


class BSplineFFD:
    """Cubic B-spline free-form deformation over a uniform control grid.

    Control point ``j`` along an axis sits at voxel ``(j - 1) * s``, so one
    phantom point precedes the grid and the last cell keeps full support.
    Per axis there are ``ceil((n - 1) / s) + 3`` control points.
    """

    kind = "bspline"

    def __init__(self, dims, control_spacing=4, coeffs=None):
        self.dims = tuple(int(n) for n in dims)
        if np.ndim(control_spacing) == 0:
            control_spacing = (control_spacing,) * 3
        self.control_spacing = tuple(int(s) for s in control_spacing)
        if any(s < 2 for s in self.control_spacing):
            raise ValueError(f"control spacing must be >= 2, got {self.control_spacing}")
        shape = self.grid_shape
        if coeffs is None:
            coeffs = np.zeros(shape + (3,))
        coeffs = np.array(coeffs, dtype=np.float64)
        if coeffs.shape != shape + (3,):
            raise DimsMismatch(f"coefficient grid {coeffs.shape} != {shape + (3,)}")
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("B-spline coefficients must be finite")
        self.coeffs = coeffs
        self._mats = [_bspline_matrix(n, s) for n, s in zip(self.dims, self.control_spacing)]

    @property
    def grid_shape(self):
        return tuple(control_count(n, s) for n, s in zip(self.dims, self.control_spacing))

    @property
    def params(self):
        return self.coeffs

    def with_params(self, p):
        return type(self)(self.dims, self.control_spacing, p)

    def ddf(self, dims=None):
        if dims is not None and tuple(dims) != self.dims:
            raise DimsMismatch(f"FFD targets {self.dims}, asked for {tuple(dims)}")
        return bspline_eval(self)

    def pullback(self, g_ddf):
        return bspline_pullback(self, g_ddf)

    def control_points(self):
        """Voxel coordinates of every control point, shape ``grid_shape + (3,)``."""
        axes = [(np.arange(m) - 1.0) * s for m, s in zip(self.grid_shape, self.control_spacing)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def refine(self, dims, source_dims=None):
        # approximate projection: sample the upsampled field at control points
        fine = upsample_field(bspline_eval(self), dims)
        out = type(self)(dims, self.control_spacing)
        out.coeffs = _Stencil(out.control_points(), fine.dims).sample(fine)
        return out


def bspline_eval(ffd):
    wx, wy, wz = ffd._mats
    return VectorField(np.einsum("xa,yb,zc,abcd->xyzd", wx, wy, wz, ffd.coeffs, optimize=True))


def bspline_pullback(ffd, g_ddf):
    wx, wy, wz = ffd._mats
    g = np.asarray(g_ddf, dtype=np.float64)
    if g.shape[:3] != ffd.dims:
        raise DimsMismatch(f"gradient dims {g.shape[:3]} != FFD dims {ffd.dims}")
    return np.einsum("xa,yb,zc,xyzd->abcd", wx, wy, wz, g, optimize=True)


class Affine:
    """phi(x) = A x + t on voxel coordinates; parameters are the 3x4 ``[A | t]``."""

    kind = "affine"

    def __init__(self, matrix=None):
        matrix = np.hstack([np.eye(3), np.zeros((3, 1))]) if matrix is None else matrix
        matrix = np.array(matrix, dtype=np.float64)
        if matrix.shape != (3, 4) or not np.all(np.isfinite(matrix)):
            raise ValueError(f"affine needs a finite 3x4 matrix, got shape {matrix.shape}")
        self.matrix = matrix

    @classmethod
    def zeros(cls, dims=None):
        return cls()

    @property
    def params(self):
        return self.matrix

    def with_params(self, p):
        return type(self)(p)

    def ddf(self, dims):
        x = identity_grid(dims)
        lin = self.matrix[:, :3] - np.eye(3)
        return VectorField(x @ lin.T + self.matrix[:, 3])

    def pullback(self, g_ddf):
        g = np.asarray(g_ddf, dtype=np.float64).reshape(-1, 3)
        x = identity_grid(np.shape(g_ddf)[:3]).reshape(-1, 3)
        return np.hstack([g.T @ x, g.sum(axis=0)[:, None]])

    def refine(self, dims, source_dims):
        scale = np.array([(t - 1) / (s - 1) if s > 1 else t / s
                          for t, s in zip(dims, source_dims)])
        a = self.matrix[:, :3] * scale[:, None] / scale[None, :]
        return type(self)(np.hstack([a, (self.matrix[:, 3] * scale)[:, None]]))


def ddf_of(t, dims):
    """Dense displacement field of any transform on a grid of ``dims``."""
    return t.ddf(tuple(dims))
