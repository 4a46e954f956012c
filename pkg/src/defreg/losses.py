"""Image and label dissimilarities, deformation regularizers, total objective.

Every dissimilarity ``d`` is available as ``d(fixed, warped)`` returning the
scalar loss and ``d_grad(fixed, warped)`` returning ``(loss, dloss/dwarped)``.
Regularizers take a displacement field and return ``(value, dvalue/du)``
from their ``_grad`` form.
"""
from dataclasses import dataclass

import numpy as np

from .errors import DimsMismatch, EvenWindow, MissingLabels, RangeViolation
from .grid import Volume, check_same_dims, warp, warp_adjoint

VAR_EPS = 1e-5
DICE_EPS = 1e-6
PROB_CLIP = 1e-7


def _pair(fixed, warped):
    f = np.asarray(fixed, dtype=np.float64)
    w = np.asarray(warped, dtype=np.float64)
    if f.shape != w.shape:
        raise DimsMismatch(f"fixed {f.shape} and warped {w.shape} differ")
    return f, w


def _labels(fixed, warped, tol=1e-12):
    f, w = _pair(fixed, warped)
    for name, arr in (("fixed", f), ("warped", w)):
        if arr.size and (arr.min() < -tol or arr.max() > 1.0 + tol):
            raise RangeViolation(f"{name} label values must lie in [0, 1]")
    return f, w


# -- image dissimilarity ------------------------------------------------------

def ssd_grad(fixed, warped):
    f, w = _pair(fixed, warped)
    diff = w - f
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size


def gncc_grad(fixed, warped):
    """1 - global normalized cross-correlation."""
    f, w = _pair(fixed, warped)
    n = f.size
    df, dw = f - f.mean(), w - w.mean()
    cov = np.mean(df * dw)
    var_f, var_w = np.mean(df ** 2), np.mean(dw ** 2)
    denom = np.sqrt((var_f + VAR_EPS) * (var_w + VAR_EPS))
    ncc = cov / denom
    dncc = df / (n * denom) - ncc * dw / (n * (var_w + VAR_EPS))
    return float(1.0 - ncc), -dncc


def box_sum(arr, window):
    """Sum over a cubic window truncated at the grid boundary."""
    r = window // 2
    out = np.asarray(arr, dtype=np.float64)
    for axis in range(3):
        n = out.shape[axis]
        cs = np.cumsum(out, axis=axis)
        cs = np.concatenate([np.zeros_like(np.take(cs, [0], axis=axis)), cs], axis=axis)
        idx = np.arange(n)
        hi = np.minimum(idx + r, n - 1) + 1
        lo = np.maximum(idx - r, 0)
        out = np.take(cs, hi, axis=axis) - np.take(cs, lo, axis=axis)
    return out


def _check_window(window):
    if window < 3 or window % 2 == 0:
        raise EvenWindow(f"window must be odd and >= 3, got {window}")


def lncc_grad(fixed, warped, window=9):
    """1 - mean local squared correlation over truncated cubic windows."""
    _check_window(window)
    f, w = _pair(fixed, warped)
    count = box_sum(np.ones_like(f), window)
    sf, sw = box_sum(f, window), box_sum(w, window)
    sff, sww, sfw = box_sum(f * f, window), box_sum(w * w, window), box_sum(f * w, window)
    mf, mw = sf / count, sw / count
    cov = sfw / count - mf * mw
    var_f = sff / count - mf * mf
    var_w = sww / count - mw * mw
    denom = var_f * var_w + VAR_EPS
    term = cov * cov / denom
    # partials of each voxel's term w.r.t. its window sums of w, f*w, w*w
    dcov = 2.0 * cov / denom
    dvar = -cov * cov * var_f / denom ** 2
    d_sw = (-dcov * mf - 2.0 * dvar * mw) / count
    d_sfw = dcov / count
    d_sww = dvar / count
    grad = box_sum(d_sw, window) + f * box_sum(d_sfw, window) + 2.0 * w * box_sum(d_sww, window)
    return float(1.0 - term.mean()), -grad / f.size


def _normalize(arr):
    lo, hi = arr.min(), arr.max()
    if hi <= lo:
        return np.full(arr.shape, 0.5), 0.0
    return (arr - lo) / (hi - lo), 1.0 / (hi - lo)


def _hat(values, bins):
    """Lower bin index and upper-bin weight of the linear hat kernel."""
    pos = values * (bins - 1)
    lo = np.minimum(np.floor(pos), bins - 2).astype(np.intp)
    return lo, pos - lo


def joint_histogram(fixed, warped, bins=32):
    """Partial-volume joint probability table of two min-max normalized images."""
    f, w = _pair(fixed, warped)
    fn, _ = _normalize(f.ravel())
    wn, _ = _normalize(w.ravel())
    flo, ffr = _hat(fn, bins)
    wlo, wfr = _hat(wn, bins)
    p = np.zeros(bins * bins)
    for fb, fw in ((flo, 1.0 - ffr), (flo + 1, ffr)):
        for wb, ww in ((wlo, 1.0 - wfr), (wlo + 1, wfr)):
            p += np.bincount(fb * bins + wb, weights=fw * ww, minlength=bins * bins)
    return p.reshape(bins, bins) / f.size


def _mi_table(p):
    pf, pw = p.sum(axis=1), p.sum(axis=0)
    ratio = np.zeros_like(p)
    nz = p > 0
    ratio[nz] = np.log(p[nz] / np.outer(pf, pw)[nz])
    return float(np.sum(p[nz] * ratio[nz])), ratio


def mutual_information(fixed, warped, bins=32):
    """Mutual information in nats."""
    return _mi_table(joint_histogram(fixed, warped, bins))[0]


def mi_grad(fixed, warped, bins=32):
    """Negative mutual information; normalization bounds are gradient stops."""
    if bins < 4:
        raise ValueError(f"bins must be >= 4, got {bins}")
    f, w = _pair(fixed, warped)
    p = joint_histogram(f, w, bins)
    mi, ratio = _mi_table(p)
    fn, _ = _normalize(f.ravel())
    wn, scale = _normalize(w.ravel())
    flo, ffr = _hat(fn, bins)
    wlo, _ = _hat(wn, bins)
    # dMI/dp_jk = ratio_jk - 1; the hat weights move mass from wlo to wlo + 1
    slope = np.zeros(f.size)
    for fb, fw in ((flo, 1.0 - ffr), (flo + 1, ffr)):
        slope += fw * (ratio[fb, wlo + 1] - ratio[fb, wlo])
    grad = slope * (bins - 1) * scale / f.size
    return -mi, -grad.reshape(f.shape)


# -- label dissimilarity ------------------------------------------------------

def dice_grad(fixed_label, warped_label):
    f, w = _labels(fixed_label, warped_label)
    num = 2.0 * np.sum(f * w) + DICE_EPS
    den = f.sum() + w.sum() + DICE_EPS
    return float(1.0 - num / den), -(2.0 * f * den - num) / den ** 2


def cross_entropy_grad(fixed_label, warped_label):
    f, w = _labels(fixed_label, warped_label)
    cw = np.clip(w, PROB_CLIP, 1.0 - PROB_CLIP)
    cw1 = np.clip(1.0 - w, PROB_CLIP, 1.0 - PROB_CLIP)
    value = -np.mean(f * np.log(cw) + (1.0 - f) * np.log(cw1))
    live = (w == cw).astype(float)
    live1 = ((1.0 - w) == cw1).astype(float)
    grad = -(f / cw * live - (1.0 - f) / cw1 * live1) / f.size
    return float(value), grad


def _value(fn):
    def value(*args, **kwargs):
        return fn(*args, **kwargs)[0]
    value.__name__ = fn.__name__[:-5]
    value.__doc__ = fn.__doc__
    return value


ssd = _value(ssd_grad)
gncc = _value(gncc_grad)
lncc = _value(lncc_grad)
dice = _value(dice_grad)
cross_entropy = _value(cross_entropy_grad)


def mi(fixed, warped, bins=32):
    """Negative mutual information loss."""
    return -mutual_information(fixed, warped, bins)


# -- regularizers -------------------------------------------------------------

def _diff(arr, axis):
    """np.gradient along one axis (central inside, one-sided at the ends)."""
    return np.gradient(arr, axis=axis)


def _diff_t(r, axis):
    """Adjoint of :func:`_diff`."""
    r = np.moveaxis(r, axis, 0)
    out = np.zeros_like(r)
    out[0] -= r[0]
    out[1] += r[0]
    out[-1] += r[-1]
    out[-2] -= r[-1]
    out[2:] += 0.5 * r[1:-1]
    out[:-2] -= 0.5 * r[1:-1]
    return np.moveaxis(out, 0, axis)


def gradient_l2_grad(u):
    """Mean squared first difference over voxels, components and axes."""
    arr = np.asarray(u, dtype=np.float64)
    if any(n < 2 for n in arr.shape[:3]):
        raise DimsMismatch(f"gradient_l2 needs >= 2 voxels per axis, got {arr.shape[:3]}")
    count = arr.size * 3
    value = 0.0
    grad = np.zeros_like(arr)
    for axis in range(3):
        d = _diff(arr, axis)
        value += np.sum(d * d)
        grad += _diff_t(d, axis)
    return float(value / count), 2.0 * grad / count


# (coefficient, offset) stencils of the second derivatives; weight 2 for cross terms
_SECOND = [(1.0, [(1.0, a_off), (-2.0, (0, 0, 0)), (1.0, tuple(-o for o in a_off))])
           for a_off in ((1, 0, 0), (0, 1, 0), (0, 0, 1))]
for _a, _b in ((0, 1), (0, 2), (1, 2)):
    _terms = []
    for _sa, _sb, _c in ((1, 1, 0.25), (1, -1, -0.25), (-1, 1, -0.25), (-1, -1, 0.25)):
        _off = [0, 0, 0]
        _off[_a], _off[_b] = _sa, _sb
        _terms.append((_c, tuple(_off)))
    _SECOND.append((2.0, _terms))


def _shifted(arr, off):
    nx, ny, nz = arr.shape[:3]
    return arr[1 + off[0]:nx - 1 + off[0], 1 + off[1]:ny - 1 + off[1], 1 + off[2]:nz - 1 + off[2]]


def bending_energy_grad(u):
    """Mean squared second derivatives over interior voxels and components."""
    arr = np.asarray(u, dtype=np.float64)
    if any(n < 3 for n in arr.shape[:3]):
        raise DimsMismatch(f"bending energy needs >= 3 voxels per axis, got {arr.shape[:3]}")
    count = np.prod([n - 2 for n in arr.shape[:3]]) * arr.shape[3]
    value = 0.0
    grad = np.zeros_like(arr)
    for weight, stencil in _SECOND:
        d = sum(c * _shifted(arr, off) for c, off in stencil)
        value += weight * np.sum(d * d)
        for c, off in stencil:
            _shifted(grad, off)[...] += 2.0 * weight * c * d
    return float(value / count), grad / count


gradient_l2 = _value(gradient_l2_grad)
bending_energy = _value(bending_energy_grad)


# -- objective ----------------------------------------------------------------

SIMILARITIES = ("ssd", "gncc", "lncc", "mi")
LABEL_LOSSES = ("dice", "ce")
REGULARIZERS = ("gradient_l2", "bending")


@dataclass(frozen=True)
class SimilarityKind:
    kind: str = "lncc"
    window: int = 9
    bins: int = 32

    def __post_init__(self):
        if self.kind not in SIMILARITIES:
            raise ValueError(f"unknown similarity {self.kind!r}")
        _check_window(self.window)
        if self.bins < 4:
            raise ValueError(f"bins must be >= 4, got {self.bins}")

    def grad(self, fixed, warped):
        if self.kind == "ssd":
            return ssd_grad(fixed, warped)
        if self.kind == "gncc":
            return gncc_grad(fixed, warped)
        if self.kind == "lncc":
            return lncc_grad(fixed, warped, self.window)
        return mi_grad(fixed, warped, self.bins)


@dataclass(frozen=True)
class ObjectiveWeights:
    image: float = 1.0
    label: float = 0.0
    reg: float = 0.5
    reg_kind: str = "bending"
    label_kind: str = "dice"

    def __post_init__(self):
        if min(self.image, self.label, self.reg) < 0:
            raise ValueError("weights must be non-negative")
        if not (self.image > 0 or self.label > 0):
            raise ValueError("at least one of the image and label weights must be positive")
        if self.reg_kind not in REGULARIZERS:
            raise ValueError(f"unknown regularizer {self.reg_kind!r}")
        if self.label_kind not in LABEL_LOSSES:
            raise ValueError(f"unknown label loss {self.label_kind!r}")


@dataclass(frozen=True)
class LossReport:
    total: float
    image_term: float
    label_term: float
    reg_term: float

    def as_dict(self):
        return {"total": self.total, "image": self.image_term,
                "label": self.label_term, "reg": self.reg_term}


def total_objective(fixed, moving, fixed_label, moving_label, transform, weights,
                    sim_kind=SimilarityKind()):
    """Weighted loss of a transform and its gradient with respect to the transform's parameters.

    Returns ``(LossReport, grad)`` where ``grad`` has the shape of
    ``transform.params``.
    """
    if weights.label > 0 and (fixed_label is None or moving_label is None):
        raise MissingLabels("a positive label weight needs fixed and moving labels")
    check_same_dims(fixed, moving)
    u = transform.ddf(fixed.dims)
    g_u = np.zeros(u.data.shape)

    image_term = label_term = reg_term = 0.0
    if weights.image > 0:
        warped = warp(moving, u)
        image_term, g_w = sim_kind.grad(fixed, warped)
        g_u += weights.image * np.asarray(warp_adjoint(moving, u, Volume(g_w)))
    if weights.label > 0:
        warped_label = warp(moving_label, u)
        label_fn = dice_grad if weights.label_kind == "dice" else cross_entropy_grad
        label_term, g_l = label_fn(fixed_label, warped_label)
        g_u += weights.label * np.asarray(warp_adjoint(moving_label, u, Volume(g_l)))
    if weights.reg > 0:
        reg_fn = bending_energy_grad if weights.reg_kind == "bending" else gradient_l2_grad
        reg_term, g_r = reg_fn(u)
        g_u += weights.reg * g_r

    total = weights.image * image_term + weights.label * label_term + weights.reg * reg_term
    report = LossReport(float(total), float(image_term), float(label_term), float(reg_term))
    return report, transform.pullback(g_u)
