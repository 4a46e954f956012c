"""Adam, the multi-resolution registration driver, and evaluation metrics."""
import sys
import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .config import parse_config
from .errors import ConfigInvalid, CountMismatch, DimsMismatch, LandmarkOutOfBounds, ShapeMismatch
from .grid import Volume, VectorField, check_same_dims, downsample2, interpolate, warp
from .losses import ObjectiveWeights, SimilarityKind, total_objective
from .transform import SVF, Affine, BSplineFFD, DenseDDF, jacobian_det


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    lr: float
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, shape, lr):
        return cls(np.zeros(shape), np.zeros(shape), lr)


def adam_step(params, grad, state):
    """One Adam update. Returns ``(new_params, new_state)``; inputs are not modified."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape or state.m.shape != params.shape:
        raise ShapeMismatch(f"params {params.shape}, grad {grad.shape}, moments {state.m.shape}")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, AdamState(m, v, state.lr, t, state.beta1, state.beta2, state.eps)


@dataclass(frozen=True)
class PyramidSchedule:
    """Per-level iterations and learning rates, listed coarse to fine."""

    iters: tuple
    lr: tuple

    def __post_init__(self):
        if len(self.iters) < 1 or len(self.iters) != len(self.lr):
            raise ConfigInvalid("schedule needs matching non-empty iters and lr lists")
        if any(int(i) < 1 for i in self.iters) or any(r <= 0 for r in self.lr):
            raise ConfigInvalid("iterations and learning rates must be positive")

    @property
    def levels(self):
        return len(self.iters)


@dataclass(frozen=True)
class HistoryEntry:
    level: int
    iteration: int
    loss: object  # LossReport


@dataclass(frozen=True)
class RegistrationResult:
    ddf: VectorField
    transform: object
    history: tuple
    final_loss: object
    seconds: float
    config: dict
    seed: int
    metrics: dict = field(default_factory=dict)


def build_pyramid(vol, levels):
    """Index 0 is the input, the last entry is the coarsest grid."""
    out = [vol]
    for _ in range(levels - 1):
        out.append(downsample2(out[-1]))
    return out


def _initial_transform(tcfg, dims):
    kind = tcfg["kind"]
    if kind == "ddf":
        return DenseDDF.zeros(dims)
    if kind == "svf":
        return SVF.zeros(dims, tcfg["steps"])
    if kind == "bspline":
        return BSplineFFD(dims, tcfg["control_spacing"])
    return Affine()


def objective_parts(config):
    sim = config["similarity"]
    w = config["weights"]
    try:
        return (SimilarityKind(sim["kind"], sim["window"], sim["bins"]),
                ObjectiveWeights(w["image"], w["label"], w["reg"], w["reg_kind"], w["label_kind"]))
    except ValueError as exc:
        raise ConfigInvalid(str(exc)) from exc


def standardize(vol):
    """Divide by the global standard deviation so local variances sit far above the NCC floor."""
    std = float(np.asarray(vol).std())
    return vol if std == 0.0 else Volume(np.asarray(vol) / std, vol.spacing)


def _progress_line(level, it, loss):
    return (f"level={level} iter={it} total={loss.total:.9g} image={loss.image_term:.9g} "
            f"label={loss.label_term:.9g} reg={loss.reg_term:.9g}")


def register(fixed, moving, fixed_label=None, moving_label=None, config=None, seed=None,
             verbose=False):
    """Instance-optimize a transform aligning ``moving`` to ``fixed``.

    ``config`` is a config document (dict) or None for defaults. Progress
    lines go to standard error when ``verbose``.
    """
    config = parse_config(config if config is not None else {})
    seed = config["seed"] if seed is None else int(seed)
    check_same_dims(fixed, moving)
    if (fixed_label is None) != (moving_label is None):
        raise ConfigInvalid("labels must be given for both fixed and moving images or neither")
    if fixed_label is not None:
        check_same_dims(fixed, fixed_label, moving_label)
    sim, weights = objective_parts(config)
    sched = config["schedule"]
    schedule = PyramidSchedule(tuple(sched["iters"]), tuple(sched["lr"]))

    if sim.kind in ("gncc", "lncc"):
        fixed, moving = standardize(fixed), standardize(moving)

    start = time.perf_counter()
    with threadpool_limits(limits=config["threads"]):
        levels = schedule.levels
        fixed_pyr = build_pyramid(fixed, levels)
        moving_pyr = build_pyramid(moving, levels)
        if any(n < 3 for n in fixed_pyr[-1].dims):
            raise DimsMismatch(f"coarsest level {fixed_pyr[-1].dims} has fewer than 3 voxels on an axis")
        if fixed_label is not None:
            fl_pyr = build_pyramid(fixed_label, levels)
            ml_pyr = build_pyramid(moving_label, levels)
        else:
            fl_pyr = ml_pyr = [None] * levels

        transform = _initial_transform(config["transform"], fixed_pyr[-1].dims)
        history = []
        for step, level in enumerate(range(levels - 1, -1, -1)):
            dims = fixed_pyr[level].dims
            if step > 0:
                transform = transform.refine(dims, fixed_pyr[level + 1].dims)
            args = (fixed_pyr[level], moving_pyr[level], fl_pyr[level], ml_pyr[level])
            state = AdamState.fresh(np.shape(transform.params), schedule.lr[step])
            params = transform.params
            for it in range(int(schedule.iters[step])):
                loss, grad = total_objective(*args, transform, weights, sim)
                history.append(HistoryEntry(level, it, loss))
                if verbose:
                    print(_progress_line(level, it, loss), file=sys.stderr)
                params, state = adam_step(params, grad, state)
                transform = transform.with_params(params)
        final_loss, _ = total_objective(fixed, moving, fixed_label, moving_label,
                                        transform, weights, sim)
        ddf = VectorField(transform.ddf(fixed.dims), fixed.spacing)
    seconds = time.perf_counter() - start
    return RegistrationResult(ddf, transform, tuple(history), final_loss, seconds, config, seed)


# -- evaluation ---------------------------------------------------------------

def hard_dice(a, b):
    """Dice of two masks thresholded at 0.5 (0.5 counts as foreground)."""
    a = np.asarray(a) >= 0.5
    b = np.asarray(b) >= 0.5
    total = a.sum() + b.sum()
    if total == 0:
        return 1.0
    return float(2.0 * np.logical_and(a, b).sum() / total)


def jacobian_stats(ddf):
    det = jacobian_det(ddf)
    return {"min_det": float(det.min()), "frac_nonpositive": float(np.mean(det <= 0.0))}


def target_registration_error(ddf, fixed_points, moving_points, spacing=None):
    """Mean landmark distance in millimetres after mapping fixed points through ``ddf``."""
    fp = np.asarray(fixed_points, dtype=np.float64).reshape(-1, 3)
    mp = np.asarray(moving_points, dtype=np.float64).reshape(-1, 3)
    if len(fp) != len(mp):
        raise CountMismatch(f"{len(fp)} fixed landmarks vs {len(mp)} moving landmarks")
    dims = np.asarray(ddf.dims)
    if np.any(fp < 0) or np.any(fp > dims - 1):
        raise LandmarkOutOfBounds("fixed landmark outside the displacement grid")
    spacing = np.asarray(ddf.spacing if spacing is None else spacing, dtype=np.float64)
    mapped = fp + interpolate(ddf, fp)
    return float(np.mean(np.linalg.norm((mapped - mp) * spacing, axis=1)))


def evaluate(result, fixed_labels=None, moving_labels=None, landmarks=None):
    """Dice, TRE and Jacobian statistics of a registration result or DDF.

    ``fixed_labels``/``moving_labels`` are a volume or a list of volumes;
    ``landmarks`` is a ``(fixed_points, moving_points)`` pair in voxel
    coordinates.
    """
    ddf = result.ddf if isinstance(result, RegistrationResult) else result
    metrics = {}
    if fixed_labels is not None and moving_labels is not None:
        single = isinstance(fixed_labels, Volume)
        fls = [fixed_labels] if single else list(fixed_labels)
        mls = [moving_labels] if single else list(moving_labels)
        if len(fls) != len(mls):
            raise CountMismatch(f"{len(fls)} fixed labels vs {len(mls)} moving labels")
        scores = [hard_dice(f, warp(m, ddf)) for f, m in zip(fls, mls)]
        metrics["dice"] = scores[0] if single else scores
    if landmarks is not None:
        metrics["tre_mm"] = target_registration_error(ddf, *landmarks)
    metrics["jacobian"] = jacobian_stats(ddf)
    return metrics


def foreground_mask(fixed):
    """Voxels whose intensity-gradient magnitude exceeds the median."""
    grads = np.gradient(np.asarray(fixed, dtype=np.float64))
    mag = np.sqrt(sum(g * g for g in grads))
    return mag > np.median(mag)


def endpoint_error(ddf, gt_ddf, mask=None):
    """Mean Euclidean voxel distance between two displacement fields."""
    err = np.linalg.norm(np.asarray(ddf) - np.asarray(gt_ddf), axis=-1)
    return float(err[mask].mean() if mask is not None else err.mean())

