"""scikit-learn style wrapper around :func:`defreg.optim.register`."""
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import DimsMismatch
from .grid import Volume, warp
from .optim import evaluate, register


def check_volume(x, name="volume", spacing=None):
    """Accept a Volume or a 3-D array-like and return a Volume."""
    if isinstance(x, Volume):
        return x
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 3:
        raise DimsMismatch(f"{name} must be 3-D, got shape {arr.shape}")
    return Volume(arr, spacing if spacing is not None else (1.0, 1.0, 1.0))


class DeformableRegistration(TransformerMixin, BaseEstimator):
    """Pairwise instance-optimization registration.

    ``fit(fixed, moving)`` optimizes a transform taking ``moving`` onto
    ``fixed``; ``transform(image)`` resamples any image on the same grid
    through the fitted displacement. Hyper-parameters mirror the config
    document, flattened.

    Attributes set by ``fit``: ``ddf_``, ``transform_``, ``history_``,
    ``final_loss_``, ``config_``.
    """

    def __init__(self, similarity="lncc", window=9, bins=32, transform_kind="ddf", steps=7,
                 control_spacing=4, levels=3, iters=None, lr=None, weight_image=1.0,
                 weight_label=0.0, weight_reg=0.5, reg_kind="bending", label_kind="dice",
                 seed=0, threads=1, verbose=False):
        self.similarity = similarity
        self.window = window
        self.bins = bins
        self.transform_kind = transform_kind
        self.steps = steps
        self.control_spacing = control_spacing
        self.levels = levels
        self.iters = iters
        self.lr = lr
        self.weight_image = weight_image
        self.weight_label = weight_label
        self.weight_reg = weight_reg
        self.reg_kind = reg_kind
        self.label_kind = label_kind
        self.seed = seed
        self.threads = threads
        self.verbose = verbose

    def get_config(self):
        """The config document equivalent to the current parameters."""
        return {
            "similarity": {"kind": self.similarity, "window": self.window, "bins": self.bins},
            "weights": {"image": self.weight_image, "label": self.weight_label,
                        "reg": self.weight_reg, "reg_kind": self.reg_kind,
                        "label_kind": self.label_kind},
            "transform": {"kind": self.transform_kind, "steps": self.steps,
                          "control_spacing": self.control_spacing},
            "schedule": {"levels": self.levels,
                         "iters": None if self.iters is None else list(self.iters),
                         "lr": None if self.lr is None else list(self.lr)},
            "seed": self.seed,
            "threads": self.threads,
        }

    @classmethod
    def from_config(cls, config, **kwargs):
        from .config import parse_config
        cfg = parse_config(config)
        s, w, t, sch = cfg["similarity"], cfg["weights"], cfg["transform"], cfg["schedule"]
        return cls(similarity=s["kind"], window=s["window"], bins=s["bins"],
                   transform_kind=t["kind"], steps=t["steps"],
                   control_spacing=t["control_spacing"], levels=sch["levels"],
                   iters=sch["iters"], lr=sch["lr"], weight_image=w["image"],
                   weight_label=w["label"], weight_reg=w["reg"], reg_kind=w["reg_kind"],
                   label_kind=w["label_kind"], seed=cfg["seed"], threads=cfg["threads"], **kwargs)

    def fit(self, fixed, moving, fixed_label=None, moving_label=None):
        fixed = check_volume(fixed, "fixed")
        moving = check_volume(moving, "moving", fixed.spacing)
        if fixed_label is not None:
            fixed_label = check_volume(fixed_label, "fixed_label", fixed.spacing)
        if moving_label is not None:
            moving_label = check_volume(moving_label, "moving_label", fixed.spacing)
        result = register(fixed, moving, fixed_label, moving_label, config=self.get_config(),
                          verbose=self.verbose)
        self.ddf_ = result.ddf
        self.transform_ = result.transform
        self.history_ = result.history
        self.final_loss_ = result.final_loss
        self.config_ = result.config
        self.n_features_in_ = int(np.prod(fixed.dims))
        return self

    def transform(self, image, interp="linear"):
        """Warp ``image`` (same grid as the fitted pair) with the fitted displacement."""
        check_is_fitted(self, "ddf_")
        return warp(check_volume(image, "image", self.ddf_.spacing), self.ddf_, interp)

    def fit_transform(self, fixed, moving, fixed_label=None, moving_label=None):
        """Fit, then return ``moving`` warped onto ``fixed``."""
        return self.fit(fixed, moving, fixed_label, moving_label).transform(moving)

    def score(self, fixed_label, moving_label):
        """Hard Dice between ``fixed_label`` and the warped ``moving_label``."""
        check_is_fitted(self, "ddf_")
        return evaluate(self.ddf_, check_volume(fixed_label), check_volume(moving_label))["dice"]
